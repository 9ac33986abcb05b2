"""
Five notes, four pitches
========================

A toy piano line D, Eb, G, F#, G is decomposed three ways: KL-NMF, a
non-negative autoencoder without sparsity, and the same autoencoder with
an L1 penalty on its code.  NMF and the sparse autoencoder both end up
with one component per pitch.
"""

import numpy as np

from naesep.dsp import stft
from naesep.harness import (best_permutation_match, correlation, cosine_similarity,
                            generate_toy_notes)
from naesep.nae import TrainConfig, nae_forward, nae_train
from naesep.nmf import nmf_train

toy = generate_toy_notes(seed=0)
X = stft(toy.waveform).magnitude
print("spectrogram", X.shape, "pitches", toy.pitch_names)

###############################################################################
# NMF with four components.  Its bases are compared with the true pitch
# spectra, best matching first.

nmf = nmf_train(X, 4, iterations=500, seed=0)
cos, perm = best_permutation_match(nmf.W.T, toy.templates.T, cosine_similarity)
print("NMF      worst template cosine %.3f" % cos)

###############################################################################
# The autoencoder's code H plays the role of NMF's activations.  Its rows
# are compared with the true note gates.

for lam in (0.0, 0.1):
    model = nae_train(X, [X.shape[0], 4, X.shape[0]], TrainConfig(lam=lam, seed=0))
    H = nae_forward(model, X).H
    corr, perm = best_permutation_match(H, toy.gates, correlation)
    print("NAE lam=%.1f  worst gate correlation %.3f  (cost %.1f)"
          % (lam, corr, model.final_cost))

###############################################################################
# A crude text picture of the sparse code: one row per unit, one column
# per 8 frames, darker for larger activation.

shades = " .:-=+*#%@"
step = 8
for row in H:
    cols = row[: row.size // step * step].reshape(-1, step).mean(axis=1)
    idx = np.minimum((cols / cols.max() * (len(shades) - 1)).astype(int), len(shades) - 1)
    print("".join(shades[i] for i in idx))
