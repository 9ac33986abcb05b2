"""
Supervised separation of two noise bands
========================================

Two synthetic sources live in different frequency bands.  One model per
source is trained on clean clips, the decoders are fitted jointly to a
0 dB mixture, and soft masks split the mixture STFT.
"""

import numpy as np
import scipy.signal as ss

from naesep.dsp import Waveform, make_mixture
from naesep.metrics import bss_eval
from naesep.nae import TrainConfig
from naesep.numerics import make_rng
from naesep.separation import separate, train_source_model

sr = 16000


def band(seed, lo, hi, seconds=1.0):
    x = make_rng(seed).standard_normal(int(seconds * sr) + 2000)
    if lo == 0:
        sos = ss.butter(8, hi, fs=sr, output="sos")
    else:
        sos = ss.butter(8, [lo, hi], "band", fs=sr, output="sos")
    y = ss.sosfilt(sos, x)[2000:]  # drop the filter's start-up transient
    return Waveform(0.3 * y / np.abs(y).max(), sr)


low = [band(i, 0, 2000) for i in range(4)]
high = [band(100 + i, 3000, 5000) for i in range(4)]

# three clips to train on, the fourth goes into the mixture
mix, ref_low, ref_high = make_mixture(low[3], high[3], snr_db=0)

###############################################################################
# Train and separate with each model family.

for kind in ("nmf", "nae-shallow", "nae-deep"):
    models = [train_source_model(low[:3], kind, 20, TrainConfig(seed=0)),
              train_source_model(high[:3], kind, 20, TrainConfig(seed=1))]
    est = separate(mix, models, TrainConfig(lam=0.1, max_iterations=500, seed=2))
    res = bss_eval(est, [ref_low, ref_high])
    print("%-12s SDR %s  SIR %s" % (kind, np.round(res.sdr, 1), np.round(res.sir, 1)))

###############################################################################
# Masks sum to one, so the separated signals add back to the mixture.

total = est[0].samples + est[1].samples
print("relative residual %.1e" % (np.linalg.norm(total - mix.samples)
                                  / np.linalg.norm(mix.samples)))
