"""Supervised separation with pre-trained per-source models.

One model is trained per source class on clean examples and only its
decoder (or NMF basis) is kept.  A mixture is explained by fitting all
decoders jointly with their weights frozen, and the per-source magnitude
estimates become soft masks on the mixture STFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import persist
from .dsp import Waveform, mask_reconstruct, stft
from .nae import Decoder, TrainConfig, fit_latents_joint, nae_train
from .nmf import nmf_fit_activations, nmf_train
from .numerics import EPS, kl_cost, make_rng

KINDS = ("nmf", "nae-shallow", "nae-deep")


@dataclass
class SourceModel:
    kind: str
    weights: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")

    @property
    def latent_size(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_bins(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def decoder(self) -> Decoder:
        if self.kind == "nmf":
            raise TypeError("NMF models have a basis, not a decoder")
        return Decoder(self.weights)

    @property
    def basis(self) -> np.ndarray:
        if self.kind != "nmf":
            raise TypeError("only NMF models have a basis matrix")
        return self.weights[0]

    def save(self, path) -> None:
        persist.save_weights(path, self.kind, self.weights, self.meta)

    @classmethod
    def load(cls, path) -> "SourceModel":
        kind, weights, header = persist.load_weights(path)
        meta = {k: v for k, v in header.items()
                if k not in ("kind", "shapes", "dtype", "order", "endianness")}
        return cls(kind=kind, weights=weights, meta=meta)


@dataclass
class MixtureFit:
    latents: list
    estimates: list
    cost: float
    cost_trace: list = field(default_factory=list)


def layer_sizes_for(kind, n_bins, size, depth=2) -> list:
    if kind == "nae-shallow":
        return [n_bins, size, n_bins]
    if kind == "nae-deep":
        return [n_bins] + [size] * (2 * depth - 1) + [n_bins]
    raise ValueError(f"{kind!r} is not an autoencoder kind")


def training_spectrogram(waves, n_fft=512, hop=None) -> np.ndarray:
    """Magnitude spectrograms of all clips, concatenated along time."""
    waves = list(waves)
    if not waves:
        raise ValueError("need at least one training waveform")
    mags = []
    for i, w in enumerate(waves):
        if not np.any(w.samples):
            raise ValueError(f"training waveform {i} is silent")
        mags.append(stft(w, n_fft, hop).magnitude)
    return np.concatenate(mags, axis=1)


def train_source_model(waves, kind, size, config: TrainConfig | None = None, depth=2,
                       n_fft=512, hop=None, nmf_iterations=500) -> SourceModel:
    """Train a model of one source class and keep only its decoder.

    ``size`` is the NMF rank or the width of every hidden layer.  NAE
    training uses ``config``; NMF uses ``nmf_iterations`` and ``config.seed``.
    """
    config = config or TrainConfig()
    hop = n_fft // 4 if hop is None else hop
    waves = list(waves)
    X = training_spectrogram(waves, n_fft, hop)
    meta = {
        "seed": int(config.seed), "size": int(size), "n_fft": int(n_fft), "hop": int(hop),
        "sample_rate": int(waves[0].sample_rate), "n_frames": int(X.shape[1]),
    }
    if kind == "nmf":
        model = nmf_train(X, size, iterations=nmf_iterations, seed=config.seed)
        meta.update(iterations=len(model.cost_trace) - 1, final_cost=model.cost_trace[-1],
                    lam=0.0, depth=1)
        return SourceModel("nmf", [model.W], meta)
    sizes = layer_sizes_for(kind, X.shape[0], size, depth)
    model = nae_train(X, sizes, config)
    meta.update(iterations=len(model.cost_trace) - 1, final_cost=model.final_cost,
                lam=float(config.lam), depth=model.depth, layer_sizes=sizes)
    return SourceModel(kind, [w.copy() for w in model.weights[model.depth:]], meta)


def _slot_seeds(config, seeds, n):
    """One initialization seed per model slot, ``config.seed + k`` by default."""
    seeds = [config.seed + k for k in range(n)] if seeds is None else list(seeds)
    if len(seeds) != n:
        raise ValueError(f"need one seed per model, got {len(seeds)} for {n}")
    return seeds


def mixture_fit(models, mix_mag, config: TrainConfig | None = None, seeds=None,
                nmf_iterations=500) -> MixtureFit:
    """Explain ``mix_mag`` as a sum of one output per model.

    Autoencoder models: joint iRprop- over softplus-parameterized latents of
    all decoders.  NMF models: multiplicative activation updates on the
    stacked basis ``[W_1 W_2 ...]``, split by rows afterwards.  Both
    minimize ``kl_cost + lam * sum_k sum(H_k)``, and both initialize slot
    ``k`` from ``seeds[k]`` so reordering the models reorders the result.
    """
    config = config or TrainConfig()
    models = list(models)
    X = np.asarray(mix_mag, dtype=np.float64)
    if not models:
        raise ValueError("need at least one model")
    for k, m in enumerate(models):
        if m.n_bins != X.shape[0]:
            raise ValueError(f"model {k} covers {m.n_bins} bins, mixture has {X.shape[0]}")
    kinds = {m.kind == "nmf" for m in models}
    if len(kinds) > 1:
        raise ValueError("cannot fit NMF and autoencoder models jointly")

    if models[0].kind == "nmf":
        W = np.concatenate([m.basis for m in models], axis=1)
        seeds = _slot_seeds(config, seeds, len(models))
        H0 = np.concatenate([make_rng(s).uniform(0.1, 1.1, (m.latent_size, X.shape[1]))
                             for m, s in zip(models, seeds)])
        H, trace = nmf_fit_activations(X, W, iterations=nmf_iterations, lam=config.lam,
                                       return_trace=True, H_init=H0)
        bounds = np.cumsum([0] + [m.latent_size for m in models])
        latents = [H[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        estimates = [m.basis @ h for m, h in zip(models, latents)]
        return MixtureFit(latents, estimates, trace[-1], trace)

    decoders = [m.decoder for m in models]
    latents, estimates, trace = fit_latents_joint(decoders, X, config,
                                                  seeds=_slot_seeds(config, seeds, len(models)),
                                                  return_trace=True)
    return MixtureFit(latents, estimates, trace[-1], trace)


def joint_cost(fit: MixtureFit, mix_mag, lam) -> float:
    return kl_cost(mix_mag, sum(fit.estimates)) + lam * float(sum(np.sum(h) for h in fit.latents))


def separate(mixture: Waveform, models, config: TrainConfig | None = None, seeds=None,
             nmf_iterations=500, return_fit=False):
    """STFT the mixture, fit the models, and soft-mask one waveform per model."""
    models = list(models)
    framing = {(m.meta.get("n_fft", 512), m.meta.get("hop", 128)) for m in models}
    if len(framing) != 1:
        raise ValueError(f"models use different STFT framings: {sorted(framing)}")
    n_fft, hop = framing.pop()
    spec = stft(mixture, n_fft, hop)
    fit = mixture_fit(models, spec.magnitude, config, seeds=seeds,
                      nmf_iterations=nmf_iterations)
    # NMF outputs can underflow to exact zeros
    mags = [np.maximum(e, EPS) for e in fit.estimates]
    waves = mask_reconstruct(mags, spec)
    if return_fit:
        return waves, fit
    return waves
