"""Non-negative autoencoders.

A model with depth ``L`` is a stack of ``2L`` weight matrices, each followed
by a softplus::

    Y_0 = X,   Y_i = softplus(W_i @ Y_{i-1}),   H = Y_L,   Xhat = Y_2L

Layer sizes must be symmetric about the middle, so the first ``L`` layers
form an encoder and the last ``L`` a decoder.  Weights are signed; the code
``H`` and the reconstruction are strictly positive because of the softplus.

Training minimizes ``kl_cost(X, Xhat) + lam * sum(H)`` with full-batch
iRprop-.  Latent fitting freezes a decoder and solves for its input instead,
with the input parameterized as ``H = softplus(Z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import persist
from .numerics import (
    EPS,
    KLTarget,
    RPropState,
    kl_cost,
    kl_cost_grad,
    make_rng,
    rprop_step,
    softplus,
    softplus_derivative,
)


@dataclass
class TrainConfig:
    lam: float = 0.1
    max_iterations: int = 2000
    tol: float = 1e-6
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")


@dataclass
class ForwardCache:
    """Pre-activations ``A_1..A_2L`` and outputs ``Y_0..Y_2L`` of one pass."""

    pre: list
    post: list

    @property
    def depth(self) -> int:
        return len(self.pre) // 2

    @property
    def H(self):
        return self.post[self.depth]

    @property
    def Xhat(self):
        return self.post[-1]


@dataclass
class Decoder:
    weights: list

    @property
    def latent_size(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_size(self) -> int:
        return self.weights[-1].shape[0]

    def __call__(self, H):
        return decoder_forward(self.weights, H)[1][-1]


@dataclass
class NAEModel:
    weights: list
    seed: int = 0
    lam: float = 0.0
    cost_trace: list = field(default_factory=list)

    def __post_init__(self):
        check_layer_sizes(layer_sizes_of(self.weights))

    @property
    def depth(self) -> int:
        return len(self.weights) // 2

    @property
    def layer_sizes(self) -> list:
        return layer_sizes_of(self.weights)

    @property
    def final_cost(self):
        return self.cost_trace[-1] if self.cost_trace else None

    @property
    def encoder_weights(self) -> list:
        return self.weights[: self.depth]

    def decoder(self) -> Decoder:
        return Decoder([w.copy() for w in self.weights[self.depth :]])

    def save(self, path) -> None:
        persist.save_weights(
            path,
            "nae",
            self.weights,
            {
                "layer_sizes": self.layer_sizes,
                "seed": int(self.seed),
                "lam": float(self.lam),
                "final_cost": self.final_cost,
                "iterations": max(len(self.cost_trace) - 1, 0),
            },
        )

    @classmethod
    def load(cls, path) -> "NAEModel":
        kind, weights, header = persist.load_weights(path)
        if kind != "nae":
            raise ValueError(f"{path}: expected an NAE model, found {kind!r}")
        trace = [] if header.get("final_cost") is None else [header["final_cost"]]
        return cls(weights=weights, seed=header.get("seed", 0), lam=header.get("lam", 0.0),
                   cost_trace=trace)


def layer_sizes_of(weights) -> list:
    sizes = [weights[0].shape[1]]
    for i, w in enumerate(weights):
        if w.ndim != 2 or w.shape[1] != sizes[-1]:
            raise ValueError(f"weight {i} has shape {w.shape}, expected (*, {sizes[-1]})")
        sizes.append(w.shape[0])
    return sizes


def check_layer_sizes(sizes) -> None:
    sizes = list(sizes)
    if len(sizes) < 3 or len(sizes) % 2 == 0:
        raise ValueError(f"need 2L+1 layer sizes with L >= 1, got {sizes}")
    if sizes != sizes[::-1]:
        raise ValueError(f"layer sizes must be symmetric, got {sizes}")
    if min(sizes) < 1:
        raise ValueError("layer sizes must be positive")


def init_model(layer_sizes, seed=0) -> NAEModel:
    """Glorot-uniform initialization: ``U[-a, a]``, ``a = sqrt(6/(fan_in+fan_out))``."""
    check_layer_sizes(layer_sizes)
    rng = make_rng(seed)
    weights = []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
    return NAEModel(weights=weights, seed=seed)


def _forward(weights, Y0):
    pre, post = [], [Y0]
    for W in weights:
        A = W @ post[-1]
        pre.append(A)
        post.append(softplus(A))
    return pre, post


def nae_forward(model: NAEModel, X) -> ForwardCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != model.layer_sizes[0]:
        raise ValueError(f"X has shape {X.shape}, model expects {model.layer_sizes[0]} rows")
    pre, post = _forward(model.weights, X)
    return ForwardCache(pre=pre, post=post)


def decoder_forward(weights, H):
    """Run decoder layers on ``H``; returns ``(pre, post)`` with ``post[0] = H``."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != weights[0].shape[1]:
        raise ValueError(f"H has shape {H.shape}, decoder expects {weights[0].shape[1]} rows")
    return _forward(weights, H)


def _backward(weights, pre, post, d_out, extra=None, want_weight_grads=True):
    """Backpropagate ``d_out = dL/dpost[-1]`` through the stack.

    ``extra`` maps a layer index ``i`` to an additional gradient on
    ``post[i]``.  Returns ``(weight_grads, dL/dpost[0])``; the input
    gradient is ``None`` when weight gradients are requested, unless
    ``extra`` has an entry for layer 0.
    """
    extra = extra or {}
    grads = [None] * len(weights)
    dY = d_out
    for i in range(len(weights), 0, -1):
        if i in extra:
            dY = dY + extra[i]
        dA = dY * softplus_derivative(pre[i - 1])
        if want_weight_grads:
            grads[i - 1] = dA @ post[i - 1].T
            if i == 1 and 0 not in extra:
                return grads, None  # the input gradient is not wanted
        dY = weights[i - 1].T @ dA
    if 0 in extra:
        dY = dY + extra[0]
    return grads, dY


def nae_objective(weights, X, lam) -> float:
    """Training objective ``kl_cost(X, Xhat) + lam * sum(H)``."""
    _, post = _forward(weights, np.asarray(X, dtype=np.float64))
    return kl_cost(X, post[-1]) + lam * float(np.sum(post[len(weights) // 2]))


def nae_gradients(model: NAEModel, X, lam, cache: ForwardCache | None = None) -> list:
    """Analytic gradient of the training objective for every weight matrix."""
    if cache is None:
        cache = nae_forward(model, X)
    d_out = kl_cost_grad(X, cache.Xhat)
    L = cache.depth
    extra = {L: np.full_like(cache.H, lam)} if lam else None
    grads, _ = _backward(model.weights, cache.pre, cache.post, d_out, extra)
    return grads


def _converged(trace, tol, patience):
    if tol <= 0 or len(trace) <= patience:
        return False
    recent = np.asarray(trace[-patience - 1 :])
    rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[:-1]), EPS)
    return bool(np.all(rel < tol))


def nae_train(X, layer_sizes, config: TrainConfig | None = None) -> NAEModel:
    """Full-batch iRprop- training.

    ``cost_trace[0]`` is the objective at initialization and each later
    entry the objective after one update.  The weights of the last update
    are returned.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    if np.any(X < 0):
        raise ValueError("X must be non-negative")
    layer_sizes = list(layer_sizes)
    if layer_sizes[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but layer_sizes[0] = {layer_sizes[0]}")
    model = init_model(layer_sizes, config.seed)
    weights = model.weights
    L = model.depth
    state = RPropState.init(weights)
    target = KLTarget(X)
    trace = []
    for it in range(config.max_iterations + 1):
        pre, post = _forward(weights, X)
        H, Xhat = post[L], post[-1]
        cost = target.cost(Xhat) + config.lam * float(np.sum(H))
        if not np.isfinite(cost):
            raise FloatingPointError(f"non-finite training cost at iteration {it}")
        trace.append(cost)
        if it == config.max_iterations or _converged(trace, config.tol, config.patience):
            break
        extra = {L: np.full_like(H, config.lam)} if config.lam else None
        grads, _ = _backward(weights, pre, post, target.grad(Xhat), extra)
        weights, state = rprop_step(weights, grads, state)
    return NAEModel(weights=weights, seed=config.seed, lam=config.lam, cost_trace=trace)


def init_latents(shape, seed):
    """Latent pre-image ``Z ~ U[-0.1, 0.1]``; the latent itself is ``softplus(Z)``."""
    return make_rng(seed).uniform(-0.1, 0.1, size=shape)


def fit_latents_joint(decoders, X, config: TrainConfig, seeds=None, return_trace=False):
    """Jointly fit one latent per decoder so the decoder outputs sum to ``X``.

    Minimizes ``kl_cost(X, sum_k dec_k(H_k)) + lam * sum_k sum(H_k)`` over
    ``Z_k`` with ``H_k = softplus(Z_k)``.  Decoder weights are only read.
    ``seeds`` gives one latent-initialization seed per decoder (default
    ``config.seed + k``).  Returns ``(latents, outputs)`` and optionally the
    cost trace.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    for k, dec in enumerate(decoders):
        if dec.output_size != X.shape[0]:
            raise ValueError(
                f"decoder {k} outputs {dec.output_size} rows, mixture has {X.shape[0]}"
            )
    N = X.shape[1]
    if seeds is None:
        seeds = [config.seed + k for k in range(len(decoders))]
    if len(seeds) != len(decoders):
        raise ValueError("need one seed per decoder")
    Zs = [init_latents((dec.latent_size, N), s) for dec, s in zip(decoders, seeds)]
    state = RPropState.init(Zs)
    target = KLTarget(X)
    trace = []
    for it in range(config.max_iterations + 1):
        Hs = [softplus(Z) for Z in Zs]
        passes = [decoder_forward(dec.weights, H) for dec, H in zip(decoders, Hs)]
        Xhat = sum(post[-1] for _, post in passes)
        cost = target.cost(Xhat) + config.lam * float(sum(np.sum(H) for H in Hs))
        if not np.isfinite(cost):
            raise FloatingPointError(f"non-finite fitting cost at iteration {it}")
        trace.append(cost)
        if it == config.max_iterations or _converged(trace, config.tol, config.patience):
            break
        d_out = target.grad(Xhat)
        grads = []
        for dec, (pre, post), Z in zip(decoders, passes, Zs):
            _, dH = _backward(dec.weights, pre, post, d_out, want_weight_grads=False)
            grads.append((dH + config.lam) * softplus_derivative(Z))
        Zs, state = rprop_step(Zs, grads, state)
    Hs = [softplus(Z) for Z in Zs]
    outputs = [dec(H) for dec, H in zip(decoders, Hs)]
    if return_trace:
        return Hs, outputs, trace
    return Hs, outputs


def nae_fit_latents(decoder: Decoder, X, config: TrainConfig | None = None,
                    return_trace=False):
    """Estimate the decoder input ``H`` that best explains ``X``."""
    config = config or TrainConfig()
    out = fit_latents_joint([decoder], X, config, return_trace=return_trace)
    if return_trace:
        return out[0][0], out[2]
    return out[0][0]
