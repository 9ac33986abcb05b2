"""Numerical primitives shared by the NMF and NAE models.

Matrices are plain ``float64`` numpy arrays.  Everything here is a pure
function of its inputs; ``rprop_step`` returns a fresh state instead of
mutating the one it was given.

All randomness in the package goes through :func:`make_rng`, which wraps
numpy's PCG64 bit generator (PCG-XSL-RR 128/64).  PCG64 output for a given
seed is fixed by numpy's stream-compatibility policy, so runs are
reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

EPS = 1e-12

# softplus(x) == x to double precision once exp(-x) < 2**-53 * x
_SOFTPLUS_LINEAR = 36.0


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; ``seed`` is reduced to 64 bits."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def softplus(x):
    """Elementwise ``log(1 + exp(x))``, stable for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    # log1p(exp(-|x|)) never overflows and is exact enough where exp(-|x|) is tiny
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out


def softplus_derivative(x):
    """Logistic sigmoid, the derivative of :func:`softplus`."""
    return expit(np.asarray(x, dtype=np.float64))


def softplus_inverse(y):
    """Inverse of :func:`softplus` for ``y > 0``."""
    y = np.maximum(np.asarray(y, dtype=np.float64), EPS)
    return np.where(y > _SOFTPLUS_LINEAR, y, np.log(np.expm1(np.minimum(y, _SOFTPLUS_LINEAR))))


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def kl_cost(X, Xhat) -> float:
    """Generalized KL divergence ``sum(X*(log X - log Xhat) - X + Xhat)``.

    ``Xhat`` is floored at ``EPS`` before the log.  Entries of ``X`` below
    ``EPS`` contribute ``Xhat - X`` only (the ``0 log 0 = 0`` convention).
    """
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    _check_same_shape(X, Xhat)
    Xh = np.maximum(Xhat, EPS)
    live = X >= EPS
    Xs = np.where(live, X, 1.0)
    log_term = np.where(live, X * (np.log(Xs) - np.log(Xh)), 0.0)
    return float(np.sum(log_term - X + Xh))


def kl_cost_grad(X, Xhat):
    """Derivative of :func:`kl_cost` with respect to ``Xhat``."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    _check_same_shape(X, Xhat)
    return np.where(X >= EPS, 1.0 - X / np.maximum(Xhat, EPS), 1.0)


class KLTarget:
    """:func:`kl_cost` and :func:`kl_cost_grad` against a fixed ``X``.

    Iterative fitting evaluates the cost many times against the same
    target, so the ``X log X`` part and the live-entry mask are computed
    once.  Results agree with the free functions to rounding.
    """

    def __init__(self, X):
        X = np.asarray(X, dtype=np.float64)
        live = X >= EPS
        self.X = X
        self.shape = X.shape
        self._x_live = np.where(live, X, 0.0)
        xs = np.where(live, X, 1.0)
        self._const = float(np.sum(self._x_live * np.log(xs)) - np.sum(X))

    def cost(self, Xhat) -> float:
        Xh = np.maximum(Xhat, EPS)
        return self._const + float(np.sum(Xh) - np.sum(self._x_live * np.log(Xh)))

    def grad(self, Xhat):
        return 1.0 - self._x_live / np.maximum(Xhat, EPS)


def l1_norm(H) -> float:
    """Sum of absolute values of all entries."""
    return float(np.sum(np.abs(np.asarray(H, dtype=np.float64))))


@dataclass(frozen=True)
class RPropState:
    """Per-parameter iRprop- bookkeeping.

    ``step_sizes`` and ``prev_grad_signs`` hold one array per parameter
    block, shaped like the block.
    """

    step_sizes: list
    prev_grad_signs: list
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta_init: float = 0.01
    delta_min: float = 1e-9
    delta_max: float = 1.0

    def __post_init__(self):
        if not self.eta_plus > 1.0:
            raise ValueError("eta_plus must be > 1")
        if not 0.0 < self.eta_minus < 1.0:
            raise ValueError("eta_minus must be in (0, 1)")
        if not 0.0 <= self.delta_min <= self.delta_init <= self.delta_max:
            raise ValueError("need delta_min <= delta_init <= delta_max")

    @classmethod
    def init(cls, params: Sequence[np.ndarray], **hyper) -> "RPropState":
        delta_init = hyper.get("delta_init", cls.delta_init)
        return cls(
            step_sizes=[np.full(np.shape(p), float(delta_init)) for p in params],
            prev_grad_signs=[np.zeros(np.shape(p)) for p in params],
            **hyper,
        )


def rprop_step(params, grads, state: RPropState):
    """One iRprop- update.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    """
    if not (len(params) == len(grads) == len(state.step_sizes)):
        raise ValueError(
            f"parameter count mismatch: {len(params)} params, {len(grads)} grads, "
            f"{len(state.step_sizes)} state blocks"
        )
    new_params, new_steps, new_signs = [], [], []
    for i, (p, g, step, prev) in enumerate(
        zip(params, grads, state.step_sizes, state.prev_grad_signs)
    ):
        g = np.asarray(g, dtype=np.float64)
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient block {i} has shape {np.shape(g)}, expected {np.shape(p)}")
        if np.isnan(g).any():
            raise FloatingPointError(f"NaN gradient in parameter block {i}")
        sign = np.sign(g)
        agree = sign * prev
        step = np.where(agree > 0, np.minimum(step * state.eta_plus, state.delta_max), step)
        step = np.where(agree < 0, np.maximum(step * state.eta_minus, state.delta_min), step)
        sign = np.where(agree < 0, 0.0, sign)
        new_params.append(p - sign * step)
        new_steps.append(step)
        new_signs.append(sign)
    new_state = RPropState(
        step_sizes=new_steps,
        prev_grad_signs=new_signs,
        eta_plus=state.eta_plus,
        eta_minus=state.eta_minus,
        delta_init=state.delta_init,
        delta_min=state.delta_min,
        delta_max=state.delta_max,
    )
    return new_params, new_state


def finite_difference_gradient(
    objective: Callable[[list], float], params, epsilon: float = 1e-4
) -> list:
    """Central-difference gradient of ``objective`` over every coordinate.

    Test oracle only: costs two objective evaluations per coordinate.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for p in base:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            f_plus = objective(base)
            flat[j] = orig - epsilon
            f_minus = objective(base)
            flat[j] = orig
            gflat[j] = (f_plus - f_minus) / (2.0 * epsilon)
        grads.append(g)
    return grads
