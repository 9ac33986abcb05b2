"""KL-divergence NMF with multiplicative updates.

The baseline separator: ``X ~= W @ H`` with ``W, H >= 0``, fitted by the
classical Lee-Seung updates for the generalized KL divergence.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import EPS, KLTarget, make_rng


@dataclass
class NMFModel:
    W: np.ndarray
    H: np.ndarray
    cost_trace: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.W.shape[1]


def _init_uniform(rng, shape):
    return rng.uniform(0.1, 1.1, size=shape)


def _update_H(X, W, H, lam=0.0):
    WH = np.maximum(W @ H, EPS)
    return H * (W.T @ (X / WH)) / np.maximum(W.sum(axis=0)[:, None] + lam, EPS)


def _update_W(X, W, H):
    WH = np.maximum(W @ H, EPS)
    return W * ((X / WH) @ H.T) / np.maximum(H.sum(axis=1)[None, :], EPS)


def _converged(trace, tol, patience):
    if tol <= 0 or len(trace) <= patience:
        return False
    recent = np.asarray(trace[-patience - 1 :])
    rel = np.abs(np.diff(recent)) / np.maximum(np.abs(recent[:-1]), EPS)
    return bool(np.all(rel < tol))


def canonicalize(W, H):
    """Rescale so every column of W sums to one; H absorbs the scale."""
    scale = W.sum(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return W / scale, H * scale[:, None]


def nmf_train(X, rank, iterations=500, seed=0, tol=1e-7, patience=10) -> NMFModel:
    """Factorize ``X`` into rank-``rank`` non-negative factors.

    Runs at most ``iterations`` H-then-W update sweeps and stops early once
    the relative cost change stays below ``tol`` for ``patience`` sweeps
    (``tol=0`` runs the full budget).  The returned ``cost_trace`` holds the
    cost at initialization followed by the cost after every sweep.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    if np.any(X < 0):
        raise ValueError("X must be non-negative")
    if not np.any(X > 0):
        raise ValueError("X is all zeros; nothing to factorize")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    M, N = X.shape
    if rank > min(M, N):
        warnings.warn(f"rank {rank} exceeds min(M, N) = {min(M, N)}", stacklevel=2)

    rng = make_rng(seed)
    W = _init_uniform(rng, (M, rank))
    H = _init_uniform(rng, (rank, N))
    target = KLTarget(X)
    trace = [target.cost(W @ H)]
    for _ in range(iterations):
        H = _update_H(X, W, H)
        W = _update_W(X, W, H)
        trace.append(target.cost(W @ H))
        if _converged(trace, tol, patience):
            break
    W, H = canonicalize(W, H)
    return NMFModel(W=W, H=H, cost_trace=trace)


def nmf_fit_activations(X, W, iterations=500, seed=0, lam=0.0, tol=1e-7, patience=10,
                        return_trace=False, H_init=None):
    """Fit activations for fixed bases ``W``.

    ``lam`` adds an L1 penalty on H, which enters the multiplicative update
    as an extra term in the denominator.  ``W`` is never written to.
    ``H_init`` replaces the seeded uniform initialization.
    """
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] < 1:
        raise ValueError("W must be a matrix with at least one column")
    if X.ndim != 2 or X.shape[0] != W.shape[0]:
        raise ValueError(f"X has {X.shape[0] if X.ndim == 2 else X.shape} rows, W has {W.shape[0]}")
    if np.any(X < 0):
        raise ValueError("X must be non-negative")

    shape = (W.shape[1], X.shape[1])
    if H_init is None:
        H = _init_uniform(make_rng(seed), shape)
    else:
        H = np.array(H_init, dtype=np.float64)
        if H.shape != shape or np.any(H <= 0):
            raise ValueError(f"H_init must be a strictly positive {shape} matrix")
    target = KLTarget(X)
    trace = [target.cost(W @ H) + lam * H.sum()]
    for _ in range(iterations):
        H = _update_H(X, W, H, lam)
        trace.append(target.cost(W @ H) + lam * H.sum())
        if _converged(trace, tol, patience):
            break
    if return_trace:
        return H, trace
    return H
