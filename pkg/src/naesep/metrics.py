"""BSS_EVAL source-separation metrics (SDR, SIR, SAR).

Each estimate is decomposed as ``s_target + e_interf + e_artif``:

* ``s_target`` is the least-squares projection of the estimate onto
  ``filter_len`` delayed copies (delays ``0..filter_len-1``) of its own
  reference,
* ``e_interf`` is what projecting onto the delayed copies of *all*
  references adds on top of that,
* ``e_artif`` is the remainder.

Signals are zero-padded by ``filter_len - 1`` samples so delayed copies fit.
Ratios are reported in dB and clipped to ``[-CAP_DB, CAP_DB]``; a perfect
estimate therefore scores ``CAP_DB`` instead of infinity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.signal import convolve

CAP_DB = 150.0
QUARTILE_METHOD = "linear interpolation between order statistics (Hyndman-Fan type 7)"


@dataclass
class EvalResult:
    sdr: np.ndarray
    sir: np.ndarray
    sar: np.ndarray
    mapping: list

    def as_dict(self) -> dict:
        return {
            "sdr": self.sdr.tolist(),
            "sir": self.sir.tolist(),
            "sar": self.sar.tolist(),
            "mapping": list(self.mapping),
        }


def _as_matrix(signals):
    rows = [np.asarray(getattr(s, "samples", s), dtype=np.float64).ravel() for s in signals]
    if not rows:
        raise ValueError("no signals given")
    n = max(r.size for r in rows)
    out = np.zeros((len(rows), n))
    for i, r in enumerate(rows):
        out[i, : r.size] = r
    return out


def _next_pow2(n):
    return 1 << int(np.ceil(np.log2(max(n, 1))))


class _Projector:
    """Least-squares projection onto delayed copies of a set of references.

    Holds the regularized Gram matrix of the delayed references and its
    Cholesky factor so several estimates can reuse them.
    """

    def __init__(self, refs, filter_len):
        self.refs = refs
        self.filter_len = F = filter_len
        n, T = refs.shape
        self.nfft = _next_pow2(T + F - 1)
        self.ref_f = np.fft.rfft(refs, n=self.nfft, axis=1)
        lag = (np.arange(F)[:, None] - np.arange(F)[None, :]) % self.nfft
        G = np.zeros((n * F, n * F))
        for i in range(n):
            for j in range(i, n):
                # xc[k] = sum_u r_i[u] r_j[u + k]
                xc = np.fft.irfft(np.conj(self.ref_f[i]) * self.ref_f[j], n=self.nfft)
                block = xc[lag]
                G[i * F : (i + 1) * F, j * F : (j + 1) * F] = block
                G[j * F : (j + 1) * F, i * F : (i + 1) * F] = block.T
        ridge = 1e-10 * np.trace(G) / G.shape[0]
        G += ridge * np.eye(G.shape[0])
        self.gram = G
        try:
            self._chol = linalg.cho_factor(G, lower=True, check_finite=False)
            if not np.all(np.isfinite(self._chol[0])):
                raise linalg.LinAlgError("non-finite factor")
            # a pivot made almost entirely of ridge means a null direction
            if np.min(np.diag(self._chol[0]) ** 2) < 100 * ridge:
                warnings.warn("reference Gram matrix is rank deficient; regularized",
                              stacklevel=3)
        except linalg.LinAlgError:
            warnings.warn("reference Gram matrix is rank deficient; using least squares",
                          stacklevel=3)
            self._chol = None

    def coefficients(self, est):
        F = self.filter_len
        est_f = np.fft.rfft(est, n=self.nfft)
        D = np.concatenate(
            [np.fft.irfft(np.conj(rf) * est_f, n=self.nfft)[:F] for rf in self.ref_f]
        )
        if self._chol is not None:
            C = linalg.cho_solve(self._chol, D, check_finite=False)
        else:
            C = np.linalg.lstsq(self.gram, D, rcond=None)[0]
        return C.reshape(len(self.refs), F)

    def project(self, est):
        T = self.refs.shape[1]
        C = self.coefficients(est)
        out = np.zeros(T + self.filter_len - 1)
        for c, r in zip(C, self.refs):
            out += convolve(c, r)
        return out


def _ratio_db(num, den):
    if den <= 0 or num > den * 10.0 ** (CAP_DB / 10.0):
        return CAP_DB
    if num <= den * 10.0 ** (-CAP_DB / 10.0):
        return -CAP_DB
    return float(10.0 * np.log10(num / den))


def bss_decompose(estimates, references, filter_len=512):
    """Return ``[(s_target, e_interf, e_artif), ...]``, one tuple per estimate."""
    if filter_len < 1:
        raise ValueError("filter_len must be >= 1")
    refs = _as_matrix(references)
    est = _as_matrix(estimates)
    if est.shape[0] != refs.shape[0]:
        raise ValueError(f"{est.shape[0]} estimates for {refs.shape[0]} references")
    T = refs.shape[1]
    if est.shape[1] < T:
        est = np.pad(est, ((0, 0), (0, T - est.shape[1])))
    est = est[:, :T]
    for i, r in enumerate(refs):
        if not np.any(r):
            raise ValueError(f"reference {i} is silent")
    everything = _Projector(refs, filter_len)
    parts = []
    for j in range(refs.shape[0]):
        own = _Projector(refs[j : j + 1], filter_len)
        e = est[j]
        s_target = own.project(e)
        p_all = everything.project(e)
        e_interf = p_all - s_target
        e_artif = -p_all
        e_artif[:T] += e
        parts.append((s_target, e_interf, e_artif))
    return parts


def bss_eval(estimates, references, filter_len=512) -> EvalResult:
    """SDR/SIR/SAR in dB for ``estimates[i]`` against ``references[i]``."""
    sdr, sir, sar = [], [], []
    for s_target, e_interf, e_artif in bss_decompose(estimates, references, filter_len):
        t = float(np.sum(s_target**2))
        sdr.append(_ratio_db(t, float(np.sum((e_interf + e_artif) ** 2))))
        sir.append(_ratio_db(t, float(np.sum(e_interf**2))))
        sar.append(_ratio_db(float(np.sum((s_target + e_interf) ** 2)),
                             float(np.sum(e_artif**2))))
    n = len(sdr)
    return EvalResult(np.array(sdr), np.array(sir), np.array(sar), list(range(n)))


def median_iqr(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to aggregate")
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return {"median": float(med), "q25": float(q25), "q75": float(q75), "n": int(v.size)}


def median_aggregate(results) -> dict:
    """Median and interquartile range of every metric, pooled over sources."""
    results = list(results)
    if not results:
        raise ValueError("no results to aggregate")
    summary = {
        name: median_iqr(np.concatenate([np.atleast_1d(getattr(r, name)) for r in results]))
        for name in ("sdr", "sir", "sar")
    }
    summary["quartile_method"] = QUARTILE_METHOD
    return summary
