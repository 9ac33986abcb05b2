import numpy as np
import pytest

from naesep.metrics import (
    CAP_DB,
    _Projector,
    bss_decompose,
    bss_eval,
    median_aggregate,
    median_iqr,
    EvalResult,
)
from naesep.numerics import make_rng


def orthogonal_pair(n=2000, seed=0):
    q, _ = np.linalg.qr(make_rng(seed).standard_normal((n, 2)))
    return q.T * np.sqrt(n)  # equal power, exactly orthogonal up to rounding


def brute_projection(refs, est, F):
    """Least squares onto an explicitly built matrix of delayed references."""
    n, T = refs.shape
    A = np.zeros((T + F - 1, n * F))
    for i in range(n):
        for d in range(F):
            A[d : d + T, i * F + d] = refs[i]
    target = np.concatenate([est, np.zeros(F - 1)])
    return A @ np.linalg.lstsq(A, target, rcond=None)[0]


@pytest.mark.parametrize("F", [1, 3, 16])
def test_projection_matches_brute_force(F):
    rng = make_rng(F)
    refs = rng.standard_normal((2, 120))
    est = rng.standard_normal(120)
    fast = _Projector(refs, F).project(est)
    np.testing.assert_allclose(fast, brute_projection(refs, est, F), atol=1e-7)


def test_exact_match_hits_cap():
    refs = make_rng(1).standard_normal((2, 4000))
    r = bss_eval(refs, refs)
    assert np.all(r.sdr == CAP_DB) and np.all(r.sir == CAP_DB) and np.all(r.sar == CAP_DB)


def test_orthogonal_interference_closed_form():
    r1, r2 = orthogonal_pair()
    res = bss_eval([r1 + 0.1 * r2, r2], [r1, r2], filter_len=1)
    assert res.sir[0] == pytest.approx(20.0, abs=0.1)
    assert res.sar[0] == CAP_DB
    # closed form: SDR = 10 log10(|r1|^2 / |0.1 r2|^2)
    assert res.sdr[0] == pytest.approx(20.0, abs=1e-6)


def test_closed_form_two_vector_oracle():
    rng = make_rng(2)
    r1, r2 = rng.standard_normal((2, 3000))
    est = 0.7 * r1 + 0.3 * r2 + 0.05 * rng.standard_normal(3000)
    res = bss_eval([est, r2], [r1, r2], filter_len=1)
    # direct projections
    s_t = (est @ r1) / (r1 @ r1) * r1
    R = np.stack([r1, r2], axis=1)
    p_all = R @ np.linalg.lstsq(R, est, rcond=None)[0]
    e_i, e_a = p_all - s_t, est - p_all
    db = lambda a, b: 10 * np.log10(a / b)  # noqa: E731
    assert res.sdr[0] == pytest.approx(db(s_t @ s_t, (e_i + e_a) @ (e_i + e_a)), abs=1e-6)
    assert res.sir[0] == pytest.approx(db(s_t @ s_t, e_i @ e_i), abs=1e-6)
    assert res.sar[0] == pytest.approx(db(p_all @ p_all, e_a @ e_a), abs=1e-6)


def test_half_scaled_estimate():
    refs = make_rng(3).standard_normal((2, 3000))
    res = bss_eval(0.5 * refs, refs, filter_len=1)
    assert np.all(res.sdr == CAP_DB)


@pytest.mark.parametrize("alpha", [0.01, 0.5, 3.0, 1e3])
def test_scale_invariance(alpha):
    rng = make_rng(4)
    refs = rng.standard_normal((2, 3000))
    est = refs[::-1] * 0.3 + refs + 0.1 * rng.standard_normal((2, 3000))
    a = bss_eval(est, refs, filter_len=32)
    b = bss_eval(alpha * est, refs, filter_len=32)
    for m in ("sdr", "sir", "sar"):
        np.testing.assert_allclose(getattr(a, m), getattr(b, m), atol=1e-6)


def test_decomposition_sums_to_estimate():
    rng = make_rng(5)
    refs = rng.standard_normal((2, 2000))
    est = refs + 0.2 * rng.standard_normal((2, 2000))
    for j, (s, i, a) in enumerate(bss_decompose(est, refs, filter_len=64)):
        total = s + i + a
        padded = np.concatenate([est[j], np.zeros(63)])
        assert np.linalg.norm(total - padded) <= 1e-8 * np.linalg.norm(padded)


def test_orthogonal_noise_lowers_sar_and_sdr():
    rng = make_rng(6)
    refs = rng.standard_normal((2, 3000))
    est = refs + 0.05 * rng.standard_normal((2, 3000))
    noisier = est + 0.2 * rng.standard_normal((2, 3000))
    a, b = bss_eval(est, refs, 16), bss_eval(noisier, refs, 16)
    assert np.all(b.sar < a.sar) and np.all(b.sdr < a.sdr)


def test_length_alignment_and_errors():
    refs = make_rng(7).standard_normal((2, 500))
    res = bss_eval([refs[0][:400], refs[1]], refs, filter_len=4)
    assert np.all(np.isfinite(res.sdr))
    with pytest.raises(ValueError, match="silent"):
        bss_eval(refs, [refs[0], np.zeros(500)], filter_len=4)
    with pytest.raises(ValueError):
        bss_eval(refs[:1], refs, filter_len=4)


def test_identical_references_warn_and_stay_finite():
    # singular Gram matrix: the diagonal loading keeps the solve well posed
    r = make_rng(8).standard_normal(800)
    with pytest.warns(UserWarning, match="rank deficient"):
        res = bss_eval([r, r], [r, r.copy()], filter_len=8)
    assert np.all(np.isfinite(res.sdr))


class TestAggregate:
    def test_odd(self):
        assert median_iqr([3, 5, 100])["median"] == 5

    def test_even(self):
        s = median_iqr([1, 2, 3, 4])
        assert s["median"] == 2.5
        assert (s["q25"], s["q75"]) == (1.75, 3.25)

    def test_single(self):
        r = EvalResult(np.array([4.0]), np.array([5.0]), np.array([6.0]), [0])
        s = median_aggregate([r])
        assert s["sdr"]["median"] == 4.0
        assert s["sdr"]["q75"] - s["sdr"]["q25"] == 0
        assert "type 7" in s["quartile_method"]

    def test_pools_sources(self):
        rs = [EvalResult(np.array([1.0, 2.0]), np.zeros(2), np.zeros(2), [0, 1]),
              EvalResult(np.array([3.0, 10.0]), np.zeros(2), np.zeros(2), [0, 1])]
        assert median_aggregate(rs)["sdr"]["median"] == 2.5

    def test_empty(self):
        with pytest.raises(ValueError):
            median_aggregate([])
        with pytest.raises(ValueError):
            median_iqr([])
