import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qftgsg.icm import dht, multiscale_from_fixed, multiscale_icm_rows, truncate
from qftgsg.pipeline import lattice_continuum_overlap, lattice_params
from qftgsg.qsim import RegisterLayout, SparseState, UncomputeError
from qftgsg.stateprep import (
    OneDGSpec,
    arcsin_reduced,
    exp_approx,
    f_approx,
    f_exact,
    ineq_target,
    lattice_amplitudes,
    one_dg,
    one_dg_ineq,
    qfht,
    qfht_op_count,
    qst,
    qst_op_count,
    ratio,
    rotation_angle,
    success_probability,
)
from qftgsg.udu import SparseUDU, incomplete_udu
from qftgsg.wavelets import second_overlaps

WIDE = RegisterLayout(40, 10)


def tuple_state(x):
    return SparseState.basis({f"x{i}": (WIDE, float(v)) for i, v in enumerate(x)})


def amps_by_j(st, delta):
    return {int(round(k[0] / delta)): v.real for k, v in st.amplitude_map().items()}


def test_exp_and_sum_approximations():
    assert float(exp_approx(1.3, 20)) == pytest.approx(math.exp(-1.3), abs=1e-6)
    assert float(f_approx(2.0, 0.25, 4, 20)) == pytest.approx(f_exact(2.0, 0.25, 4), rel=1e-6)
    assert float(arcsin_reduced(0.9, 30)) == pytest.approx(math.asin(0.9), abs=1e-8)


def test_rotation_angle_half_split():
    # cos^2(theta) is the weight of the even sublattice
    th = rotation_angle(1.7, 0.0, 4)
    j = np.arange(-8, 8)
    w = np.exp(-(j ** 2) / (2 * 1.7 ** 2))
    assert math.cos(th) ** 2 == pytest.approx(w[j % 2 == 0].sum() / w.sum(), abs=1e-12)
    assert rotation_angle(1.7, 0.0, 4, 30) == pytest.approx(th, abs=1e-8)


def test_one_dg_oracle():
    st = one_dg(OneDGSpec(sigma_t=2.0, delta=0.5, m=3, t=30))
    assert st.names == ["out"]
    j, a = lattice_amplitudes(2.0, 3)
    got = amps_by_j(st, 0.5)
    assert sorted(got) == list(range(-4, 4))
    assert max(abs(got[int(k)] - v) for k, v in zip(j, a)) < 1e-6


def test_one_dg_wide_limit():
    st = one_dg(OneDGSpec(sigma_t=1e6, delta=0.5, m=1), exact_angles=True)
    got = amps_by_j(st, 0.5)
    assert sorted(got) == [-1, 0]
    assert got[0] == pytest.approx(1 / math.sqrt(2)) and got[-1] == pytest.approx(1 / math.sqrt(2))
    assert rotation_angle(1e6, 0.0, 1) == pytest.approx(math.pi / 4)


def test_one_dg_continuum_fidelity():
    lp = lattice_params(3.0, 0.01)
    st = one_dg(OneDGSpec(sigma_t=3.0 / lp.delta, delta=lp.delta, m=lp.m))
    got = amps_by_j(st, lp.delta)
    x = np.array(sorted(got)) * lp.delta
    a = np.array([got[k] for k in sorted(got)])
    psi = (2 * math.pi * 9) ** -0.25 * np.exp(-x ** 2 / 36)
    assert np.sum(a * psi) * math.sqrt(lp.delta) >= 0.99
    assert lattice_continuum_overlap(3.0, lp.delta, lp.m) >= 0.99


def test_literal_uncompute_leaves_garbage():
    with pytest.raises(UncomputeError, match="not zero"):
        one_dg(OneDGSpec(sigma_t=2.0, delta=0.5, m=3), uncompute="literal")


@pytest.mark.parametrize("t", [8, 12, 16])
def test_fixed_mode_envelope(t):
    spec = OneDGSpec(sigma_t=2.0, delta=0.5, m=3, p=16, t=t)
    real = one_dg(spec).amplitude_map()
    fixed = one_dg(spec, mode="fixed").amplitude_map()
    assert set(real) == set(fixed)
    # each of the m rotations is off by at most pi 2^-t
    assert max(abs(real[k] - fixed[k]) for k in real) <= 3 * math.pi * 2.0 ** -t


@settings(max_examples=15, deadline=None)
@given(st.floats(0.6, 20), st.integers(1, 5))
def test_one_dg_normalized_and_supported(sigma_t, m):
    st_ = one_dg(OneDGSpec(sigma_t=sigma_t, delta=0.25, m=m))
    assert st_.norm() == pytest.approx(1.0, abs=1e-12)
    js = sorted(amps_by_j(st_, 0.25))
    assert js == list(range(-(1 << (m - 1)), 1 << (m - 1)))


def test_success_probability_matches_simulator():
    spec = OneDGSpec(sigma_t=2.0, delta=1.0, m=4)
    _, attempts, p = one_dg_ineq(spec, t=10, postselect=True)
    assert attempts == 1
    assert p == pytest.approx(success_probability(2.0, 4, 10), abs=1e-12)


def test_success_probability_exact_limit():
    assert success_probability(3.0, 6, None) == pytest.approx(success_probability(3.0, 6, 50), abs=1e-12)


def test_ratio_at_zero():
    assert ratio(np.array([0]), 2.0)[0] == 1.0


def test_ineq_amplitudes():
    st_, _, _ = one_dg_ineq(OneDGSpec(sigma_t=2.5, delta=0.5, m=4), t=12, postselect=True)
    got = amps_by_j(st_, 0.5)
    j, a = ineq_target(2.5, 4, 12)
    assert max(abs(got.get(int(k), 0.0) - v) for k, v in zip(j, a)) < 1e-12
    # large t approaches the exact symmetric Gaussian
    j, exact = ineq_target(2.5, 4)
    assert max(abs(got.get(int(k), 0.0) - v) for k, v in zip(j, exact)) < 2.0 ** (-12 + 2)


def test_ineq_sampling_reproducible():
    spec = OneDGSpec(sigma_t=2.0, delta=1.0, m=4)
    a = one_dg_ineq(spec, t=8, seed=11)
    b = one_dg_ineq(spec, t=8, seed=11)
    assert a[1] == b[1]
    assert a[0].amplitude_map() == b[0].amplitude_map()


def test_ineq_rejects_small_m():
    with pytest.raises(ValueError):
        one_dg_ineq(OneDGSpec(sigma_t=2.0, delta=1.0, m=1))


def run_qfht(x):
    s = tuple_state(x)
    names = [f"x{i}" for i in range(len(x))]
    qfht(s, names)
    return np.array([s.col(n)[0] for n in names]), s


def test_qfht_impulse():
    out, _ = run_qfht([3.0] + [0.0] * 7)
    assert np.allclose(out, 3 / math.sqrt(8))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 4, 8, 16, 32]), st.integers(0, 2 ** 32 - 1))
def test_qfht_dht_oracle(N, seed):
    x = np.random.default_rng(seed).uniform(-4, 4, N)
    out, s = run_qfht(x)
    assert np.max(np.abs(out - dht(x))) < 1e-10
    assert s.counter.total == qfht_op_count(N)
    again, _ = run_qfht(out)
    assert np.max(np.abs(again - x)) < 1e-9


def test_qfht_golden_counts():
    for k in range(1, 12):
        N = 2 ** k
        assert qfht_op_count(N) == 3 * k * N // 4 - N // 4 + 1 - 2 ** (math.ceil(k / 2) - 1)
    assert [qfht_op_count(2 ** k) for k in range(1, 6)] == [1, 5, 15, 43, 109]


def test_qst_identity():
    udu = incomplete_udu(truncate(multiscale_from_fixed(np.eye(16)[0], 2), 1e-12))
    x = np.arange(16, dtype=float)
    s = tuple_state(x)
    qst(s, [f"x{i}" for i in range(16)], udu)
    assert [s.col(f"x{i}")[0] for i in range(16)] == x.tolist()


def test_qst_single_shear():
    udu = SparseUDU(N=2, K=1, s0=1, k=1, w=0, d=np.ones(2), shears={("ss", 1, 1): np.array([0.75])},
                    sizes={1: 2})
    s = tuple_state([2.0, 5.0])
    qst(s, ["x0", "x1"], udu)
    assert (s.col("x0")[0], s.col("x1")[0]) == (2.0, 5.0 - 0.75 * 2.0)
    assert s.counter.total == 3 == qst_op_count(udu)


def test_qst_dense_oracle():
    sp = truncate(multiscale_icm_rows(2, 1.0, 16, second_overlaps(2)), 1e-6)
    udu = incomplete_udu(sp)
    U = udu.unpack()
    rng = np.random.default_rng(9)
    names = [f"x{i}" for i in range(16)]
    for _ in range(10):
        x = rng.uniform(-2, 2, 16)
        s = tuple_state(x)
        qst(s, names, udu)
        out = np.array([s.col(n)[0] for n in names])
        assert np.max(np.abs(out - np.linalg.solve(U.T, x))) < 1e-9
        assert s.counter.total == qst_op_count(udu)
        assert s.counter.counts["mul"] == udu.nnz()
