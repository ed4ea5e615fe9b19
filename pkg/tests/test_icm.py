import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from qftgsg.icm import (
    band_columns,
    block_bandwidths_dense,
    certify_positive_definite,
    circulant,
    condition_number,
    coupling_eigenvalues,
    coupling_row_fixed,
    cyclic_bandwidth,
    decay_bound,
    default_threshold,
    defect_multiscale_icm,
    dht,
    diag_upper_columns,
    fixed_icm_row,
    icm_eigenvalues,
    main_col,
    main_col_literal,
    mass_defect_coupling,
    multiscale_icm_rows,
    multiscale_transform,
    scale_layout,
    sqrtm_psd,
    sufficient_modes,
    theoretical_bandwidth,
    truncate,
    width,
)
from qftgsg.wavelets import second_overlaps


def brute_coupling(K, m0, N, ov):
    """Assemble m0^2 I - N^2 Delta entry by entry with periodic wrap."""
    M = m0 ** 2 * np.eye(N)
    for i in range(N):
        for l in ov.ells:
            M[i, (i + l) % N] -= N ** 2 * ov[int(l)]
    return M


def test_scale_layout():
    assert scale_layout(3, 256) == (4, 8, 16)
    assert scale_layout(2, 8) == (3, 3, 8)
    # N = 2560 = 10 * 2^8
    assert scale_layout(3, 2560) == (4, 12, 10)
    with pytest.raises(ValueError):
        scale_layout(3, 8)


def test_coupling_row():
    ov = second_overlaps(3)
    row = coupling_row_fixed(3, 1.0, 16, ov)
    assert row[0] == pytest.approx(1 - 256 * ov[0])
    assert row.sum() == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(circulant(row), brute_coupling(3, 1.0, 16, ov))


def test_eigenvalues_match_dense():
    ov = second_overlaps(3)
    lam = icm_eigenvalues(3, 1.0, 16, ov)
    dense = np.linalg.eigvalsh(circulant(coupling_row_fixed(3, 1.0, 16, ov)))
    assert np.allclose(np.sort(lam ** 2), dense, atol=1e-8)
    assert lam[0] == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(lam[1:], lam[1:][::-1])


@pytest.mark.parametrize("K,N", [(2, 16), (3, 16), (2, 32), (3, 32)])
def test_multiscale_full_icm(K, N):
    A = multiscale_icm_rows(K, 1.0, N, second_overlaps(K)).dense()
    assert np.allclose(A, A.T, atol=1e-12)
    assert np.linalg.eigvalsh(A)[0] == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("K,N", [(2, 32), (3, 64), (4, 64)])
def test_multiscale_dense_oracle(K, N):
    ov = second_overlaps(K)
    A = sqrtm_psd(circulant(coupling_row_fixed(K, 1.3, N, ov)))
    W = multiscale_transform(K, N)
    assert np.allclose(multiscale_icm_rows(K, 1.3, N, ov).dense(), W @ A @ W.T, atol=1e-10)


def test_sqrtm_matches_scipy():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(12, 12))
    M = X @ X.T + np.eye(12)
    assert np.allclose(sqrtm_psd(M), scipy.linalg.sqrtm(M).real, atol=1e-10)


def test_fixed_icm_row_is_root():
    ov = second_overlaps(3)
    lam = icm_eigenvalues(3, 1.0, 32, ov)
    A = circulant(fixed_icm_row(lam))
    assert np.allclose(A @ A, circulant(coupling_row_fixed(3, 1.0, 32, ov)), atol=1e-9)


def test_dht():
    assert np.allclose(dht(np.full(8, 2.0)), [2 * math.sqrt(8)] + [0] * 7)
    x = np.random.default_rng(1).normal(size=16)
    H = np.array([[math.cos(2 * math.pi * i * j / 16) + math.sin(2 * math.pi * i * j / 16)
                   for j in range(16)] for i in range(16)]) / 4
    assert np.allclose(dht(x), H @ x)
    assert np.allclose(dht(dht(x)), x)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([2, 3, 4]), st.sampled_from([16, 64, 256]), st.sampled_from([0.1, 1.0, 10.0]))
def test_spectral_floor_and_sandwich(K, N, m0):
    ov = second_overlaps(K)
    if N < 2 * (2 * K - 1):
        return
    lam = icm_eigenvalues(K, m0, N, ov)
    assert lam.min() == pytest.approx(m0, abs=1e-8)
    diag = m0 ** 2 - N ** 2 * ov[0]
    top = coupling_eigenvalues(K, m0, N, ov).max()
    assert diag - 1e-9 <= top <= (4 * K - 3) * diag + 1e-9


def test_condition_number_linear():
    ov = second_overlaps(3)
    k1 = math.sqrt(condition_number(3, 1.0, 64, ov))
    k2 = math.sqrt(condition_number(3, 1.0, 256, ov))
    assert 3 < k2 / k1 < 5


def test_threshold_and_bandwidth():
    assert default_threshold(1.0, 0.05, 256) == pytest.approx(0.05 / 4096)
    assert cyclic_bandwidth([5, 1, 0, 0, 0, 1e-3, 1], 0.5) == 1
    assert cyclic_bandwidth([5, 0, 0, 2, 0, 0, 0], 1) == 3
    assert theoretical_bandwidth(3, 1, 256, 0.05) > 0


def test_truncate_zero_threshold_is_exact():
    icm = multiscale_icm_rows(3, 1.0, 64, second_overlaps(3))
    sp = truncate(icm, 0.0)
    assert np.array_equal(sp.dense(), icm.dense())


def test_truncate_pattern_covers_nonzeros():
    icm = multiscale_icm_rows(3, 1.0, 128, second_overlaps(3))
    sp = truncate(icm, default_threshold(1.0, 0.05, 128))
    assert sp.pattern_coverage() == 1.0
    assert certify_positive_definite(sp.dense()) > 0
    # diagonal entries survive truncation
    assert np.all(np.diag(sp.dense()) > 0)


def test_certify_rejects():
    with pytest.raises(np.linalg.LinAlgError):
        certify_positive_definite(np.diag([1.0, -1.0]))


def test_decay_bound_k2():
    ov = second_overlaps(2)
    icm = multiscale_icm_rows(2, 1.0, 64, ov)
    for r in range(icm.s0, icm.k):
        row = icm.blocks[("ww", r, r)]
        n = len(row)
        j = np.arange(2 * 2 - 1, n // 2 + 1)
        assert np.all(np.abs(row[j]) <= decay_bound(2, 1.0, r, j, ov) + 1e-12)


def test_main_col_agrees_when_stride_divides_w():
    for i in range(6, 12):
        assert main_col(i, 3, 4, 3, 4, 32) == main_col_literal(i, 3, 4, 3, 4, 32)


def test_band_columns_window():
    cols = band_columns(0, 4, 5, 3, 2, 32)
    assert len(cols) == width(4, 5, 3, 2)
    assert set(cols.tolist()) == {30, 31, 0, 1, 2, 3, 4, 5, 6, 7}
    assert diag_upper_columns(0, 16, 2).tolist() == [1, 2, 14, 15]
    assert diag_upper_columns(1, 16, 2).tolist() == [2, 3, 15]


def test_sufficient_modes():
    assert sufficient_modes(100.0, 1.0) == {"N": 200, "status": "ok"}
    assert "warning" in sufficient_modes(2.0, 1.0, K=3)["status"]


def test_defect():
    ov = second_overlaps(3)
    free = circulant(coupling_row_fixed(3, 1.0, 32, ov))
    assert np.array_equal(mass_defect_coupling(3, 1.0, 32, ov, 16, 0.0), free)
    M = mass_defect_coupling(3, 1.0, 32, ov, 16, 100.0)
    assert np.linalg.eigvalsh(M)[0] >= 1 - 1e-8
    A = defect_multiscale_icm(3, 1.0, 32, ov, 16, 100.0)
    assert np.allclose(A, A.T, atol=1e-10)


def test_defect_bandwidth_unchanged():
    ov = second_overlaps(3)
    eps = default_threshold(1.0, 0.025, 128)
    for g in (1e-3, 1.0, 1e3):
        bw = block_bandwidths_dense(defect_multiscale_icm(3, g, 128, ov, 64, 100 * g), 3, 128, eps)
        ref = block_bandwidths_dense(multiscale_icm_rows(3, g, 128, ov).dense(), 3, 128, eps)
        assert bw and all(abs(bw[r] - ref[r]) <= 2 for r in bw)
