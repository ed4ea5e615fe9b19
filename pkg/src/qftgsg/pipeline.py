"""End-to-end ground-state generation, lattice parameters and fidelity checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .icm import (
    BlockCirculantMatrix,
    SparseBlockMatrix,
    block_bandwidths_dense,
    certify_positive_definite,
    default_threshold,
    defect_multiscale_icm,
    icm_eigenvalues,
    multiscale_icm_rows,
    scale_layout,
    theoretical_bandwidth,
    truncate,
)
from .qsim import OpCounter, SparseState
from .stateprep import (
    OneDGSpec,
    ineq_target,
    lattice_amplitudes,
    one_dg,
    one_dg_ineq,
    qfht,
    qfht_op_count,
    qst,
    qst_op_count,
)
from .udu import SparseUDU, block_pattern, incomplete_udu, incomplete_udu_dense, pack
from .wavelets import second_overlaps

CHUNK = 1 << 20


@dataclass(frozen=True)
class LatticeParams:
    delta: float
    m: int
    qubits: int


def lattice_params(sigma: float, eps: float) -> LatticeParams:
    """Spacing, size exponent and qubit count for a 1D Gaussian of width sigma to infidelity eps."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    delta = min(0.5, sigma)
    need = 2 * sigma / math.sqrt(eps)
    m = max(1, math.ceil(math.log2(need / delta)))
    while (1 << m) * delta < need:
        m += 1
    while m > 1 and (1 << (m - 1)) * delta >= need:
        m -= 1
    n = math.ceil(math.log2(sigma / math.sqrt(eps))) + max(1, math.ceil(math.log2(1 / sigma)))
    return LatticeParams(delta, m, n)


def working_precision(N: int, m0: float, eps_vac: float) -> int:
    return math.ceil(math.log2(N / math.sqrt(m0 * eps_vac)))


def _logdet_spd(A: np.ndarray) -> float:
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("matrix is not symmetric positive definite") from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def gaussian_overlap(A, B) -> float:
    """<G(A)|G(B)> for normalized Gaussians exp(-x^T A x / 4)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError("need square matrices of equal size")
    for M in (A, B):
        if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
            raise ValueError("matrices must be symmetric")
    log = 0.25 * _logdet_spd(A) + 0.25 * _logdet_spd(B) - 0.5 * _logdet_spd((A + B) / 2)
    return float(min(1.0, math.exp(log)))


def lattice_continuum_overlap(sigma: float, delta: float, m: int) -> float:
    """Riemann-sum inner product of the normalized lattice Gaussian with the continuous one."""
    j, a = lattice_amplitudes(sigma / delta, m)
    x = j * delta
    psi = (2 * math.pi * sigma ** 2) ** -0.25 * np.exp(-x ** 2 / (4 * sigma ** 2))
    return float(np.sum(a * psi) * math.sqrt(delta))


# support-based fidelity

def support_overlap(state: SparseState, names: list[str], A: np.ndarray, chunk: int = CHUNK) -> float:
    """|<psi|G>| with G = exp(-x^T A x / 4) restricted to the state's support and normalized."""
    idx = [state.idx(n) for n in names]
    A = np.asarray(A, dtype=float)
    cross = 0.0 + 0.0j
    gg = 0.0
    for lo in range(0, state.size, chunk):
        x = state.vals[lo:lo + chunk][:, idx]
        q = np.einsum("ij,jk,ik->i", x, A, x)
        g = np.exp(-q / 4)
        cross += np.sum(np.conj(state.amps[lo:lo + chunk]) * g)
        gg += float(np.sum(g * g))
    return float(abs(cross) / math.sqrt(gg) / state.norm())


def overlap_monte_carlo(state: SparseState, names: list[str], A: np.ndarray, samples: int = 20000,
                        seed=None) -> tuple[float, float]:
    """Estimate of :func:`support_overlap` from rows drawn with probability |amp|^2.

    With r = G / psi, the overlap is E[r] / sqrt(E[r^2]); the standard error uses the
    delta method on the two sample means.
    """
    rng = np.random.default_rng(seed)
    p = np.abs(state.amps) ** 2
    rows = rng.choice(state.size, size=samples, p=p / p.sum())
    idx = [state.idx(n) for n in names]
    x = state.vals[rows][:, idx]
    g = np.exp(-np.einsum("ij,jk,ik->i", x, np.asarray(A, dtype=float), x) / 4)
    r = g / np.abs(state.amps[rows])
    r /= np.mean(r)  # scale-free; keeps r^2 well conditioned
    m1, m2 = float(np.mean(r)), float(np.mean(r * r))
    est = m1 / math.sqrt(m2)
    cov = np.cov(np.vstack([r, r * r]))
    grad = np.array([1 / math.sqrt(m2), -0.5 * m1 * m2 ** -1.5])
    se = float(math.sqrt(max(0.0, grad @ cov @ grad) / samples))
    return est, se


# per-mode preparation

def _mode_state(sigma_t: float, delta: float, m: int, p: int, mode: str, prep: str, seed, cache: dict):
    key = (round(sigma_t, 12), delta, m, p, mode, prep)
    if key not in cache:
        spec = OneDGSpec(sigma_t=sigma_t, delta=delta, m=m, p=p)
        if prep == "recursive":
            cache[key] = (one_dg(spec, mode=mode), None)
        elif prep == "ineq":
            st, attempts, _ = one_dg_ineq(spec, seed=seed, mode=mode)
            cache[key] = (st, attempts)
        else:
            raise ValueError("prep must be 'recursive' or 'ineq'")
    st, attempts = cache[key]
    return st.copy(), attempts


def _target_amplitudes(st: SparseState, sigma_t: float, delta: float, m: int, prep: str) -> np.ndarray:
    j, a = lattice_amplitudes(sigma_t, m) if prep == "recursive" else ineq_target(sigma_t, m)
    lut = dict(zip(j.tolist(), a))
    js = np.rint(st.col("out") / delta).astype(int)
    return np.array([lut.get(int(v), 0.0) for v in js])


def _prepare_modes(sigmas, delta, ms, p, mode, prep, seed):
    cache: dict = {}
    states, attempts = [], []
    prep_err = 0.0
    for l, (s, m) in enumerate(zip(sigmas, ms)):
        st, att = _mode_state(float(s), delta, int(m), p, mode, prep, None if seed is None else seed + l, cache)
        target = _target_amplitudes(st, float(s), delta, int(m), prep)
        prep_err = max(prep_err, float(np.max(np.abs(st.amps - target))))
        st.rename("out", f"vac{l}")
        states.append(st)
        attempts.append(att)
    return states, attempts, prep_err


def _mode_exponents(sigmas, delta, eps_mode: float, m: int | None, m_cap: int):
    if m is not None:
        return [m] * len(sigmas), [m] * len(sigmas)
    # smallest m with 2^m delta >= 2 sigma / sqrt(eps) at the common spacing delta
    asked = [max(1, math.ceil(math.log2(2 * float(s) / math.sqrt(eps_mode)))) for s in sigmas]
    return asked, [min(a, m_cap) for a in asked]


def _relabel_oracle(states: list[SparseState], T: np.ndarray, out: SparseState, names: list[str],
                    chunk: int = CHUNK) -> float:
    """Max deviation of ``out`` from the product of ``states`` relabeled by x -> T x, row by row."""
    sizes = [s.size for s in states]
    S = int(np.prod(sizes))
    if S != out.size:
        return math.inf
    idx = [out.idx(n) for n in names]
    strides = np.cumprod([1] + sizes[::-1])[:-1][::-1]
    worst = 0.0
    for lo in range(0, S, chunk):
        r = np.arange(lo, min(S, lo + chunk))
        x = np.empty((len(r), len(states)))
        amp = np.ones(len(r), dtype=complex)
        for q, st in enumerate(states):
            d = (r // strides[q]) % sizes[q]
            x[:, q] = st.vals[d, 0]
            amp *= st.amps[d]
        y = x @ T.T
        worst = max(worst, float(np.max(np.abs(out.vals[lo:lo + len(r)][:, idx] - y))),
                    float(np.max(np.abs(out.amps[lo:lo + len(r)] - amp))))
    return worst


@dataclass
class GSGResult:
    state: SparseState
    names: list
    report: dict
    counts: dict
    icm: np.ndarray
    extras: dict = field(default_factory=dict)


def _check_inputs(K: int, m0: float, N: int, eps_vac: float):
    if K < 2:
        raise ValueError("K >= 2")
    if m0 <= 0:
        raise ValueError("m0 > 0")
    if N < 2 * (2 * K - 1) or N & (N - 1):
        raise ValueError(f"N must be a power of two >= {2 * (2 * K - 1)}")
    if not 0 < eps_vac < 1:
        raise ValueError("eps_vac in (0, 1)")


def fourier_gsg(K: int, m0: float, N: int, eps_vac: float, mode: str = "real", m: int | None = None,
                m_cap: int = 3, prep: str = "recursive", seed=None, check: bool = True) -> GSGResult:
    """Fourier route: diagonal-mode Gaussians then the quantum Hartley transform."""
    _check_inputs(K, m0, N, eps_vac)
    p = working_precision(N, m0, eps_vac)
    lam = icm_eigenvalues(K, m0, N, second_overlaps(K))
    delta = 1 / math.sqrt(lam.max())
    sigmas = np.sqrt(lam.max() / lam)
    asked, ms = _mode_exponents(sigmas, delta, eps_vac / N, m, m_cap)
    states, attempts, prep_err = _prepare_modes(sigmas, delta, ms, p, mode, prep, seed)
    names = [f"vac{l}" for l in range(N)]
    state = SparseState.product(states, mode)
    before = OpCounter(dict(state.counter.counts))
    qfht(state, names)
    H = np.array([[math.cos(2 * math.pi * i * j / N) + math.sin(2 * math.pi * i * j / N)
                   for j in range(N)] for i in range(N)]) / math.sqrt(N)
    A = H @ np.diag(lam) @ H
    report = {
        "method": "fourier", "K": K, "m0": m0, "N": N, "eps_vac": eps_vac, "p": p,
        "delta": delta, "sigma_t": sigmas.tolist(), "m_requested": asked, "m_used": ms,
        "support": state.size, "prep_maxdiff": prep_err,
        "success_attempts": attempts if prep == "ineq" else None,
    }
    if check:
        report["oracle_maxdiff"] = _relabel_oracle(states, H, state, names)
        report["overlap_exact"] = support_overlap(state, names, A)
        report["overlap_truncated"] = report["overlap_exact"]
    counts = state.counter.report()
    counts["qfht"] = state.counter.total - before.total
    counts["qfht_formula"] = qfht_op_count(N)
    return GSGResult(state, names, report, counts, A)


def _defect_udu(A: np.ndarray, K: int, N: int, eps_th: float) -> tuple[SparseUDU, int]:
    """Threshold a dense multi-scale ICM and factor it on the narrowest banded pattern covering it."""
    s0, k, n_ss = scale_layout(K, N)
    At = np.where(np.abs(A) >= eps_th, A, 0.0)
    certify_positive_definite(At)
    base = BlockCirculantMatrix(N=N, K=K, s0=s0, k=k)
    upper = np.triu(At != 0, 1)
    upper[:n_ss, :] = False
    for w in range(0, N):
        pat = block_pattern(SparseBlockMatrix(base=base, eps_th=eps_th, w=w))
        if not np.any(upper & ~pat.mask()):
            break
    U, d, steps = incomplete_udu_dense(At, pat)
    sizes = {r: base.size(r) for r in range(s0, k)} | {s0: base.size(s0)}
    layout = {"s0": s0, "k": k, "w": w, "K": K, "sizes": sizes}
    return SparseUDU(N=N, K=K, s0=s0, k=k, w=w, d=d, shears=pack(U, layout), sizes=sizes, steps=steps), w


def wavelet_gsg(K: int, m0: float, N: int, eps_vac: float, mode: str = "real", m: int | None = None,
                m_cap: int = 3, defect: tuple[int, float] | None = None, prep: str = "recursive",
                seed=None, check: bool = True) -> GSGResult:
    """Wavelet route: truncated multi-scale ICM, incomplete UDU, per-mode Gaussians, shear transform.

    The infidelity budget is split evenly: the threshold uses eps_vac / 2 and each of the
    N modes gets eps_vac / (2N).
    """
    _check_inputs(K, m0, N, eps_vac)
    p = working_precision(N, m0, eps_vac)
    ov = second_overlaps(K)
    eps_th = default_threshold(m0, eps_vac / 2, N)
    icm = multiscale_icm_rows(K, m0, N, ov)
    sp = truncate(icm, eps_th)
    A_trunc = sp.dense()
    lam_min = certify_positive_definite(A_trunc)
    if defect is None:
        A_exact = icm.dense()
        udu = incomplete_udu(sp)
        bands = dict(sp.bandwidths)
    else:
        site, strength = defect
        A_exact = defect_multiscale_icm(K, m0, N, ov, int(site), float(strength))
        A_trunc = np.where(np.abs(A_exact) >= eps_th, A_exact, 0.0)
        lam_min = certify_positive_definite(A_trunc)
        udu, _ = _defect_udu(A_exact, K, N, eps_th)
        bands = block_bandwidths_dense(A_exact, K, N, eps_th)
    d = udu.d
    delta = 1 / math.sqrt(d.max())
    sigmas = 1 / (delta * np.sqrt(d))
    asked, ms = _mode_exponents(sigmas, delta, eps_vac / (2 * N), m, m_cap)
    states, attempts, prep_err = _prepare_modes(sigmas, delta, ms, p, mode, prep, seed)
    names = [f"vac{l}" for l in range(N)]
    state = SparseState.product(states, mode)
    before = state.counter.total
    qst(state, names, udu)
    U = udu.unpack()
    A_rec = U @ np.diag(d) @ U.T
    report = {
        "method": "wavelet", "K": K, "m0": m0, "N": N, "eps_vac": eps_vac, "p": p,
        "eps_th": eps_th, "w": udu.w, "w_theory": theoretical_bandwidth(K, m0, N, eps_vac / 2),
        "bandwidths": {str(r): int(b) for r, b in bands.items()},
        "smallest_eigenvalue": lam_min, "d_ratio": float(d.max() / d.min()),
        "delta": delta, "sigma_t": sigmas.tolist(), "m_requested": asked, "m_used": ms,
        "support": state.size, "prep_maxdiff": prep_err, "nnz_shears": udu.nnz(),
        "defect": list(defect) if defect is not None else None,
        "success_attempts": attempts if prep == "ineq" else None,
        "fidelity_exact_vs_truncated": gaussian_overlap(A_exact, A_trunc),
    }
    if check:
        report["oracle_maxdiff"] = _relabel_oracle(states, np.linalg.inv(U.T), state, names)
        report["overlap_exact"] = support_overlap(state, names, A_exact)
        report["overlap_truncated"] = support_overlap(state, names, A_trunc)
        report["overlap_reconstructed"] = support_overlap(state, names, A_rec)
    counts = state.counter.report()
    counts["qst"] = state.counter.total - before
    counts["qst_formula"] = qst_op_count(udu)
    counts["udu_steps"] = udu.steps
    return GSGResult(state, names, report, counts, A_exact, {"udu": udu, "sparse": sp})


# lower bound and scaling

def all_zero_fidelity(sigma_t: float, terms: int | None = None) -> float:
    """Overlap of the normalized integer-lattice Gaussian exp(-j^2 / 4 sigma_t^2) with |0>."""
    n = terms or int(math.ceil(12 * sigma_t)) + 8
    j = np.arange(-n, n + 1)
    return float(np.sum(np.exp(-(j ** 2) / (2 * sigma_t ** 2))) ** -0.5)


def sublinear_lowerbound_demo(m0: float, N: int, delta: float = 1.0, alphas=(0.0, 0.25, 0.5, 0.75)) -> dict:
    """Fidelity of each mode with |0> and of N^(1 - alpha) such modes left untouched."""
    sigma_t = math.sqrt(1 / m0) / delta
    F = all_zero_fidelity(sigma_t)
    bound = math.exp(-1 / (4 * m0))
    rows = []
    for a in alphas:
        n = N ** (1 - a)
        rows.append({"alpha": a, "untouched": n, "product_fidelity": F ** n, "product_bound": bound ** n})
    return {"m0": m0, "N": N, "delta": delta, "sigma_t": sigma_t, "F_1DG": F, "bound": bound,
            "holds": F <= bound, "hypothesis_sigma2_ge_delta": 1 / m0 >= delta, "table": rows}


def scaling_report(K: int, m0: float, eps_vac: float, N_list) -> list[dict]:
    """Operation counts per N: qfht (exact formula), qst (3 per stored shear) and classical UDU steps."""
    ov = second_overlaps(K)
    out = []
    for N in N_list:
        eps_th = default_threshold(m0, eps_vac / 2, N)
        sp = truncate(multiscale_icm_rows(K, m0, N, ov), eps_th)
        udu = incomplete_udu(sp)
        out.append({"N": N, "qfht": qfht_op_count(N), "qst": qst_op_count(udu), "nnz_shears": udu.nnz(),
                    "udu_steps": udu.steps, "w": sp.w, "NlogN": N * math.log2(N)})
    for a, b in zip(out, out[1:]):
        bound = 2 * (math.log2(b["N"]) / math.log2(a["N"])) ** 3 * (b["N"] / (2 * a["N"]))
        b["bound"] = bound
        for key in ("qfht", "qst", "udu_steps"):
            b[f"{key}_ratio"] = b[key] / a[key]
    return out
