"""Quantum routines: two 1D Gaussian preparations, the quantum fast Hartley transform
and the quantum shear transform, all on top of :mod:`qftgsg.qsim`."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

from .icm import band_columns
from .qsim import OpCounter, RegisterLayout, SimulationError, SparseState, UncomputeError
from .udu import SparseUDU


@dataclass(frozen=True)
class OneDGSpec:
    sigma_t: float  # standard deviation in lattice units
    delta: float
    m: int
    p: int | None = None
    t: int | None = None

    def __post_init__(self):
        if self.sigma_t <= 0 or self.delta <= 0:
            raise ValueError("sigma_t and delta must be positive")
        if self.m < 1:
            raise ValueError("m >= 1")
        if self.p is not None and self.p < self.m:
            raise ValueError("need m <= p")

    @property
    def width(self) -> int:
        """Register width: the mean register needs m fractional bits."""
        return max(self.p or 0, 2 * self.m)

    @property
    def angle_bits(self) -> int:
        return self.t if self.t is not None else self.width + 4


# rotation angles

def f_exact(sigma_t: float, mu: float, m: int) -> float:
    j = np.arange(-(1 << (m - 1)), 1 << (m - 1)) if m >= 1 else np.array([0])
    return float(np.sum(np.exp(-((j + mu) ** 2) / (2 * sigma_t ** 2))))


def exp_approx(x, t: int):
    """e^{-x} as (1 - y + y^2)^(4^t) with y = x / 4^t, by 2t squarings."""
    with mpmath.workprec(4 * t + 64):
        y = mpmath.mpf(x) / mpmath.mpf(4) ** t
        v = 1 - y + y * y
        for _ in range(2 * t):
            v = v * v
        return v


def f_approx(sigma_t: float, mu: float, m: int, t: int):
    """Gaussian lattice sum to about t bits: closed form for wide states, short sum otherwise."""
    half = 1 << (m - 1) if m >= 1 else 0
    with mpmath.workprec(4 * t + 64):
        s = mpmath.mpf(sigma_t)
        if m >= 1 and (1 << m) > 8 * (t + 3) and s * s > t:
            return s * mpmath.sqrt(2 * mpmath.pi)
        lo, hi = (-half, half - 1) if m >= 1 else (0, 0)
        if m >= 1 and (1 << m) > 8 * (t + 3):
            lo, hi = max(lo, -2 * t - 1), min(hi, 2 * t)
        total = mpmath.mpf(0)
        for j in range(lo, hi + 1):
            total += exp_approx((j + mpmath.mpf(mu)) ** 2 / (2 * s * s), t)
        return total


def arcsin_poly(u, t: int):
    """Taylor polynomial of arcsin, exact to about 2^-t for |u| <= 1/2."""
    with mpmath.workprec(2 * t + 64):
        u = mpmath.mpf(u)
        term, total, n = u, u, 0
        while True:
            n += 1
            term = term * u * u * (2 * n - 1) ** 2 / ((2 * n) * (2 * n + 1))
            total += term
            if 2 * n + 1 > t + 4:
                return total


def arcsin_reduced(u, t: int):
    """arcsin with a half-angle reduction so the polynomial only sees |u| <= 1/2."""
    with mpmath.workprec(2 * t + 64):
        u = mpmath.mpf(u)
        if abs(u) > 1 + mpmath.mpf(2) ** -t:
            raise SimulationError(f"arcsin argument {float(u)!r} outside [-1, 1]")
        if abs(u) <= 0.5:
            return arcsin_poly(u, t)
        a = abs(u)
        v = mpmath.sqrt(max(mpmath.mpf(0), (1 - a) / 2))
        r = mpmath.pi / 2 - 2 * arcsin_poly(v, t)
        return r if u > 0 else -r


def rotation_argument(sigma_t: float, mu: float, m: int, t: int | None = None):
    if t is None:
        return 2 * f_exact(sigma_t / 2, mu / 2, m - 1) / f_exact(sigma_t, mu, m) - 1
    return 2 * f_approx(sigma_t / 2, mu / 2, m - 1, t) / f_approx(sigma_t, mu, m, t) - 1


@lru_cache(maxsize=65536)
def rotation_angle(sigma_t: float, mu: float, m: int, t: int | None = None) -> float:
    """theta with cos^2(theta) = weight of the even half of the lattice Gaussian."""
    u = rotation_argument(sigma_t, mu, m, t)
    if t is None:
        return 0.5 * math.acos(min(1.0, max(-1.0, u)))
    with mpmath.workprec(2 * t + 64):
        return float(mpmath.pi / 4 - arcsin_reduced(u, t) / 2)


def apply_angle(state: SparseState, std: str, mean: str, ang: str, m_l: int, t: int | None):
    """Toggle eta = theta / 2 pi into ``ang`` for each branch's (std, mean)."""
    pairs = np.column_stack([state.col(std), state.col(mean)])
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    eta = np.array([rotation_angle(float(s), float(mu), m_l, t) / (2 * np.pi) for s, mu in uniq])
    state.toggle("angle", ang, eta[inv.ravel()])


# Alg 4 style recursive preparation

def lattice_amplitudes(sigma_t: float, m: int) -> tuple[np.ndarray, np.ndarray]:
    """(j, amplitude) of the normalized lattice Gaussian on j in [-2^(m-1), 2^(m-1))."""
    j = np.arange(-(1 << (m - 1)), 1 << (m - 1))
    a = np.exp(-(j ** 2) / (4 * sigma_t ** 2))
    return j, a / np.linalg.norm(a)


def _std_low_bit(state: SparseState) -> int:
    """Low bit of the classical std register; only fixed mode wraps it around on SHIFT."""
    if state.mode != "fixed":
        return 0
    return int(state.layouts["std"].encode(state.col("std")[:1])[0] & 1)


def _shift_mean(state):
    if state.mode == "fixed" and np.any(state.bits("mean", 0)):
        raise SimulationError("mean register has a set low bit before SHIFT")
    state.shift("mean")


def _unwind_classical(state, m, std_bits):
    """Undo the std/mean updates of the forward loop, leaving out untouched."""
    P = state.layouts["std"].p
    for l in range(m - 1, -1, -1):
        state.cnot("out", l, "mean", P - m - 1)
        state.shift("mean", inverse=True)
        if std_bits[l]:
            state.x("std", P - 1)
        state.shift("std", inverse=True)


def one_dg(spec: OneDGSpec, mode: str = "real", exact_angles: bool = False,
           uncompute: str = "divide") -> SparseState:
    """Recursive-rotation 1DG preparation; returns a state with the single register ``out``.

    ``uncompute="literal"`` erases ``out`` by replaying the preparation backwards after
    the multiplication by delta, which leaves garbage and raises UncomputeError.
    """
    if uncompute not in ("divide", "literal"):
        raise ValueError("uncompute must be 'divide' or 'literal'")
    m, P = spec.m, spec.width
    t = spec.angle_bits
    signed = RegisterLayout(P, m, True)
    unsigned = RegisterLayout(P, m, False)
    st = SparseState(mode)
    st.add_register("out", signed)
    st.add_register("std", unsigned)
    st.add_register("mean", unsigned)
    st.add_register("ang", RegisterLayout(t + 1, 1, False))
    st.add_register("spc", signed)
    st.add_register("tmp", signed)
    st.load("std", spec.sigma_t)
    sigma_loaded = float(st.col("std")[0])

    # classical bits shifted out of std, replayed when unwinding
    std_bits = []
    for l in range(m):
        std_bits.append(_std_low_bit(st))
        apply_angle(st, "std", "mean", "ang", m - l, None if exact_angles else t)
        st.rot("ang", "out", l)
        apply_angle(st, "std", "mean", "ang", m - l, None if exact_angles else t)
        st.shift("std")
        if std_bits[l]:
            st.x("std", P - 1)
        _shift_mean(st)
        st.cnot("out", l, "mean", P - m - 1)

    if uncompute == "divide":
        _unwind_classical(st, m, std_bits)

    for l in range(m):
        st.swap_bits("out", l, "out", P - m + l)
    st.load("spc", spec.delta)
    delta_loaded = float(st.col("spc")[0])
    st.mul("out", "tmp", "spc")

    if uncompute == "divide":
        # division back onto out's grid; exact because tmp holds j * delta
        st.toggle("mul", "out", signed.quantize(st.col("tmp") / delta_loaded), op="unmul")
    else:
        for l in range(m):
            st.swap_bits("out", l, "out", P - m + l)
        for l in range(m - 1, -1, -1):
            st.cnot("out", l, "mean", P - m - 1)
            st.shift("mean", inverse=True)
            if std_bits[l]:
                st.x("std", P - 1)
            st.shift("std", inverse=True)
            apply_angle(st, "std", "mean", "ang", m - l, None if exact_angles else t)
            st.rot("ang", "out", l, inverse=True)
            apply_angle(st, "std", "mean", "ang", m - l, None if exact_angles else t)

    st.swap("out", "tmp")
    st.erase("std", sigma_loaded)
    st.erase("spc", delta_loaded)
    for name in ("tmp", "mean", "ang", "std", "spc"):
        st.remove_register(name)
    return st


# Alg 5 style preparation by inequality testing

def _floor_log2(j: np.ndarray) -> np.ndarray:
    j = np.asarray(j, dtype=np.int64)
    out = np.zeros_like(j)
    nz = j > 0
    out[nz] = np.floor(np.log2(j[nz])).astype(np.int64)
    # guard against log2 rounding at exact powers of two
    out[nz] += (1 << (out[nz] + 1)) <= j[nz]
    out[nz] -= (1 << out[nz]) > j[nz]
    return out


def step_amplitude(j, sigma_t: float) -> np.ndarray:
    """Unnormalized amplitudes g(j) of the stepped (power-of-two rounded) Gaussian."""
    j = np.asarray(j, dtype=np.int64)
    e = 4.0 ** _floor_log2(j)
    return np.where(j == 0, 1.0, math.sqrt(2) * np.exp(-e / (4 * sigma_t ** 2)))


def ratio(j, sigma_t: float) -> np.ndarray:
    j = np.asarray(j, dtype=np.int64)
    e = 4.0 ** _floor_log2(j)
    return np.where(j == 0, 1.0, np.exp((e - j.astype(float) ** 2) / (4 * sigma_t ** 2)))


def ratio_bits(j, sigma_t: float, t: int) -> np.ndarray:
    return np.floor(ratio(j, sigma_t) * 2.0 ** t)


def step_norm(sigma_t: float, m: int) -> float:
    j = np.arange(1, 1 << (m - 1))
    return 1 + 2 * float(np.sum(np.exp(-(4.0 ** _floor_log2(j)) / (2 * sigma_t ** 2))))


def unary_norm(sigma_t: float, n: int) -> float:
    j = np.arange(1, n)
    return 1 + float(np.sum(2.0 ** j * np.exp(-(4.0 ** (j - 1)) / (2 * sigma_t ** 2))))


def unary_angles(m: int, sigma_t: float) -> np.ndarray:
    """theta_l, l = 0..m-2, preparing the unary stepped state."""
    out = []
    for l in range(m - 1):
        s = math.sqrt(2) * 2 ** (l / 2) * math.exp(-(4.0 ** l) / (4 * sigma_t ** 2)) / math.sqrt(unary_norm(sigma_t, l + 2))
        out.append(math.asin(min(1.0, s)))
    return np.array(out)


def success_probability(sigma_t: float, m: int, t: int | None) -> float:
    """Probability that the inequality test accepts; ``t=None`` is the exact-ratio limit."""
    j = np.arange(0, 1 << (m - 1))
    g = step_amplitude(j, sigma_t)
    norm = step_norm(sigma_t, m)
    if t is None:
        return float(np.sum((g * ratio(j, sigma_t)) ** 2) / norm)
    return float(np.sum((g * ratio_bits(j, sigma_t, t)) ** 2) / (norm * 4.0 ** t))


def _stepped_state(sigma_t, m, t, P, mode) -> SparseState:
    st = SparseState(mode)
    st.add_register("out", RegisterLayout(m, m, True))
    st.add_register("ang", RegisterLayout(P + 5, 1, False))
    theta = unary_angles(m, sigma_t)
    eta = theta / (2 * np.pi)
    st.load("ang", eta[m - 2])
    st.rot("ang", "out", m - 2)
    st.load("ang", eta[m - 2])
    for l in range(m - 3, -1, -1):
        st.cnot("out", l + 1, "out", l)
        st.load("ang", eta[l])
        st.rot("ang", "out", l, controls=[("out", l + 1, 0)])
        st.load("ang", eta[l])
    for l in range(1, m):
        st.cnot("out", l, "out", l - 1)
        st.chad("out", l, "out", l - 1)
    st.remove_register("ang")
    return st


def _ineq_attempt(sigma_t, m, t, P, mode):
    st = _stepped_state(sigma_t, m, t, P, mode)
    st.add_register("std", RegisterLayout(P, m, False), sigma_t)
    st.add_register("ref", RegisterLayout(t, t, False))
    st.add_register("tmp", RegisterLayout(t + 1, t + 1, False))
    st.add_register("ineq", RegisterLayout(1, 1, False))
    for l in range(t):
        st.h("ref", l)
    st.toggle("ratio", "tmp", ratio_bits(st.col("out"), float(st.col("std")[0]), t))
    st.comp("ref", "tmp", "ineq")
    for l in range(t):
        st.h("ref", l)
    return st


def _finish_ineq(st: SparseState, sigma_t, m, t, delta, P):
    """Post-success tail: clear tmp, attach a sign, scale by delta and release ancillas."""
    st.toggle("ratio", "tmp", ratio_bits(st.col("out"), float(st.col("std")[0]), t))
    st.add_register("flag", RegisterLayout(1, 1, False))
    st.toggle("comp", "flag", (st.col("out") != 0).astype(float))
    st.chad("flag", 0, "out", m - 1)
    st.toggle("comp", "flag", (st.col("out") != 0).astype(float))
    half = float(1 << (m - 1))
    # sign-magnitude to two's complement: pattern 1|mag reads as mag - 2^(m-1)
    st.map("logic", "out", lambda v: np.where(v < 0, -(v + half), v), op="twos")
    out_layout = RegisterLayout(P, m, True)
    st.add_register("spc", out_layout)
    st.add_register("anc", out_layout)
    st.load("spc", delta)
    d = float(st.col("spc")[0])
    st.mul("out", "anc", "spc")
    st.toggle("mul", "out", st.layouts["out"].quantize(st.col("anc") / d), op="unmul")
    st.erase("spc", d)
    st.erase("std", float(st.col("std")[0]))
    for name in ("out", "spc", "std", "ref", "tmp", "ineq", "flag"):
        st.remove_register(name)
    st.rename("anc", "out")
    return st


def one_dg_ineq(spec: OneDGSpec, t: int | None = None, seed=None, mode: str = "real",
                postselect: bool = False, max_attempts: int = 50):
    """Repeat-until-success preparation; returns (state, attempts, last_probability).

    With ``postselect`` the accepting branch is taken deterministically on the first attempt.
    """
    m = spec.m
    if m < 2:
        raise ValueError("inequality testing needs m >= 2")
    t = t if t is not None else max(spec.p or 0, 4)
    if t < 4:
        raise ValueError("t >= 4")
    P = spec.width
    rng = np.random.default_rng(seed)
    counter = OpCounter()
    prob = 0.0
    for attempt in range(1, max_attempts + 1):
        st = _ineq_attempt(spec.sigma_t, m, t, P, mode)
        if postselect:
            prob = st.postselect(["ineq", "ref"], (0.0, 0.0))
            ok = True
        else:
            probs = st.probabilities(["ineq", "ref"])
            prob = probs.get((0.0, 0.0), 0.0)
            outcome, _ = st.measure(["ineq", "ref"], rng)
            ok = outcome == (0.0, 0.0)
        counter.merge(st.counter)
        if ok:
            st.counter = counter
            return _finish_ineq(st, spec.sigma_t, m, t, spec.delta, P), attempt, prob
    raise SimulationError(f"no success in {max_attempts} attempts (success probability {prob:.4f})")


def ineq_target(sigma_t: float, m: int, t: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(j, amplitude) of the accepted state; exact Gaussian on the symmetric support when t is None."""
    jp = np.arange(0, 1 << (m - 1))
    g = step_amplitude(jp, sigma_t)
    r = ratio(jp, sigma_t) if t is None else ratio_bits(jp, sigma_t, t) / 2.0 ** t
    a = g * r
    j = np.concatenate([-jp[:0:-1], jp])
    amp = np.concatenate([a[:0:-1] / math.sqrt(2), [a[0]], a[1:] / math.sqrt(2)])
    return j, amp / np.linalg.norm(amp)


# Hartley transform

def qfht(state: SparseState, names: list[str]) -> SparseState:
    """Relabel |x> -> |H x> with H the normalized discrete Hartley transform."""
    N = len(names)
    k = N.bit_length() - 1
    if N != 1 << k:
        raise ValueError("qfht needs a power-of-2 register count")
    state.qrev(names)
    r = 1 / math.sqrt(2)
    for s in range(1, k + 1):
        L = 1 << s
        for base in range(0, N, L):
            odd = names[base + L // 2: base + L]
            for q in range(1, L // 4):
                ang = 2 * np.pi * q / L
                state.hs(math.cos(ang), math.sin(ang), odd[q], odd[L // 2 - q])
            for q in range(L // 2):
                state.qbf(names[base + q], odd[q], r)
    return state


def qfht_op_count(N: int) -> int:
    """Primitive operations of :func:`qfht` on N registers."""
    k = N.bit_length() - 1
    return (3 * k * N) // 4 - N // 4 + 1 - (1 << (-(-k // 2) - 1)) if k else 0


# Shear transform

def _shear(state, i, j, s, reg="shear"):
    state.load(reg, s)
    state.mul(i, j, reg)
    state.load(reg, s)


def shear_positions(udu: SparseUDU):
    """Yield (i, j, u_ij) over stored shears in block order: ss, sw, then ww rows by scale."""
    off = udu.offsets()
    n_ss = udu.sizes[udu.s0]
    ss = udu.shears[("ss", udu.s0, udu.s0)]
    for i in range(n_ss):
        base = i * n_ss - i * (i + 1) // 2
        for j in range(i + 1, n_ss):
            yield i, j, float(ss[base + j - (i + 1)])
        for c in range(udu.s0, udu.k):
            S = udu.shears[("sw", udu.s0, c)]
            for j in range(S.shape[1]):
                yield i, off[c] + j, float(S[i, j])
    for r in range(udu.s0, udu.k):
        n = udu.sizes[r]
        S = udu.shears[("ww", r, r)]
        dense = udu.diag_is_dense(r)
        for i in range(n):
            if dense:
                base = i * n - i * (i + 1) // 2
                for j in range(i + 1, n):
                    yield off[r] + i, off[r] + j, float(S[base + j - (i + 1)])
            else:
                w = udu.w
                for q in range(w):
                    if i < n - w:
                        yield off[r] + i, off[r] + i + 1 + q, float(S[i, q])
                    elif q < n - 1 - i:
                        yield off[r] + i, off[r] + i + 1 + q, float(S[i, q])
                if i <= w - 1:
                    for q in range(i, w):
                        yield off[r] + i, off[r] + n - w + q, float(S[n - 1 - i, q])
            for c in range(r + 1, udu.k):
                B = udu.shears[("ww", r, c)]
                cols = band_columns(i, r, c, udu.K, udu.w, udu.sizes[c])
                for q, j in enumerate(cols):
                    yield off[r] + i, off[c] + int(j), float(B[i, q])


def qst(state: SparseState, names: list[str], udu: SparseUDU, shear_layout: RegisterLayout | None = None):
    """|x> -> |(U^T)^{-1} x> as single-shear multiplications in ascending source row."""
    if len(names) != udu.N:
        raise ValueError(f"need {udu.N} registers, got {len(names)}")
    if shear_layout is None:
        lay = state.layouts[names[0]]
        top = max([abs(s) for _, _, s in shear_positions(udu)] + [1.0])
        shear_layout = RegisterLayout(lay.p + 2 + int(math.ceil(math.log2(top + 1))),
                                      2 + int(math.ceil(math.log2(top + 1))), True)
    state.add_register("shear", shear_layout)
    last = -1
    for i, j, s in shear_positions(udu):
        if i < last:
            raise AssertionError("shears visited out of row order")
        last = i
        _shear(state, names[i], names[j], -s)
    state.remove_register("shear")
    return state


def qst_op_count(udu: SparseUDU) -> int:
    return 3 * udu.nnz()
