"""Daubechies filters, derivative overlaps and discrete wavelet transform matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

BOUNDARY_SIGN = {"open": 0.0, "periodic": 1.0, "antiperiodic": -1.0}


@dataclass(frozen=True)
class FilterPair:
    K: int
    h: np.ndarray
    g: np.ndarray
    h_exact: tuple = ()
    precision_bits: int = 53

    def residuals(self) -> dict:
        """Max residual of each defining relation, evaluated at the working precision."""
        if not self.h_exact:
            return filter_residuals(self.h, self.K)
        with mpmath.workprec(self.precision_bits):
            return filter_residuals(self.h_exact, self.K)


@dataclass(frozen=True)
class DerivativeOverlaps:
    """Coefficients Delta_l for l in [-(2K-2), 2K-2]; ``values[l + 2K - 2]`` holds Delta_l."""

    K: int
    order: int
    values: np.ndarray

    @property
    def offset(self) -> int:
        return 2 * self.K - 2

    def __getitem__(self, ell: int) -> float:
        j = ell + self.offset
        if 0 <= j < len(self.values):
            return float(self.values[j])
        return 0.0

    @property
    def ells(self) -> np.ndarray:
        return np.arange(-self.offset, self.offset + 1)

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_K(K: int, minimum: int = 1) -> None:
    if not isinstance(K, (int, np.integer)) or K < minimum:
        raise ValueError(f"wavelet index K must be an integer >= {minimum}, got {K!r}")


def daubechies_polynomial(K: int) -> np.ndarray:
    """Coefficients (highest power first) of z^(K-1) P(1/2 - 1/(4z) - z/4).

    With y = -(z-1)^2/(4z), each term z^(K-1) y^l becomes (-1/4)^l (z-1)^(2l) z^(K-1-l).
    """
    deg = 2 * K - 2
    coeffs = np.zeros(deg + 1)  # ascending powers
    for ell in range(K):
        c = math.comb(K - 1 + ell, ell) * (-0.25) ** ell
        # (z-1)^(2l) in ascending powers
        sq = np.array([math.comb(2 * ell, i) * (-1) ** (2 * ell - i) for i in range(2 * ell + 1)], dtype=float)
        shift = K - 1 - ell
        coeffs[shift:shift + 2 * ell + 1] += c * sq
    return coeffs[::-1].copy()


def durand_kerner(coeffs, precision_bits: int = 64, max_iter: int = 10_000, seed: int = 0) -> list:
    """All complex roots of a polynomial (coefficients highest power first) by damped Weierstrass iteration.

    Runs in mpmath at ``precision_bits`` + 16 bits; stops once every update is below 2^-precision_bits.
    """
    with mpmath.workprec(precision_bits + 16):
        a = [mpmath.mpc(c) for c in coeffs]
        lead = a[0]
        a = [c / lead for c in a]
        n = len(a) - 1
        if n < 1:
            return []
        rng = np.random.default_rng(seed)
        radius = 1 + max(abs(c) for c in a[1:])  # Cauchy bound
        z = [0.5 * radius * mpmath.expj(2 * mpmath.pi * (i + 0.25) / n + rng.uniform(-0.1, 0.1)) for i in range(n)]
        tol = mpmath.mpf(2) ** -precision_bits
        for _ in range(max_iter):
            biggest = mpmath.mpf(0)
            for i in range(n):
                den = mpmath.mpc(1)
                for j in range(n):
                    if j != i:
                        den *= z[i] - z[j]
                step = mpmath.polyval(a, z[i]) / den
                # damping: cap the move at the Cauchy radius
                if abs(step) > radius:
                    step *= radius / abs(step)
                z[i] -= step
                biggest = max(biggest, abs(step))
            if biggest <= tol:
                return z
    raise RuntimeError(f"root finding did not converge for polynomial of degree {n}")


def lowpass_filter(K: int, precision_bits: int = 96) -> FilterPair:
    """Daubechies-K low-pass and high-pass filters by spectral factorization."""
    _check_K(K)
    if precision_bits < 32:
        raise ValueError("precision_bits must be at least 32")
    roots = durand_kerner(daubechies_polynomial(K), precision_bits) if K > 1 else []
    with mpmath.workprec(precision_bits + 16):
        inside = [r for r in roots if abs(r) < 1]
        if len(inside) != K - 1:
            raise RuntimeError(f"expected {K - 1} roots inside the unit circle, found {len(inside)}")
        poly = [mpmath.mpc(1)]
        factors = [[1, 1]] * K + [[1, -r] for r in inside]
        for f in factors:
            out = [mpmath.mpc(0)] * (len(poly) + 1)
            for i, c in enumerate(poly):
                out[i] += c * f[0]
                out[i + 1] += c * f[1]
            poly = out
        scale = max(abs(c.real) for c in poly)
        if max(abs(c.imag) for c in poly) > 1e-12 * scale:
            raise RuntimeError("expanded filter polynomial is not real")
        re = [c.real for c in poly]
        norm = mpmath.sqrt(mpmath.fsum(c * c for c in re))
        exact = [c / norm for c in re]
        if mpmath.fsum(exact) < 0:
            exact = [-c for c in exact]
    h = np.array([float(c) for c in exact])
    return FilterPair(K=K, h=h, g=highpass_from_lowpass(h), h_exact=tuple(exact), precision_bits=precision_bits)


def highpass_from_lowpass(h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    L = len(h)
    return np.array([(-1) ** ell * h[L - 1 - ell] for ell in range(L)])


def filter_residuals(h, K: int, relative: bool = False) -> dict:
    """Residuals of the four defining relations.

    With ``relative`` the moment residuals are divided by the sum of absolute terms, the
    scale below which a rounded filter cannot resolve cancellation.
    """
    h = list(h)
    L = len(h)
    fsum = mpmath.fsum
    ortho = 0
    for shift in range(L // 2):
        val = fsum(h[i + 2 * shift] * h[i] for i in range(L - 2 * shift))
        ortho = max(ortho, abs(val - (1 if shift == 0 else 0)))
    moments = 0
    for n in range(K):
        terms = [(-1) ** ell * mpmath.mpf(ell) ** n * h[L - 1 - ell] for ell in range(L)]
        res = abs(fsum(terms))
        if relative:
            res /= fsum(abs(t) for t in terms)
        moments = max(moments, res)
    g = [(-1) ** ell * h[L - 1 - ell] for ell in range(L)]
    hp = max(abs(g[ell] - (-1) ** ell * h[L - 1 - ell]) for ell in range(L))
    return {
        "sum": float(abs(fsum(h) - mpmath.sqrt(2))),
        "orthonormality": float(ortho),
        "highpass": float(hp),
        "moments": float(moments),
    }


def autocorrelation_odd(K: int) -> np.ndarray:
    """Odd autocorrelation coefficients a_1, a_3, ..., a_(2K-1) of the Daubechies-K filter."""
    C = (math.factorial(2 * K - 1) / (math.factorial(K - 1) * 4 ** (K - 1))) ** 2
    return np.array([
        (-1) ** (k - 1) * C / (math.factorial(K - k) * math.factorial(K + k - 1) * (2 * k - 1))
        for k in range(1, K + 1)
    ])


def overlap_system(K: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear system M x = 1 for x_0..x_(2K-2) of the second-order overlaps.

    Each row is the two-scale refinement identity 4 x_(2m) - x_m + 2 sum_k a_(2k-1)(...) = 0
    with the moment normalisation sum_n n^2 x_n = 1 added to it.
    """
    n = 2 * K - 1
    a = autocorrelation_odd(K)
    M = np.zeros((n, n))
    cols = np.arange(n)
    for m in range(n):
        M[m] += cols.astype(float) ** 2
        if 2 * m < n:
            M[m, 2 * m] += 4.0
        M[m, m] -= 1.0
        for k in range(1, K + 1):
            lo, hi = abs(2 * m - (2 * k - 1)), 2 * m + 2 * k - 1
            if lo < n:
                M[m, lo] += 2.0 * a[k - 1]
            if hi < n:
                M[m, hi] += 2.0 * a[k - 1]
    return M, np.ones(n)


def derivative_overlaps_2(K: int) -> DerivativeOverlaps:
    _check_K(K, 2)
    M, b = overlap_system(K)
    if np.linalg.cond(M) > 1e12:
        raise np.linalg.LinAlgError(f"overlap system is singular for K={K}")
    x = np.linalg.solve(M, b)
    vals = np.concatenate([x[:0:-1], x])
    return DerivativeOverlaps(K=K, order=2, values=vals)


def laplacian_overlaps(K: int = 2) -> DerivativeOverlaps:
    """Three-point second-difference stencil (1, -2, 1) padded to the K index range."""
    vals = np.zeros(4 * K - 3)
    c = 2 * K - 2
    vals[c - 1:c + 2] = (1.0, -2.0, 1.0)
    return DerivativeOverlaps(K=K, order=2, values=vals)


def second_overlaps(K: int) -> DerivativeOverlaps:
    """Second-order overlaps used by the pipelines.

    For K = 2 the overlap system has a one-dimensional null space, so the
    three-point stencil (which satisfies both sum rules) stands in.
    """
    if K == 2:
        return laplacian_overlaps(2)
    return derivative_overlaps_2(K)


def scaling_function(h, depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Cascade evaluation of s on the dyadic grid x = j / 2^depth over its support [0, L-1]."""
    h = np.asarray(h, dtype=float)
    L = len(h)
    # values at the integers: eigenvector of T_ij = sqrt(2) h_(2i-j) with eigenvalue 1
    T = np.zeros((L, L))
    for i in range(L):
        for j in range(L):
            if 0 <= 2 * i - j < L:
                T[i, j] = math.sqrt(2.0) * h[2 * i - j]
    w, v = np.linalg.eig(T)
    idx = int(np.argmin(np.abs(w - 1.0)))
    s = np.real(v[:, idx])
    s = s / s.sum()
    for level in range(1, depth + 1):
        step = 2 ** level
        npts = (L - 1) * step + 1
        new = np.zeros(npts)
        new[::2] = s
        # odd points: s(x) = sqrt(2) sum_l h_l s(2x - l), with 2x on the previous grid
        odd = np.arange(1, npts, 2)
        prev = len(s)
        half = step // 2
        acc = np.zeros(len(odd))
        for ell in range(L):
            idx2 = odd - ell * half  # index of 2x - l on the previous grid
            ok = (idx2 >= 0) & (idx2 < prev)
            acc[ok] += h[ell] * s[idx2[ok]]
        new[odd] = math.sqrt(2.0) * acc
        s = new
    x = np.arange(len(s)) / 2 ** depth
    return x, s


def _shifted_products(s: np.ndarray, ds: np.ndarray, step: int, span: int, dx: float) -> np.ndarray:
    out = np.zeros(2 * span + 1)
    n = len(s)
    for ell in range(-span, span + 1):
        # integral of s(x - l) ds(x): shift by l grid units of size 'step'
        off = ell * step
        if off >= 0:
            a, b = s[:n - off] if off else s, ds[off:]
        else:
            a, b = s[-off:], ds[:n + off]
        prod = a * b
        out[ell + span] = dx * (prod.sum() - 0.5 * (prod[0] + prod[-1]))
    return out


def _quadrature_overlaps(s: np.ndarray, depth: int, order: int, span: int) -> np.ndarray:
    dx = 1.0 / 2 ** depth
    pad = np.concatenate([[0.0], s, [0.0]])
    if order == 1:
        ds = (pad[2:] - pad[:-2]) / (2 * dx)
    elif order == 2:
        ds = (pad[2:] - 2 * pad[1:-1] + pad[:-2]) / dx ** 2
    else:
        raise ValueError("order must be 1 or 2")
    vals = _shifted_products(s, ds, 2 ** depth, span, dx)
    if order == 1:
        return 0.5 * (vals - vals[::-1])
    return 0.5 * (vals + vals[::-1])


def _shanks_limit(seq: list[float]) -> float:
    if max(seq) - min(seq) < 1e-300:
        return seq[-1]
    with mpmath.workdps(30):
        try:
            return float(mpmath.shanks([mpmath.mpf(v) for v in seq])[-1][-1])
        except ZeroDivisionError:
            return seq[-1]


def cascade_overlaps(K: int, order: int, depth: int = 12, accelerate: bool = True) -> DerivativeOverlaps:
    """Derivative overlaps by cascade evaluation, finite differences and the trapezoid rule.

    The quadrature converges geometrically but slowly (the rate is set by the subdominant
    eigenvalue of the refinement operator), so by default the sequence over depths 2..depth
    is passed through the Wynn epsilon algorithm.
    """
    _check_K(K, 2)
    fp = lowpass_filter(K)
    _, s = scaling_function(fp.h, depth)
    span = 2 * K - 2
    if not accelerate:
        return DerivativeOverlaps(K=K, order=order, values=_quadrature_overlaps(s, depth, order, span))
    # coarser dyadic grids are exact subsamples of the finest one
    rows = [_quadrature_overlaps(s[::2 ** (depth - d)], d, order, span) for d in range(2, depth + 1)]
    table = np.array(rows)
    vals = np.array([_shanks_limit(list(table[:, j])) for j in range(table.shape[1])])
    if order == 1:
        vals = 0.5 * (vals - vals[::-1])
    else:
        vals = 0.5 * (vals + vals[::-1])
    return DerivativeOverlaps(K=K, order=order, values=vals)


def derivative_overlaps_1(K: int, grid_depth: int = 12) -> DerivativeOverlaps:
    if grid_depth < 10:
        raise ValueError("grid_depth must be at least 10")
    return cascade_overlaps(K, 1, grid_depth)


def min_block_size(K: int) -> int:
    return 2 * (2 * K - 1)


def filter_matrix(n: int, coeffs, boundary: str = "periodic") -> np.ndarray:
    """n/2 x n matrix with row i holding coeffs[m] at column (2i + m) mod n."""
    b = BOUNDARY_SIGN[boundary]
    out = np.zeros((n // 2, n))
    for i in range(n // 2):
        for m, c in enumerate(coeffs):
            col = 2 * i + m
            if col >= n:
                out[i, col % n] += b * c
            else:
                out[i, col] += c
    return out


def wavelet_transform_matrix(k: int, d: int, filters: FilterPair, boundary: str = "periodic", n: int | None = None) -> np.ndarray:
    """Dense d-level transform on n = 2^k points (or an explicit n divisible by 2^d).

    Output ordering: coarsest scaling block first, then wavelet blocks from coarse to fine.
    """
    if boundary not in BOUNDARY_SIGN:
        raise ValueError(f"unknown boundary {boundary!r}")
    n = 2 ** k if n is None else n
    if d < 1 or n % 2 ** d:
        raise ValueError(f"cannot apply {d} levels to {n} points")
    coarsest = n // 2 ** (d - 1)
    if boundary == "periodic" and coarsest < min_block_size(filters.K):
        raise ValueError(f"level {d} too deep for K={filters.K}: block size {coarsest} < {min_block_size(filters.K)}")
    W = np.eye(n)
    size = n
    for _ in range(d):
        step = np.eye(n)
        step[:size, :size] = np.vstack([filter_matrix(size, filters.h, boundary),
                                        filter_matrix(size, filters.g, boundary)])
        W = step @ W
        size //= 2
    return W


def apply_transform(x, d: int, filters: FilterPair) -> np.ndarray:
    """Periodic d-level transform by circular convolution; agrees with the dense matrix form."""
    x = np.asarray(x, dtype=float)
    out = x.copy()
    size = len(x)
    L = len(filters.h)
    for _ in range(d):
        seg = out[:size]
        idx = (2 * np.arange(size // 2)[:, None] + np.arange(L)[None, :]) % size
        lo = seg[idx] @ filters.h
        hi = seg[idx] @ filters.g
        out[:size // 2] = lo
        out[size // 2:size] = hi
        size //= 2
    return out


def composed_row_nnz(K: int, j: int) -> int:
    """Support length of a level-j composed filter: (2^j - 1)(2K - 1) + 1."""
    return (2 ** j - 1) * (2 * K - 1) + 1
