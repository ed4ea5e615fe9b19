"""Coupling matrices, inverse-covariance matrices (ICM) and their sparse truncation.

Block rows of the multi-scale ICM are kept as circulant generating rows.  A block
(r, c) has size(r) rows and size(c) columns; row i is the generating row rolled by
i * 2^(c - r).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .wavelets import DerivativeOverlaps, FilterPair, lowpass_filter, wavelet_transform_matrix


def _check_modes(K: int, N: int) -> None:
    if N < 2 * (2 * K - 1):
        raise ValueError(f"N={N} is below the admissible minimum 2(2K-1)={2 * (2 * K - 1)}")


def coarsest_scale(K: int) -> int:
    return math.ceil(math.log2(4 * K - 2))


def scale_layout(K: int, N: int) -> tuple[int, int, int]:
    """(s0, k, n_ss): scale labels and the size of the coarse scaling block.

    n_ss = N / 2^L with L the largest level count keeping n_ss integral and >= 4K - 2.
    For N a power of two this is 2^s0 with k = log2 N.
    """
    _check_modes(K, N)
    levels = 0
    while N % 2 ** (levels + 1) == 0 and N // 2 ** (levels + 1) >= 4 * K - 2:
        levels += 1
    s0 = coarsest_scale(K)
    return s0, s0 + levels, N // 2 ** levels


def coupling_row_fixed(K: int, m0: float, N: int, delta: DerivativeOverlaps) -> np.ndarray:
    """Generating row of the fixed-scale coupling circulant m0^2 I - N^2 Delta (periodic)."""
    _check_modes(K, N)
    if m0 <= 0:
        raise ValueError("m0 must be positive")
    row = np.zeros(N)
    row[0] = m0 ** 2
    for ell in delta.ells:
        row[ell % N] -= N ** 2 * delta[int(ell)]
    return row


def circulant(row) -> np.ndarray:
    """Dense matrix whose i-th row is ``row`` rolled right by i."""
    row = np.asarray(row)
    n = len(row)
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return row[idx]


def strided_circulant(row, n_rows: int) -> np.ndarray:
    row = np.asarray(row)
    n = len(row)
    stride = n // n_rows
    idx = (np.arange(n)[None, :] - stride * np.arange(n_rows)[:, None]) % n
    return row[idx]


def coupling_eigenvalues(K: int, m0: float, N: int, delta: DerivativeOverlaps) -> np.ndarray:
    # sum-rule form: Delta_0 = -2 sum Delta_l turns cos into 1 - cos = 2 sin^2, so the
    # zero mode is exactly m0^2 and low modes keep full relative precision
    j = np.arange(N)
    out = np.full(N, m0 ** 2)
    for ell in range(1, 2 * K):
        out += 4 * N ** 2 * delta[ell] * np.sin(np.pi * ell * j / N) ** 2
    return out


def icm_eigenvalues(K: int, m0: float, N: int, delta: DerivativeOverlaps) -> np.ndarray:
    rad = coupling_eigenvalues(K, m0, N, delta)
    if np.any(rad < -1e-9 * max(1.0, np.max(np.abs(rad)))):
        raise ValueError(f"negative radicand {rad.min()!r}: derivative overlaps are inconsistent")
    return np.sqrt(np.clip(rad, 0.0, None))


def dht(x) -> np.ndarray:
    """Unitary discrete Hartley transform, kernel cos + sin."""
    x = np.asarray(x, dtype=float)
    F = np.fft.fft(x)
    return (F.real - F.imag) / math.sqrt(len(x))


def fixed_icm_row(lam, N: int | None = None) -> np.ndarray:
    """a_j = (1/N) sum_i lam_i cos(2 pi i j / N): generating row of the circulant square root."""
    lam = np.asarray(lam, dtype=float)
    return np.fft.ifft(lam).real


def _autocorr(f, g) -> dict[int, float]:
    """rho_t = sum_m f_m g_(m+t)."""
    L = len(f)
    return {t: float(sum(f[m] * g[m + t] for m in range(L) if 0 <= m + t < L)) for t in range(-(L - 1), L)}


def _sandwich_row(a: np.ndarray, rho: dict[int, float]) -> np.ndarray:
    """Generating row of F A G^T for a circulant A of even size n (result has size n/2)."""
    n = len(a)
    j2 = 2 * np.arange(n // 2)
    out = np.zeros(n // 2)
    for t, c in rho.items():
        if c:
            out += c * a[(j2 + t) % n]
    return out


def _left_filter(row: np.ndarray, n_rows: int, f) -> tuple[np.ndarray, int]:
    """Generating row of F B for a stride-s block B with ``n_rows`` rows."""
    n = len(row)
    stride = n // n_rows
    out = np.zeros(n)
    for m, c in enumerate(f):
        out += c * np.roll(row, m * stride)
    return out, n_rows // 2


@dataclass
class BlockCirculantMatrix:
    N: int
    K: int
    s0: int
    k: int
    blocks: dict = field(default_factory=dict)

    def size(self, scale: int) -> int:
        return self.N // 2 ** (self.k - scale)

    def rows_of(self, key) -> int:
        kind, r, c = key
        return self.size(r)

    def keys(self) -> list:
        return list(self.blocks)

    def block(self, key) -> np.ndarray:
        return strided_circulant(self.blocks[key], self.rows_of(key))

    def offsets(self) -> dict:
        """Start index of each diagonal block in the full matrix: 'ss' then ww scales."""
        out = {"ss": 0}
        pos = self.size(self.s0)
        for r in range(self.s0, self.k):
            out[r] = pos
            pos += self.size(r)
        return out

    def dense(self) -> np.ndarray:
        A = np.zeros((self.N, self.N))
        off = self.offsets()
        n_ss = self.size(self.s0)
        A[:n_ss, :n_ss] = self.block(("ss", self.s0, self.s0))
        for c in range(self.s0, self.k):
            B = self.block(("sw", self.s0, c))
            A[:n_ss, off[c]:off[c] + B.shape[1]] = B
            A[off[c]:off[c] + B.shape[1], :n_ss] = B.T
            for r in range(self.s0, c + 1):
                B = self.block(("ww", r, c))
                A[off[r]:off[r] + B.shape[0], off[c]:off[c] + B.shape[1]] = B
                if r != c:
                    A[off[c]:off[c] + B.shape[1], off[r]:off[r] + B.shape[0]] = B.T
        return A


def multiscale_from_fixed(a_fixed: np.ndarray, K: int, filters: FilterPair | None = None) -> BlockCirculantMatrix:
    """Multi-scale blocks of W A W^T for a circulant A given by its generating row."""
    N = len(a_fixed)
    s0, k, _ = scale_layout(K, N)
    fp = filters or lowpass_filter(K)
    h, g = fp.h, fp.g
    rho_hh, rho_hg, rho_gg = _autocorr(h, h), _autocorr(h, g), _autocorr(g, g)
    out = BlockCirculantMatrix(N=N, K=K, s0=s0, k=k)
    a = np.asarray(a_fixed, dtype=float)
    for c in range(k - 1, s0 - 1, -1):
        # a is the scaling-block row at scale c + 1
        out.blocks[("ww", c, c)] = _sandwich_row(a, rho_gg)
        cross = _sandwich_row(a, rho_hg)  # H A G^T, stride 1
        rows = len(cross)
        for r in range(c - 1, s0 - 1, -1):
            # ww(r, c) = G H ... H S_c; apply the H's incrementally
            probe, prow = _left_filter(cross, rows, g)
            out.blocks[("ww", r, c)] = probe
            cross, rows = _left_filter(cross, rows, h)
        out.blocks[("sw", s0, c)] = cross
        a = _sandwich_row(a, rho_hh)
    out.blocks[("ss", s0, s0)] = a
    return out


def multiscale_icm_rows(K: int, m0: float, N: int, delta: DerivativeOverlaps, filters: FilterPair | None = None) -> BlockCirculantMatrix:
    lam = icm_eigenvalues(K, m0, N, delta)
    return multiscale_from_fixed(fixed_icm_row(lam, N), K, filters)


def multiscale_transform(K: int, N: int, filters: FilterPair | None = None) -> np.ndarray:
    s0, k, _ = scale_layout(K, N)
    if k == s0:
        return np.eye(N)
    return wavelet_transform_matrix(0, k - s0, filters or lowpass_filter(K), "periodic", n=N)


def default_threshold(m0: float, eps_vac: float, N: int) -> float:
    return m0 * eps_vac * N ** -1.5


def theoretical_bandwidth(K: int, m0: float, N: int, eps_vac: float) -> int:
    """Upper bandwidth bound from the exponential decay of the diagonal ww blocks (natural log of N)."""
    return math.ceil(2 * (2 * K - 1) / m0 * math.log(N) * math.log2(4 * K * N / (m0 * eps_vac)))


def cyclic_bandwidth(row, eps: float) -> int:
    """Largest cyclic distance min(j, n - j) carrying an entry of magnitude >= eps."""
    row = np.asarray(row)
    n = len(row)
    j = np.nonzero(np.abs(row) >= eps)[0]
    if len(j) == 0:
        return 0
    return int(np.max(np.minimum(j, n - j)))


# Pattern helpers for a ww block (r, c).  s = 2^(c - r) is the circulant stride.

def last_col_nnz(r: int, c: int, w: int) -> int:
    return -(-w // 2 ** (c - r))


def width(r: int, c: int, K: int, w: int) -> int:
    return 2 * w + 1 + (2 ** (c - r) - 1) * (2 * K - 1)


def vert_width(r: int, c: int, K: int, w: int) -> int:
    s = 2 ** (c - r)
    return -(-width(r, c, K, w) // s)


def _theta(n: int) -> int:
    return 1 if n >= 0 else 0


def main_col_literal(i: int, r: int, c: int, K: int, w: int, n_cols: int) -> tuple[int, int]:
    """First and last main-part column of row i, exactly as the unit-step formula reads."""
    s = 2 ** (c - r)
    h = last_col_nnz(r, c, w)
    W = width(r, c, K, w)
    jF = (i - h) * s * _theta(i - h)
    jL = min(jF + W - 1, n_cols - 1) * _theta(i - h) + (W - w + i * s - 1) * _theta(h - i - 1)
    return jF, jL


def main_row_literal(j: int, r: int, c: int, K: int, w: int, n_rows: int) -> tuple[int, int]:
    s = 2 ** (c - r)
    h = last_col_nnz(r, c, w)
    W = width(r, c, K, w)
    H = vert_width(r, c, K, w)
    iF = -(-(j - (W - w - 1)) // s) * _theta(j - (W - w))
    iL = min(iF + H - 1, n_rows - 1) * _theta(j - (W - w)) + (h + j // s) * _theta((W - w) - j - 1)
    return iF, iL


def main_col(i: int, r: int, c: int, K: int, w: int, n_cols: int) -> tuple[int, int]:
    """Main-part column range of row i with the band anchored at i*s - w.

    Matches the literal formula whenever s divides w; otherwise the literal start
    (i - ceil(w/s)) s drifts left of the band.
    """
    s = 2 ** (c - r)
    W = width(r, c, K, w)
    start = i * s - w
    return max(start, 0), min(start + W - 1, n_cols - 1)


def band_columns(i: int, r: int, c: int, K: int, w: int, n_cols: int) -> np.ndarray:
    """Cyclic band of row i in block (r, c), ascending column order; whole row if the band wraps onto itself."""
    s = 2 ** (c - r)
    W = width(r, c, K, w)
    if W >= n_cols:
        return np.arange(n_cols)
    return np.sort((i * s - w + np.arange(W)) % n_cols)


def diag_upper_columns(i: int, n: int, w: int) -> np.ndarray:
    """Columns of row i right of the diagonal inside the cyclic band |j - i| <= w (mod n)."""
    if 2 * w + 1 >= n:
        return np.arange(i + 1, n)
    main = np.arange(i + 1, min(i + w, n - 1) + 1)
    wrap = np.arange(n - w + i, n) if i < w else np.arange(0)
    return np.concatenate([main, wrap])


@dataclass
class SparseBlockMatrix:
    """Thresholded multi-scale ICM with a banded position pattern for the ww blocks."""

    base: BlockCirculantMatrix
    eps_th: float
    w: int
    blocks: dict = field(default_factory=dict)
    bandwidths: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.base.N

    def block(self, key) -> np.ndarray:
        return strided_circulant(self.blocks[key], self.base.rows_of(key))

    def dense(self) -> np.ndarray:
        tmp = BlockCirculantMatrix(self.base.N, self.base.K, self.base.s0, self.base.k, dict(self.blocks))
        return tmp.dense()

    def nnz(self) -> int:
        total = 0
        for key, row in self.blocks.items():
            per = int(np.count_nonzero(row)) * self.base.rows_of(key)
            total += per if key[0] == "ss" or (key[0] == "ww" and key[1] == key[2]) else 2 * per
        return total

    def pattern_coverage(self) -> float:
        """Fraction of nonzero ww entries that fall inside the banded pattern windows."""
        inside = outside = 0
        K = self.base.K
        for (kind, r, c), row in self.blocks.items():
            if kind != "ww":
                continue
            nrows, ncols = self.base.size(r), self.base.size(c)
            B = self.block((kind, r, c))
            for i in range(nrows):
                nz = set(np.nonzero(B[i])[0].tolist())
                if r == c:
                    allowed = set(diag_upper_columns(i, ncols, self.w).tolist()) | {i}
                    allowed |= {j for j in range(ncols) if i in set(diag_upper_columns(j, ncols, self.w).tolist())}
                else:
                    allowed = set(band_columns(i, r, c, K, self.w, ncols).tolist())
                inside += len(nz & allowed)
                outside += len(nz - allowed)
        total = inside + outside
        return 1.0 if total == 0 else inside / total


def pattern_width(icm: BlockCirculantMatrix, rows: dict, K: int) -> int:
    """Smallest w whose band windows hold every nonzero of every ww block."""
    need = 0
    for (kind, r, c), row in rows.items():
        if kind != "ww":
            continue
        n = len(row)
        nz = np.nonzero(row)[0]
        if len(nz) == 0:
            continue
        if r == c:
            need = max(need, int(np.max(np.minimum(nz, n - nz))))
            continue
        # row 0 band starts at -w and spans W = 2w + 1 + (s - 1)(2K - 1) columns
        s = 2 ** (c - r)
        extra = (s - 1) * (2 * K - 1)
        for w in range(need, n + 1):
            W = 2 * w + 1 + extra
            if W >= n or np.all(((nz + w) % n) < W):
                need = w
                break
    return need


def truncate(icm: BlockCirculantMatrix, eps_th: float, w: int | None = None) -> SparseBlockMatrix:
    """Zero entries below eps_th; ww blocks get a banded position pattern of half-width w."""
    if eps_th < 0:
        raise ValueError("eps_th must be nonnegative")
    rows = {}
    for key, row in icm.blocks.items():
        r2 = row.copy()
        r2[np.abs(r2) < eps_th] = 0.0
        rows[key] = r2
    bw = {r: cyclic_bandwidth(rows[("ww", r, r)], max(eps_th, 1e-300)) for r in range(icm.s0, icm.k)}
    if w is None:
        w = pattern_width(icm, rows, icm.K)
    return SparseBlockMatrix(base=icm, eps_th=eps_th, w=int(w), blocks=rows, bandwidths=bw)


def certify_positive_definite(A: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix; raises if it is not positive."""
    lo = float(np.linalg.eigvalsh(A)[0])
    if lo <= 0:
        raise np.linalg.LinAlgError(f"truncated matrix is not positive definite (smallest eigenvalue {lo!r})")
    return lo


def sufficient_modes(cutoff: float, delta1_max: float, K: int | None = None) -> dict:
    if cutoff <= 0 or delta1_max <= 0:
        raise ValueError("cutoff and delta1_max must be positive")
    N = math.floor(2 * cutoff / delta1_max)
    out = {"N": N, "status": "ok"}
    if K is not None and N < 2 * (2 * K - 1):
        out["status"] = f"warning: N={N} below admissible minimum {2 * (2 * K - 1)}"
    return out


def condition_number(K: int, m0: float, n: int, delta: DerivativeOverlaps) -> float:
    """Spectral condition number of the fixed-scale coupling matrix on n modes."""
    ev = coupling_eigenvalues(K, m0, n, delta)
    return float(ev.max() / ev.min())


def decay_bound(K: int, m0: float, r: int, j, delta: DerivativeOverlaps) -> np.ndarray:
    kappa = condition_number(K, m0, 2 ** (r + 1), delta)
    xi = (2 * K - 1) * 2 ** (r + 2) / m0
    return 16 * K * m0 * kappa * 2.0 ** (-np.abs(np.asarray(j, dtype=float)) / xi)


def mass_defect_coupling(K: int, m0: float, N: int, delta: DerivativeOverlaps, site: int, strength: float) -> np.ndarray:
    if not 0 <= site < N:
        raise ValueError("defect site out of range")
    if strength < 0:
        raise ValueError("defect strength must be nonnegative")
    Kmat = circulant(coupling_row_fixed(K, m0, N, delta))
    Kmat[site, site] += strength
    return Kmat


def sqrtm_psd(M: np.ndarray) -> np.ndarray:
    ev, V = np.linalg.eigh(M)
    if ev.min() < -1e-10 * ev.max():
        raise np.linalg.LinAlgError(f"matrix has a negative eigenvalue {ev.min()!r}")
    return (V * np.sqrt(np.clip(ev, 0, None))) @ V.T


def defect_multiscale_icm(K: int, m0: float, N: int, delta: DerivativeOverlaps, site: int, strength: float) -> np.ndarray:
    """Dense multi-scale ICM with a point mass defect (circulant shortcuts no longer apply)."""
    A = sqrtm_psd(mass_defect_coupling(K, m0, N, delta, site, strength))
    W = multiscale_transform(K, N)
    return W @ A @ W.T


def block_bandwidths_dense(A: np.ndarray, K: int, N: int, eps_th: float) -> dict:
    """Upper bandwidth of each diagonal ww block of a dense multi-scale matrix (max over rows, cyclic)."""
    s0, k, n_ss = scale_layout(K, N)
    out = {}
    pos = n_ss
    for r in range(s0, k):
        n = N // 2 ** (k - r)
        B = A[pos:pos + n, pos:pos + n]
        best = 0
        for i in range(n):
            j = np.nonzero(np.abs(B[i]) >= eps_th)[0]
            if len(j):
                d = (j - i) % n
                best = max(best, int(np.max(np.minimum(d, n - d))))
        out[r] = best
        pos += n
    return out
