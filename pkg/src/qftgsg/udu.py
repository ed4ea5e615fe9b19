"""UDU factorizations: dense, and incomplete-by-position on the banded multi-scale pattern."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .icm import SparseBlockMatrix, band_columns, diag_upper_columns, width


def dense_udu(A) -> tuple[np.ndarray, np.ndarray]:
    """A = U D U^T with U upper unit-triangular, eliminating from the last column backwards."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    U = np.eye(n)
    d = np.zeros(n)
    for i in range(n - 1, -1, -1):
        v = U[i, i + 1:] * d[i + 1:]
        d[i] = A[i, i] - U[i, i + 1:] @ v
        if d[i] <= 0:
            raise np.linalg.LinAlgError(f"nonpositive pivot d[{i}] = {d[i]!r}: matrix is not positive definite")
        U[:i, i] = (A[:i, i] - U[:i, i + 1:] @ v) / d[i]
    return U, d


@dataclass
class Pattern:
    """Upper-triangular position set: ``right[i]`` are the columns j > i kept in row i."""

    N: int
    right: list
    above: list = field(default_factory=list)

    def __post_init__(self):
        if not self.above:
            above = [[] for _ in range(self.N)]
            for i, cols in enumerate(self.right):
                for j in cols:
                    above[int(j)].append(i)
            self.above = [np.array(sorted(a), dtype=int) for a in above]

    def nnz(self) -> int:
        return int(sum(len(c) for c in self.right))

    def mask(self) -> np.ndarray:
        M = np.zeros((self.N, self.N), dtype=bool)
        for i, cols in enumerate(self.right):
            M[i, cols] = True
        return M


def block_pattern(sp: SparseBlockMatrix) -> Pattern:
    """ss and sw blocks dense, diagonal ww blocks cyclic-banded, off-diagonal ww blocks band windows."""
    base = sp.base
    N, K, w = base.N, base.K, sp.w
    off = base.offsets()
    n_ss = base.size(base.s0)
    right: list = [None] * N
    for i in range(n_ss):
        right[i] = np.arange(i + 1, N)
    for r in range(base.s0, base.k):
        nr = base.size(r)
        for i in range(nr):
            cols = [off[r] + diag_upper_columns(i, nr, w)]
            for c in range(r + 1, base.k):
                cols.append(off[c] + band_columns(i, r, c, K, w, base.size(c)))
            right[off[r] + i] = np.sort(np.concatenate(cols)).astype(int)
    return Pattern(N, right)


def incomplete_udu_dense(A, pattern: Pattern) -> tuple[np.ndarray, np.ndarray, int]:
    """UDU restricted to ``pattern``: entries of U outside it are held at zero.

    Returns (U, d, steps) where steps counts the multiply-adds a sparse implementation
    performs: only products of two pattern positions are counted.
    """
    A = np.asarray(A, dtype=float)
    N = A.shape[0]
    U = np.eye(N)
    d = np.zeros(N)
    M = pattern.mask()
    steps = 0
    for i in range(N - 1, -1, -1):
        J = pattern.right[i]
        P = pattern.above[i]
        v = U[i, J] * d[J]
        d[i] = A[i, i] - U[i, J] @ v
        if d[i] <= 0:
            raise np.linalg.LinAlgError(f"nonpositive pivot d[{i}] = {d[i]!r}; threshold too aggressive")
        if len(P):
            U[P, i] = (A[P, i] - U[np.ix_(P, J)] @ v) / d[i]
        steps += len(J) + int(np.count_nonzero(M[np.ix_(P, J)]))
    return U, d, steps


# Shear storage

def upper_unitriang_store(U) -> np.ndarray:
    U = np.asarray(U)
    n = U.shape[0]
    return np.concatenate([U[i, i + 1:] for i in range(n - 1)]) if n > 1 else np.zeros(0)


def upper_unitriang_load(s, n: int) -> np.ndarray:
    s = np.asarray(s)
    if len(s) != n * (n - 1) // 2:
        raise ValueError(f"expected {n * (n - 1) // 2} shears for a {n}x{n} block, got {len(s)}")
    U = np.eye(n)
    pos = 0
    for i in range(n - 1):
        U[i, i + 1:] = s[pos:pos + n - 1 - i]
        pos += n - 1 - i
    return U


def diag_store(U, w: int) -> np.ndarray:
    """Pack a cyclic-banded diagonal block (n x w); wrapped entries of row i < w fill row n-1-i."""
    U = np.asarray(U)
    n = U.shape[0]
    if w == 0:
        return np.zeros((n, 0))
    if 2 * w + 1 >= n:
        raise ValueError("band covers the block; store it densely")
    S = np.zeros((n, w))
    for i in range(n):
        jl = min(i + w, n - 1)
        S[i, :jl - i] = U[i, i + 1:jl + 1]
        if i < w:
            S[n - 1 - i, i:w] = U[i, n - w + i:n]
    return S


def diag_load(S, n: int, w: int) -> np.ndarray:
    S = np.asarray(S)
    if S.shape != (n, w):
        raise ValueError(f"diagonal storage must be {n}x{w}, got {S.shape}")
    U = np.eye(n)
    for i in range(n):
        jl = min(i + w, n - 1)
        U[i, i + 1:jl + 1] = S[i, :jl - i]
        if i < w:
            U[i, n - w + i:n] = S[n - 1 - i, i:w]
    return U


def offdiag_store(B, r: int, c: int, K: int, w: int) -> np.ndarray:
    """Pack an off-diagonal block row by row in ascending column order of its band window."""
    B = np.asarray(B)
    nr, nc = B.shape
    cols = [band_columns(i, r, c, K, w, nc) for i in range(nr)]
    return np.array([B[i, cols[i]] for i in range(nr)]).reshape(nr, len(cols[0]) if nr else 0)


def offdiag_load(S, r: int, c: int, K: int, w: int, nr: int, nc: int) -> np.ndarray:
    S = np.asarray(S)
    B = np.zeros((nr, nc))
    for i in range(nr):
        cols = band_columns(i, r, c, K, w, nc)
        if S.shape[1] != len(cols):
            raise ValueError("off-diagonal storage width does not match the band")
        B[i, cols] = S[i]
    return B


@dataclass
class SparseUDU:
    N: int
    K: int
    s0: int
    k: int
    w: int
    d: np.ndarray
    shears: dict
    sizes: dict
    steps: int = 0

    def offsets(self) -> dict:
        out = {"ss": 0}
        pos = self.sizes[self.s0]
        for r in range(self.s0, self.k):
            out[r] = pos
            pos += self.sizes[r]
        return out

    def diag_is_dense(self, r: int) -> bool:
        return 2 * self.w + 1 >= self.sizes[r]

    def unpack(self) -> np.ndarray:
        """Dense upper unit-triangular U."""
        N = self.N
        U = np.eye(N)
        off = self.offsets()
        n_ss = self.sizes[self.s0]
        U[:n_ss, :n_ss] = upper_unitriang_load(self.shears[("ss", self.s0, self.s0)], n_ss)
        for c in range(self.s0, self.k):
            nc = self.sizes[c]
            U[:n_ss, off[c]:off[c] + nc] = self.shears[("sw", self.s0, c)]
            for r in range(self.s0, c + 1):
                S = self.shears[("ww", r, c)]
                nr = self.sizes[r]
                if r == c:
                    blk = upper_unitriang_load(S, nr) if self.diag_is_dense(r) else diag_load(S, nr, self.w)
                else:
                    blk = offdiag_load(S, r, c, self.K, self.w, nr, nc)
                U[off[r]:off[r] + nr, off[c]:off[c] + nc] = blk
        return U

    def nnz(self) -> int:
        """Number of stored shear slots that hold a pattern position."""
        total = 0
        for key, S in self.shears.items():
            total += int(np.size(S))
        return total

    def row_shears(self):
        """Yield (i, [(j, u_ij), ...]) for every global row in ascending order, pattern positions only."""
        U = self.unpack()
        mask = self.pattern_mask()
        for i in range(self.N):
            cols = np.nonzero(mask[i])[0]
            yield i, [(int(j), float(U[i, j])) for j in cols]

    def pattern_mask(self) -> np.ndarray:
        N = self.N
        M = np.zeros((N, N), dtype=bool)
        off = self.offsets()
        n_ss = self.sizes[self.s0]
        M[:n_ss, :] = np.triu(np.ones((n_ss, N), dtype=bool), 1)
        for r in range(self.s0, self.k):
            nr = self.sizes[r]
            for i in range(nr):
                M[off[r] + i, off[r] + diag_upper_columns(i, nr, self.w)] = True
                for c in range(r + 1, self.k):
                    M[off[r] + i, off[c] + band_columns(i, r, c, self.K, self.w, self.sizes[c])] = True
        return M


def pack(U: np.ndarray, base_layout: dict) -> dict:
    """Split a dense U into the block storage for the given layout (s0, k, w, K, sizes)."""
    s0, k, w, K, sizes = (base_layout[x] for x in ("s0", "k", "w", "K", "sizes"))
    off = {"ss": 0}
    pos = sizes[s0]
    for r in range(s0, k):
        off[r] = pos
        pos += sizes[r]
    n_ss = sizes[s0]
    shears = {("ss", s0, s0): upper_unitriang_store(U[:n_ss, :n_ss])}
    for c in range(s0, k):
        nc = sizes[c]
        shears[("sw", s0, c)] = U[:n_ss, off[c]:off[c] + nc].copy()
        for r in range(s0, c + 1):
            nr = sizes[r]
            blk = U[off[r]:off[r] + nr, off[c]:off[c] + nc]
            if r == c:
                shears[("ww", r, c)] = upper_unitriang_store(blk) if 2 * w + 1 >= nr else diag_store(blk, w)
            else:
                shears[("ww", r, c)] = offdiag_store(blk, r, c, K, w)
    return shears


def incomplete_udu(sp: SparseBlockMatrix) -> SparseUDU:
    """Incomplete UDU of the thresholded multi-scale ICM, restricted to its banded block pattern."""
    base = sp.base
    A = sp.dense()
    pattern = block_pattern(sp)
    U, d, steps = incomplete_udu_dense(A, pattern)
    sizes = {r: base.size(r) for r in range(base.s0, base.k)} | {base.s0: base.size(base.s0)}
    layout = {"s0": base.s0, "k": base.k, "w": sp.w, "K": base.K, "sizes": sizes}
    return SparseUDU(N=base.N, K=base.K, s0=base.s0, k=base.k, w=sp.w, d=d,
                     shears=pack(U, layout), sizes=sizes, steps=steps)


def stored_width(r: int, c: int, K: int, w: int) -> int:
    """Columns per stored row of a ww block: width - (w + 1) on the diagonal."""
    return width(r, c, K, w) - (w + 1 if r == c else 0)
