"""Sparse-superposition simulator for registers of fixed-point numbers.

A state is a table of branches: one row of register values per basis state plus a
complex amplitude. Register values are held as doubles. In ``fixed`` mode every
arithmetic result is rounded to its register's grid; in ``real`` mode values are
left as computed. Bit-level gates go through the two's-complement bit pattern and
therefore need exactly representable values.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

OP_KINDS = ("rot", "angle", "shift", "mul", "comp", "ratio", "logic")


class SimulationError(RuntimeError):
    pass


class UncomputeError(SimulationError):
    """A register that should be restored to a known value is not."""


@dataclass(frozen=True)
class RegisterLayout:
    """p bits with m of them before the radix point."""

    p: int
    m: int
    signed: bool = True

    def __post_init__(self):
        if not 1 <= self.m <= self.p:
            raise ValueError(f"need 1 <= m <= p, got p={self.p}, m={self.m}")
        if self.p > 60:
            raise ValueError("at most 60 bits per register")

    @property
    def frac(self) -> int:
        return self.p - self.m

    @property
    def resolution(self) -> float:
        return 2.0 ** -self.frac

    @property
    def lo(self) -> float:
        return -(2.0 ** (self.m - 1)) if self.signed else 0.0

    @property
    def hi(self) -> float:
        top = 2.0 ** (self.m - 1) if self.signed else 2.0 ** self.m
        return top - self.resolution

    def representable(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        s = v * 2.0 ** self.frac
        return (np.rint(s) == s) & (v >= self.lo) & (v <= self.hi)

    def quantize(self, v) -> np.ndarray:
        """Round half to even onto the grid; no range check."""
        return np.rint(np.asarray(v, dtype=float) * 2.0 ** self.frac) * self.resolution

    def encode(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if not np.all(self.representable(v)):
            bad = v[~self.representable(v)].ravel()[0]
            raise SimulationError(f"value {bad!r} has no exact {self.p}-bit pattern (m={self.m})")
        pat = np.rint(v * 2.0 ** self.frac).astype(np.int64)
        return np.mod(pat, 1 << self.p)

    def decode(self, pat) -> np.ndarray:
        pat = np.asarray(pat, dtype=np.int64)
        if self.signed:
            pat = np.where(pat >= 1 << (self.p - 1), pat - (1 << self.p), pat)
        return pat.astype(float) * self.resolution

    def format(self, v: float) -> str:
        """Bit string, most significant bit first, radix point after m bits."""
        bits = format(int(self.encode(v)), f"0{self.p}b")
        return bits[:self.m] + ("." + bits[self.m:] if self.frac else "")


@dataclass
class OpCounter:
    counts: dict = field(default_factory=lambda: {k: 0 for k in OP_KINDS})

    def add(self, kind: str, n: int = 1):
        if kind not in self.counts:
            raise KeyError(kind)
        self.counts[kind] += n

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def report(self) -> dict:
        return dict(self.counts, total=self.total)

    def merge(self, other: "OpCounter"):
        for k, v in other.counts.items():
            self.counts[k] += v


def bit_reverse(i: int, k: int) -> int:
    return int(format(i, f"0{k}b")[::-1], 2) if k else 0


class SparseState:
    """Branches ``vals`` (S x R, column per register) with amplitudes ``amps``."""

    def __init__(self, mode: str = "real", check_limit: int = 1 << 16):
        if mode not in ("real", "fixed"):
            raise ValueError("mode must be 'real' or 'fixed'")
        self.mode = mode
        self.names: list[str] = []
        self.layouts: dict[str, RegisterLayout] = {}
        self.vals = np.zeros((1, 0), order="F")
        self.amps = np.ones(1, dtype=complex)
        self.counter = OpCounter()
        self.check_limit = check_limit

    # bookkeeping

    def copy(self) -> "SparseState":
        out = SparseState(self.mode, self.check_limit)
        out.names = list(self.names)
        out.layouts = dict(self.layouts)
        out.vals = self.vals.copy(order="F")
        out.amps = self.amps.copy()
        out.counter = OpCounter(dict(self.counter.counts))
        return out

    @property
    def size(self) -> int:
        return len(self.amps)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def idx(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no register named {name!r}") from None

    def col(self, name: str) -> np.ndarray:
        return self.vals[:, self.idx(name)]

    def _set(self, name: str, v: np.ndarray, op: str):
        lay = self.layouts[name]
        v = np.asarray(v, dtype=float) + 0.0
        if self.mode == "fixed":
            v = lay.quantize(v) + 0.0
            bad = (v < lay.lo) | (v > lay.hi)
            if np.any(bad):
                b = int(np.nonzero(bad)[0][0])
                raise OverflowError(f"{op}: register {name!r} overflows in branch {b} (value {v[b]!r})")
        self.vals[:, self.idx(name)] = v

    def add_register(self, name: str, layout: RegisterLayout, value: float = 0.0):
        if name in self.layouts:
            raise ValueError(f"register {name!r} exists")
        self.names.append(name)
        self.layouts[name] = layout
        self.vals = np.asfortranarray(np.column_stack([self.vals, np.zeros(self.size)]))
        if value:
            self._set(name, np.full(self.size, value), "add_register")

    def remove_register(self, name: str):
        """Deallocate a register that is zero in every branch."""
        c = self.col(name)
        if np.any(c != 0):
            raise UncomputeError(f"register {name!r} is not zero in {int(np.sum(c != 0))} branches")
        i = self.idx(name)
        self.vals = np.asfortranarray(np.delete(self.vals, i, axis=1))
        self.names.pop(i)
        del self.layouts[name]
        # an all-zero column never distinguished two rows, so no merge is needed

    def rename(self, old: str, new: str):
        i = self.idx(old)
        self.names[i] = new
        self.layouts[new] = self.layouts.pop(old)

    @classmethod
    def basis(cls, registers: dict, mode: str = "real") -> "SparseState":
        """Single basis state; ``registers`` maps name -> (layout, value)."""
        st = cls(mode)
        for name, (lay, v) in registers.items():
            st.add_register(name, lay, v)
        return st

    @classmethod
    def from_table(cls, names, layouts, vals, amps, mode: str = "real") -> "SparseState":
        st = cls(mode)
        st.names = list(names)
        st.layouts = dict(zip(names, layouts))
        st.vals = np.asfortranarray(np.asarray(vals, dtype=float).reshape(len(amps), len(names)))
        st.amps = np.asarray(amps, dtype=complex).copy()
        return st

    @classmethod
    def product(cls, states: Sequence["SparseState"], mode: str | None = None) -> "SparseState":
        """Tensor product; register names must be distinct. Rows follow mixed-radix order."""
        out = cls(mode or states[0].mode)
        sizes = [st.size for st in states]
        S = int(np.prod(sizes, dtype=np.int64))
        R = sum(len(st.names) for st in states)
        vals = np.empty((S, R), order="F")
        amps = np.ones(1, dtype=complex)
        col = 0
        for q, st in enumerate(states):
            inner = int(np.prod(sizes[q + 1:], dtype=np.int64))
            outer = int(np.prod(sizes[:q], dtype=np.int64))
            for c, n in enumerate(st.names):
                if n in out.layouts:
                    raise ValueError(f"duplicate register {n!r}")
                out.names.append(n)
                out.layouts[n] = st.layouts[n]
                vals[:, col] = np.tile(np.repeat(st.vals[:, c], inner), outer)
                col += 1
            amps = np.multiply.outer(amps, st.amps).ravel()
            out.counter.merge(st.counter)
        out.vals = vals
        out.amps = amps
        return out

    def _merge(self, warn_real: bool = True) -> int:
        """Combine identical rows; returns the number of collisions."""
        S = self.size
        if S <= 1:
            return 0
        rows = np.ascontiguousarray(self.vals + 0.0)
        view = rows.view(np.dtype((np.void, rows.dtype.itemsize * rows.shape[1]))).ravel()
        _, first, inv = np.unique(view, return_index=True, return_inverse=True)
        n = len(first)
        if n == S:
            return 0
        amps = np.zeros(n, dtype=complex)
        np.add.at(amps, inv.ravel(), self.amps)
        self.vals = np.asfortranarray(rows[first])
        self.amps = amps
        self._prune()
        return S - n

    def _prune(self, tol: float = 1e-15):
        keep = np.abs(self.amps) > tol
        if not np.all(keep):
            self.vals = np.asfortranarray(self.vals[keep])
            self.amps = self.amps[keep]

    def _check_injective(self, op: str):
        if self.mode == "fixed" or self.size <= self.check_limit:
            collisions = self._merge()
            if collisions:
                if self.mode == "fixed":
                    raise SimulationError(f"{op}: {collisions} branches collided (map not injective)")
                warnings.warn(f"{op}: {collisions} branches collided; amplitudes accumulated")

    # bit access

    def bits(self, name: str, bit: int) -> np.ndarray:
        lay = self.layouts[name]
        if not 0 <= bit < lay.p:
            raise IndexError(f"bit {bit} out of range for {lay.p}-bit register {name!r}")
        return (lay.encode(self.col(name)) >> bit) & 1

    def _set_pattern(self, name: str, pat):
        self.vals[:, self.idx(name)] = self.layouts[name].decode(pat) + 0.0

    def _flip(self, name: str, bit: int, mask):
        lay = self.layouts[name]
        pat = lay.encode(self.col(name))
        pat = np.where(mask, pat ^ (1 << bit), pat)
        self._set_pattern(name, pat)

    def _control_mask(self, controls) -> np.ndarray:
        mask = np.ones(self.size, dtype=bool)
        for reg, bit, val in controls or ():
            mask &= self.bits(reg, bit) == val
        return mask

    # logic gates

    def x(self, name: str, bit: int):
        self._flip(name, bit, np.ones(self.size, dtype=bool))
        self.counter.add("logic")

    def cnot(self, ctrl: str, cbit: int, tgt: str, tbit: int, ctrl_value: int = 1):
        self._flip(tgt, tbit, self.bits(ctrl, cbit) == ctrl_value)
        self.counter.add("logic")

    def swap_bits(self, a: str, abit: int, b: str, bbit: int):
        ba, bb = self.bits(a, abit), self.bits(b, bbit)
        differ = ba != bb
        if a == b:
            self._flip(a, abit, differ)
            self._flip(a, bbit, differ)
        else:
            self._flip(a, abit, differ)
            self._flip(b, bbit, differ)
        self.counter.add("logic")

    def swap(self, a: str, b: str):
        """Exchange the contents of two registers with the same layout."""
        if self.layouts[a] != self.layouts[b]:
            raise ValueError("swap needs identical layouts")
        ia, ib = self.idx(a), self.idx(b)
        self.vals[:, [ia, ib]] = self.vals[:, [ib, ia]]
        self.counter.add("logic")

    def shift(self, name: str, inverse: bool = False):
        """Cyclic right shift of the bit pattern (left shift when ``inverse``).

        In real mode the value is halved (doubled) exactly; this agrees with the cyclic
        shift whenever the bit that would wrap around is zero.
        """
        lay = self.layouts[name]
        c = self.col(name)
        if self.mode == "real":
            self.vals[:, self.idx(name)] = c * (2.0 if inverse else 0.5)
        else:
            pat = lay.encode(c)
            if inverse:
                pat = ((pat << 1) | (pat >> (lay.p - 1))) & ((1 << lay.p) - 1)
            else:
                pat = (pat >> 1) | ((pat & 1) << (lay.p - 1))
            self._set_pattern(name, pat)
        self.counter.add("shift")

    # branching gates

    def _single_qubit(self, name: str, bit: int, mats: np.ndarray, mask=None):
        """Apply per-branch 2x2 matrices ``mats`` (S x 2 x 2) where ``mask`` holds."""
        S = self.size
        if mask is None:
            mask = np.ones(S, dtype=bool)
        b = self.bits(name, bit)
        lay = self.layouts[name]
        pat = lay.encode(self.col(name))
        p0 = pat & ~np.int64(1 << bit)
        p1 = p0 | (1 << bit)
        # amplitude into |0> and |1> for each source branch
        a0 = mats[np.arange(S), 0, b] * self.amps
        a1 = mats[np.arange(S), 1, b] * self.amps
        keep = self.vals[~mask]
        keep_amps = self.amps[~mask]
        v0 = self.vals[mask].copy()
        v1 = self.vals[mask].copy()
        i = self.idx(name)
        v0[:, i] = lay.decode(p0[mask]) + 0.0
        v1[:, i] = lay.decode(p1[mask]) + 0.0
        self.vals = np.asfortranarray(np.vstack([keep, v0, v1]))
        self.amps = np.concatenate([keep_amps, a0[mask], a1[mask]])
        self._merge()

    @staticmethod
    def _rot_mats(theta) -> np.ndarray:
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

    def h(self, name: str, bit: int, controls=None):
        r = 1 / math.sqrt(2)
        mats = np.broadcast_to(np.array([[r, r], [r, -r]]), (self.size, 2, 2))
        self._single_qubit(name, bit, mats, self._control_mask(controls))
        self.counter.add("logic")

    def chad(self, ctrl: str, cbit: int, tgt: str, tbit: int, ctrl_value: int = 1):
        mats = np.broadcast_to(np.array([[1, 1], [1, -1]]) / math.sqrt(2), (self.size, 2, 2))
        self._single_qubit(tgt, tbit, mats, self.bits(ctrl, cbit) == ctrl_value)
        self.counter.add("logic")

    def rot(self, ang: str, name: str, bit: int, inverse: bool = False, controls=None):
        """|0> -> cos(2 pi eta)|0> + sin(2 pi eta)|1>, eta read from register ``ang``."""
        theta = 2 * np.pi * self.col(ang) * (-1 if inverse else 1)
        self._single_qubit(name, bit, self._rot_mats(theta), self._control_mask(controls))
        self.counter.add("rot")

    # arithmetic

    def toggle(self, kind: str, name: str, values, op: str | None = None):
        """Reversible write: 0 -> values, values -> 0, anything else is an error."""
        values = np.broadcast_to(np.asarray(values, dtype=float), (self.size,))
        lay = self.layouts[name]
        if self.mode == "fixed":
            values = lay.quantize(values)
        cur = self.col(name)
        ok = (cur == 0) | (cur == values)
        if not np.all(ok):
            b = int(np.nonzero(~ok)[0][0])
            raise UncomputeError(f"{op or kind}: register {name!r} holds {cur[b]!r} in branch {b}, "
                                 f"expected 0 or {values[b]!r}")
        self._set(name, np.where(cur == 0, values, 0.0), op or kind)
        self.counter.add(kind)

    def load(self, name: str, value: float):
        """Write (or unwrite) a classical constant."""
        self.toggle("logic", name, value, op="load")

    def erase(self, name: str, value: float):
        """Assert ``name`` equals ``value`` in every branch, then zero it."""
        self.toggle("logic", name, value, op="erase")

    def map(self, kind: str, name: str, fn: Callable[[np.ndarray], np.ndarray], op: str | None = None):
        """In-place bijection on one register."""
        self._set(name, fn(self.col(name)), op or kind)
        self.counter.add(kind)
        self._check_injective(op or kind)

    def mul(self, src: str, dst: str, factor, sign: int = 1, weight: int = 1):
        """dst <- dst + sign * factor * src; ``factor`` is a constant or a register name."""
        f = self.col(factor) if isinstance(factor, str) else float(factor)
        prod = self.col(src) * f
        if self.mode == "fixed":
            prod = self.layouts[dst].quantize(prod)
        self._set(dst, self.col(dst) + sign * prod, "mul")
        self.counter.add("mul", weight)

    def comp(self, a: str, b: str, flag: str, fbit: int = 0):
        """flag[fbit] ^= [a >= b]."""
        self._flip(flag, fbit, self.col(a) >= self.col(b))
        self.counter.add("comp")

    def qbf(self, i: str, j: str, scale: float = 1.0):
        """(x, y) -> scale * (x + y, x - y)."""
        x, y = self.col(i).copy(), self.col(j).copy()
        self._set(i, scale * (x + y), "qbf")
        self._set(j, scale * (x - y), "qbf")
        self.counter.add("mul")
        if self.mode == "fixed":
            self._check_injective("qbf")

    def hs(self, c: float, s: float, i: str, j: str):
        """(x, y) -> (x c + y s, x s - y c)."""
        if abs(c * c + s * s - 1) > 1e-12:
            raise ValueError("hs needs c^2 + s^2 = 1")
        if c <= 1e-12:
            raise ValueError("hs needs c > 0")
        x, y = self.col(i).copy(), self.col(j).copy()
        self._set(i, x * c + y * s, "hs")
        self._set(j, x * s - y * c, "hs")
        self.counter.add("mul")
        if self.mode == "fixed":
            self._check_injective("hs")

    def qrev(self, names: Sequence[str]):
        """Swap register i with register rev(i)."""
        N = len(names)
        k = N.bit_length() - 1
        if N != 1 << k:
            raise ValueError("qrev needs a power-of-2 register count")
        for i in range(N):
            r = bit_reverse(i, k)
            if r > i:
                self.swap(names[i], names[r])

    # measurement

    def _outcomes(self, targets) -> np.ndarray:
        cols = []
        for t in targets:
            if isinstance(t, str):
                cols.append(self.col(t))
            else:
                cols.append(self.bits(*t).astype(float))
        return np.column_stack(cols)

    def probabilities(self, targets) -> dict:
        out = self._outcomes(targets)
        probs: dict = {}
        w = np.abs(self.amps) ** 2
        keys, inv = np.unique(out, axis=0, return_inverse=True)
        sums = np.bincount(inv.ravel(), weights=w, minlength=len(keys))
        for k, p in zip(keys, sums):
            probs[tuple(float(v) for v in k)] = float(p)
        return probs

    def postselect(self, targets, outcome) -> float:
        """Keep the branches matching ``outcome``; renormalize; return its probability."""
        out = self._outcomes(targets)
        hit = np.all(out == np.asarray(outcome, dtype=float), axis=1)
        p = float(np.sum(np.abs(self.amps[hit]) ** 2))
        if p <= 0:
            raise SimulationError(f"outcome {tuple(outcome)} has zero probability")
        self.vals = np.asfortranarray(self.vals[hit])
        self.amps = self.amps[hit] / math.sqrt(p)
        return p

    def measure(self, targets, rng) -> tuple[tuple, float]:
        """Born-rule sample; collapses the state."""
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        probs = self.probabilities(targets)
        keys = sorted(probs)
        p = np.array([probs[k] for k in keys])
        pick = keys[int(rng.choice(len(keys), p=p / p.sum()))]
        return pick, self.postselect(targets, pick)

    # export

    def amplitude_map(self, names: Iterable[str] | None = None) -> dict:
        names = list(names) if names is not None else self.names
        idx = [self.idx(n) for n in names]
        return {tuple(float(v) for v in row[idx]): complex(a) for row, a in zip(self.vals, self.amps)}

    def dump_lines(self) -> list[str]:
        order = np.lexsort(self.vals.T[::-1]) if self.vals.shape[1] else np.arange(self.size)
        lines = []
        for r in order:
            vals = []
            for n, v in zip(self.names, self.vals[r]):
                lay = self.layouts[n]
                vals.append(lay.format(v) if lay.representable(v) else repr(float(v)))
            a = self.amps[r]
            lines.append(json.dumps({"values": vals, "re": float(f"{a.real:.17g}"), "im": float(f"{a.imag:.17g}")}))
        return lines
