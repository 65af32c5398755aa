"""Exact unions of disjoint closed intervals on a line segment.

The partition builder tracks every region (remaining mass, satellites,
annulus-blocked zones) as an :class:`IntervalUnion` over one coordinate: the
circle coordinate for 1D systems, signed arclength along the reference disk
for 2D systems.  All set operations are exact in float endpoints.
"""

from __future__ import annotations

import numpy as np


class IntervalUnion:
    """Sorted union of pairwise-disjoint closed intervals [lo_i, hi_i]."""

    __slots__ = ("lo", "hi")

    def __init__(self, intervals=()):
        ivs = [(float(a), float(b)) for a, b in intervals if b > a]
        ivs.sort()
        lo, hi = [], []
        for a, b in ivs:
            if lo and a <= hi[-1]:
                hi[-1] = max(hi[-1], b)
            else:
                lo.append(a)
                hi.append(b)
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)

    @classmethod
    def empty(cls) -> "IntervalUnion":
        return cls(())

    @classmethod
    def single(cls, lo: float, hi: float) -> "IntervalUnion":
        return cls([(lo, hi)])

    def __len__(self) -> int:
        return len(self.lo)

    def __bool__(self) -> bool:
        return len(self.lo) > 0

    def intervals(self):
        return list(zip(self.lo.tolist(), self.hi.tolist()))

    @property
    def measure(self) -> float:
        return float(np.sum(self.hi - self.lo)) if len(self.lo) else 0.0

    def union(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion(self.intervals() + other.intervals())

    def intersect(self, other: "IntervalUnion") -> "IntervalUnion":
        out = []
        i = j = 0
        while i < len(self.lo) and j < len(other.lo):
            a = max(self.lo[i], other.lo[j])
            b = min(self.hi[i], other.hi[j])
            if b > a:
                out.append((a, b))
            if self.hi[i] < other.hi[j]:
                i += 1
            else:
                j += 1
        return IntervalUnion(out)

    def difference(self, other: "IntervalUnion") -> "IntervalUnion":
        out = []
        j = 0
        for a, b in zip(self.lo, self.hi):
            cur = a
            while j < len(other.lo) and other.hi[j] <= cur:
                j += 1
            k = j
            while k < len(other.lo) and other.lo[k] < b:
                if other.lo[k] > cur:
                    out.append((cur, other.lo[k]))
                cur = max(cur, other.hi[k])
                if cur >= b:
                    break
                k += 1
            if cur < b:
                out.append((cur, b))
        return IntervalUnion(out)

    def contains_point(self, x: float) -> bool:
        i = np.searchsorted(self.lo, x, side="right") - 1
        return i >= 0 and x <= self.hi[i]

    def overlaps(self, lo: float, hi: float) -> bool:
        """True iff [lo, hi] meets the union in a set of positive length."""
        i = np.searchsorted(self.lo, hi, side="left")
        for k in range(max(0, i - 1), min(len(self.lo), i + 1)):
            if min(hi, self.hi[k]) > max(lo, self.lo[k]):
                return True
        return False

    def clip(self, lo: float, hi: float) -> "IntervalUnion":
        return self.intersect(IntervalUnion.single(lo, hi))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Uniform points w.r.t. length; empty array when the union is empty."""
        if not len(self.lo) or count <= 0:
            return np.empty(0)
        lengths = self.hi - self.lo
        cum = np.cumsum(lengths)
        u = rng.uniform(0.0, cum[-1], size=count)
        idx = np.searchsorted(cum, u, side="right")
        offs = u - (cum[idx] - lengths[idx])
        return self.lo[idx] + offs
