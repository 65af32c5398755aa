"""Inductive construction of a Markov family on a reference disk.

Per step n: cover the sampled hyperbolic points by pre-balls, generate
crossing candidates (core = pullback of the base disk, collar = pullback of
the doubled disk), accept a greedy maximal disjoint family away from the
shrinking annuli of earlier choices, and book satellite mass near chosen
elements and near the disk boundary.  The remaining-mass curve Leb(Delta_n)
and the recurrence times R = n + m are the main outputs.

All regions live in one coordinate: the circle coordinate (1D) or signed
arclength along the reference disk (2D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry, systems
from .errors import NoCrossing, StallAbort, ValidationError
from .hyperbolic import HyperbolicParams, hyperbolic_times, orbit_logs_batch
from .regions import IntervalUnion
from .seeding import PHASE_BUILD, stream


@dataclass
class PartitionParams:
    """Build-phase knobs; None fields are resolved before the main loop."""

    n0: int = 5
    n_max: int = 40
    n_stall: int = None
    samples_per_step: int = 1200
    m_cap: int = 8
    delta1: float = 0.1
    delta1_prime: float = None
    delta0: float = None
    p: float = None
    n_cross: int = None          # N0; None triggers the reference search
    delta_s: float = 0.04
    resolution: float = 1e-3
    max_gap: float = 0.02
    seed: int = 0

    def resolved(self, n_cross: int) -> "PartitionParams":
        out = PartitionParams(**self.__dict__)
        out.n_cross = n_cross
        if out.delta1_prime is None:
            out.delta1_prime = out.delta1 / 10.0
        if out.n_stall is None:
            out.n_stall = 3 * n_cross
        return out


@dataclass
class Candidate:
    """One base point with its crossing pullbacks; m maps to (core, collar)."""

    x_param: float
    n: int
    m: int                      # smallest crossing iterate
    core: tuple
    collar: tuple
    vprime: tuple
    crossings: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return self.n + self.m


@dataclass
class Element:
    index: int
    x_param: float
    n: int
    m: int
    R: int
    core: tuple
    collar: tuple
    w0: tuple                   # annulus widths (left, right) at k = n

    def annulus_zone(self, k: int, sigma: float) -> tuple:
        """Blocked interval core + annulus at step k >= n (widths shrink)."""
        decay = sigma ** ((k - self.n) / 2.0)
        return (self.core[0] - self.w0[0] * decay, self.core[1] + self.w0[1] * decay)

    def to_json(self) -> dict:
        return {
            "index": self.index, "x_param": self.x_param, "n": self.n,
            "m": self.m, "R": self.R,
            "core": list(self.core), "collar": list(self.collar),
            "w0": list(self.w0),
        }


@dataclass
class BuilderState:
    step: int
    delta_n: IntervalUnion
    elements: list = field(default_factory=list)
    accepted_by_step: dict = field(default_factory=dict)
    satellites: dict = field(default_factory=dict)      # n -> [(idx, measure, intervals)]
    boundary_sat: dict = field(default_factory=dict)    # n -> (measure, intervals)
    i_n_sizes: dict = field(default_factory=dict)
    no_crossing: list = field(default_factory=list)
    delta_curve: list = field(default_factory=list)


@dataclass
class Partition:
    elements: list
    uncovered_mass: float
    delta_curve: np.ndarray          # rows (n, Leb(Delta_n))
    frame: tuple
    p: float
    delta0: float
    n_cross: int
    hyp: HyperbolicParams
    params: PartitionParams
    state: BuilderState
    sys_json: dict
    constants: dict = field(default_factory=dict)

    @property
    def total_mass(self) -> float:
        return self.frame[1] - self.frame[0]

    def core_mass(self) -> float:
        return float(sum(e.core[1] - e.core[0] for e in self.elements))


# ---------------------------------------------------------------------------
# Disk operations: 1D circle arcs and 2D disk arclength.
# ---------------------------------------------------------------------------

class CircleOps:
    """Geometry back-end for 1D systems; params are circle coordinates."""

    dim = 1

    def __init__(self, sys, p: float, delta0: float):
        if not (2 * delta0 < p % 1.0 < 1.0 - 2 * delta0):
            raise ValidationError("place the base arc away from 0 so frames do not wrap")
        self.sys = sys
        self.p = p % 1.0
        self.delta0 = delta0
        self.frame = (self.p - delta0, self.p + delta0)
        self.base0 = (self.p - delta0, self.p + delta0)
        self.base1 = (self.p - 2 * delta0, self.p + 2 * delta0)

    def sample(self, rng, count: int, region: IntervalUnion = None) -> np.ndarray:
        if region is not None and region:
            return region.sample(rng, count)
        return rng.uniform(self.frame[0], self.frame[1], size=count)

    def orbit_logs(self, params: np.ndarray, n: int) -> np.ndarray:
        logs, _ = orbit_logs_batch(self.sys, params % 1.0, n, on_break="mask")
        return logs

    def vprime_bounds(self, params: np.ndarray, n: int, delta1_prime: float,
                      logs: np.ndarray = None):
        """Pre-ball bounds, first order in delta1_prime when logs are supplied.

        The first-order halfwidth delta1' / (f^n)'(x) is exact for piecewise
        linear members and off by O(C2 * delta1'^2) otherwise, which only
        shifts where candidates are sought; element pullbacks stay exact.
        """
        xs = params % 1.0
        if logs is not None:
            halfw = delta1_prime * np.exp(np.sum(logs[:, :n], axis=1))
            return params - halfw, params + halfw
        d_lo = geometry.separation_inverse_batch(self.sys, xs, n,
                                                 np.full(len(xs), -delta1_prime))
        d_hi = geometry.separation_inverse_batch(self.sys, xs, n,
                                                 np.full(len(xs), delta1_prime))
        return params + d_lo, params + d_hi

    def crossings(self, params, n: int, v_lo, v_hi, m_cap: int):
        """Per point, dict m -> (core, collar) for every crossing m <= m_cap.

        Windows are tracked as lift offsets around the orbit of each base
        point; crossing translates come from integer arithmetic on the lift;
        pullbacks from a Newton solve seeded at first order (exact for the
        linear members, quadratically convergent otherwise) with a bisection
        fallback.
        """
        sys = self.sys
        xs = params % 1.0
        e_lo = systems.propagate_separation(sys, xs, v_lo - params, n)
        e_hi = systems.propagate_separation(sys, xs, v_hi - params, n)
        z = xs.copy()
        for _ in range(n):
            z = systems.step_many(sys, z)
        out = [dict() for _ in range(len(xs))]
        b0_lo, b0_hi = self.base0
        b1_lo, b1_hi = self.base1
        mid1 = 0.5 * (b1_lo + b1_hi)
        for m in range(1, m_cap + 1):
            e_lo = systems.lift_gap(sys, z, e_lo)
            e_hi = systems.lift_gap(sys, z, e_hi)
            z = systems.step_many(sys, z)
            w_lo = z + e_lo
            w_hi = z + e_hi
            k_min = np.ceil(w_lo - b1_lo)
            k_max = np.floor(w_hi - b1_hi)
            hit = np.nonzero(k_max >= k_min)[0]
            if len(hit) == 0:
                continue
            k = np.clip(np.round(0.5 * (w_lo + w_hi)[hit] - mid1),
                        k_min[hit], k_max[hit])
            targets = np.stack([
                b1_lo + k - z[hit], b0_lo + k - z[hit],
                b0_hi + k - z[hit], b1_hi + k - z[hit],
            ])  # lift offsets from f^{n+m}(x)
            flat_x = np.tile(xs[hit], 4)
            flat_lo = np.tile(v_lo[hit] - params[hit], 4)
            flat_hi = np.tile(v_hi[hit] - params[hit], 4)
            d = _separation_inverse_newton(sys, flat_x, n + m, targets.ravel(),
                                           flat_lo, flat_hi)
            d = d.reshape(4, len(hit))
            for j, i in enumerate(hit):
                collar = (params[i] + d[0, j], params[i] + d[3, j])
                core = (params[i] + d[1, j], params[i] + d[2, j])
                out[i][m] = (core, collar)
        return out


def _sep_and_deriv(sys, xs, d, n: int):
    """Lift separation after n steps and the derivative d(sep)/d(d)."""
    x = np.asarray(xs, dtype=float).copy()
    s = np.asarray(d, dtype=float).copy()
    deriv = np.ones_like(s)
    for _ in range(n):
        deriv *= systems.derivative_1d(sys, (x + s) % 1.0)
        s = systems.lift_gap(sys, x, s)
        x = systems.step_many(sys, x)
    return s, deriv


def _separation_inverse_newton(sys, xs, n: int, targets, lo0, hi0,
                               tol: float = 1e-13, max_iter: int = 6):
    """Solve propagate_separation = target by safeguarded Newton iteration.

    Seeded at target / (f^n)'(x); exact in one step for linear branches.
    Convergence is judged on the domain increment (the image coordinate loses
    n*log2(stretch) bits and cannot meet an absolute image tolerance).
    Entries that fail to converge fall back to bracketed bisection.
    """
    t = np.asarray(targets, dtype=float)
    xs = np.asarray(xs, dtype=float)
    _, d0deriv = _sep_and_deriv(sys, xs, np.zeros_like(t), n)
    d = np.clip(t / d0deriv, lo0, hi0)
    ok = np.zeros(len(t), dtype=bool)
    for _ in range(max_iter):
        val, deriv = _sep_and_deriv(sys, xs, d, n)
        step = (val - t) / deriv
        ok = np.abs(step) <= tol * (1.0 + np.abs(d))
        if np.all(ok):
            break
        d = np.where(ok, d, np.clip(d - step, lo0, hi0))
    if not np.all(ok):
        bad = ~ok
        d_bad = _separation_inverse_bracketed(sys, xs[bad], n, t[bad],
                                              np.asarray(lo0)[bad],
                                              np.asarray(hi0)[bad])
        d = d.copy()
        d[bad] = d_bad
    return d


def _separation_inverse_bracketed(sys, xs, n: int, targets, lo0, hi0,
                                  tol: float = 1e-13, max_iter: int = 70):
    """Bisection for propagate_separation = target with caller-supplied bracket."""
    lo = np.asarray(lo0, dtype=float).copy()
    hi = np.asarray(hi0, dtype=float).copy()
    t = np.asarray(targets, dtype=float)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = systems.propagate_separation(sys, xs, mid, n)
        take_hi = val >= t
        hi = np.where(take_hi, mid, hi)
        lo = np.where(take_hi, lo, mid)
        if np.max(hi - lo) < tol:
            break
    return 0.5 * (lo + hi)


class SegmentOps:
    """Geometry back-end for 2D systems; params are base-disk arclength."""

    dim = 2

    def __init__(self, sys, disk: geometry.ReferenceDisk, delta0: float,
                 delta_s: float, max_gap: float, splitting_iters: int = 16):
        self.sys = sys
        self.disk = disk
        self.delta0 = delta0
        self.frame = (-delta0, delta0)
        self.max_gap = max_gap
        self.splitting_iters = splitting_iters
        base1 = geometry.segment_disk(disk.anchor, disk.direction, 2 * delta0,
                                      max_gap=max_gap)
        self.cyl1 = geometry.make_cylinder(sys, base1, delta_s=delta_s,
                                           iters=splitting_iters)
        self.ucross_resolution = 3.0 * max_gap

    def sample(self, rng, count: int, region: IntervalUnion = None) -> np.ndarray:
        if region is not None and region:
            return region.sample(rng, count)
        return rng.uniform(self.frame[0], self.frame[1], size=count)

    def orbit_logs(self, params: np.ndarray, n: int) -> np.ndarray:
        pts = self.disk.points_at(params)
        logs, _ = orbit_logs_batch(self.sys, pts, n,
                                   splitting_iters=self.splitting_iters)
        return logs

    def vprime_bounds(self, params: np.ndarray, n: int, delta1_prime: float,
                      logs: np.ndarray = None):
        """First-order pre-ball bounds from the accumulated stretch.

        Exact for the linear automorphism (constant stretch); for curved
        members the error is second order in delta1_prime and only shifts
        where candidates are sought, not where their pullbacks land.
        """
        if logs is None:
            logs = self.orbit_logs(params, n)
        halfw = delta1_prime * np.exp(np.sum(logs[:, :n], axis=1))
        return params - halfw, params + halfw

    def crossings(self, params, n: int, v_lo, v_hi, m_cap: int):
        sys = self.sys
        P = len(params)
        arc_goal = 2.2 * (v_hi - v_lo).max()
        count = 65
        pts, par_grid = self._iterate_batch(params, v_lo, v_hi, n, count)
        out = [dict() for _ in range(P)]
        for m in range(1, m_cap + 1):
            pts = systems.step_many(sys, pts)
            gaps = np.linalg.norm(systems._min_image(np.diff(pts, axis=1)), axis=-1)
            while gaps.max() > self.max_gap and count < geometry.POLYLINE_CAP:
                count = 2 * count - 1
                pts, par_grid = self._iterate_batch(params, v_lo, v_hi, n + m, count)
                gaps = np.linalg.norm(systems._min_image(np.diff(pts, axis=1)), axis=-1)
            s, t = geometry.project_to_base(self.cyl1, pts.reshape(-1, 2))
            s = s.reshape(P, count)
            t = t.reshape(P, count)
            for i in range(P):
                res = self._pullback(par_grid[i], s[i], t[i], params[i])
                if res is not None:
                    out[i][m] = res
        return out

    def _iterate_batch(self, params, v_lo, v_hi, n: int, count: int):
        fracs = np.linspace(0.0, 1.0, count)
        par_grid = v_lo[:, None] + (v_hi - v_lo)[:, None] * fracs[None, :]
        pts = self.disk.points_at(par_grid.reshape(-1)).reshape(len(params), count, 2)
        flat = pts.reshape(-1, 2)
        for _ in range(n):
            flat = systems.step_many(self.sys, flat)
        return flat.reshape(len(params), count, 2), par_grid

    def _pullback(self, pars, s, t, center):
        """Pick the crossing run nearest the candidate center and invert s."""
        cyl = self.cyl1
        r_b = cyl.base.radius
        need = r_b - cyl.slack
        inside = (np.abs(t) <= cyl.delta_s) & (np.abs(s) <= r_b + 6 * self.max_gap)
        idx = np.nonzero(inside)[0]
        if len(idx) == 0:
            return None
        splits = np.nonzero(np.diff(idx) > 1)[0]
        runs = np.split(idx, splits + 1)
        best = None
        half = r_b / 2.0  # base0 radius: the doubled disk has radius 2*delta0
        for run in runs:
            if len(run) < 2:
                continue
            s_run = s[run]
            if s_run.min() > -need or s_run.max() < need:
                continue
            order = np.argsort(s_run)
            gaps = np.diff(s_run[order])
            if len(gaps) and gaps.max() >= self.ucross_resolution:
                continue
            p_run = pars[run][order]
            s_sorted = s_run[order]
            bounds = np.interp([-2 * half, -half, half, 2 * half], s_sorted, p_run)
            core = (min(bounds[1], bounds[2]), max(bounds[1], bounds[2]))
            collar = (min(bounds[0], bounds[3]), max(bounds[0], bounds[3]))
            dist = abs(0.5 * (core[0] + core[1]) - center)
            if best is None or dist < best[0]:
                best = (dist, core, collar)
        if best is None:
            return None
        return best[1], best[2]


# ---------------------------------------------------------------------------
# Step operations.
# ---------------------------------------------------------------------------

def _hyperbolic_mask(logs: np.ndarray, n: int, sigma: float) -> np.ndarray:
    shifted = logs[:, :n] - math.log(sigma)
    s = np.concatenate([np.zeros((len(logs), 1)), np.cumsum(shifted, axis=1)], axis=1)
    runmin = np.minimum.accumulate(s[:, :-1], axis=1)
    return s[:, n] <= runmin[:, n - 1]


def _tile_region(region: IntervalUnion, spacing: float, cap: int, rng) -> np.ndarray:
    """Jittered lattice over a region; deterministic given the stream."""
    pts = []
    budget = cap
    for lo, hi in region.intervals():
        k = min(budget, max(1, int((hi - lo) / spacing)))
        offs = (np.arange(k) + rng.uniform(0.2, 0.8, size=k)) / k
        pts.append(lo + offs * (hi - lo))
        budget -= k
        if budget <= 0:
            break
    return np.concatenate(pts) if pts else np.empty(0)


def cover_hyperbolic_set(ops, n: int, samples: int, sigma: float,
                         delta1_prime: float, rng, focus: IntervalUnion = None,
                         mode: str = "minimal", logs_horizon: int = None):
    """Cover of the sampled hyperbolic points by pre-balls V'_n.

    mode "minimal": classical sweep cover, spacing about one pre-ball length
    (the count obeys the interval-covering bound).  mode "dense": keep every
    sampled point not already inside an accepted ball (spacing about one
    halfwidth) and add a deterministic jittered tiling of the focus region so
    candidate collars can pack; this is what the builder uses.

    Returns (params, v_lo, v_hi, logs) of the accepted cover points; their
    pre-balls cover every sampled hyperbolic point.
    """
    horizon = logs_horizon or n
    base = samples // 4 if mode == "dense" else samples
    pts = ops.sample(rng, base)
    logs = ops.orbit_logs(pts, horizon)
    if mode == "dense" and focus is not None and focus:
        hyp0 = _hyperbolic_mask(logs, n, sigma)
        if np.any(hyp0):
            halfw = delta1_prime * np.exp(np.sum(logs[hyp0, :n], axis=1))
            spacing = 0.9 * float(np.median(halfw))
        else:
            spacing = delta1_prime
        tiles = _tile_region(focus, spacing, samples - base, rng)
        if len(tiles):
            pts = np.concatenate([pts, tiles])
            logs = np.concatenate([logs, ops.orbit_logs(tiles, horizon)], axis=0)
    hyp = _hyperbolic_mask(logs, n, sigma)
    pts, logs = pts[hyp], logs[hyp]
    if len(pts) == 0:
        return np.empty(0), np.empty(0), np.empty(0), logs
    order = np.argsort(pts)
    pts, logs = pts[order], logs[order]
    v_lo, v_hi = ops.vprime_bounds(pts, n, delta1_prime, logs=logs)
    if mode == "dense":
        keep = _dense_cover(pts, v_hi - pts)
    else:
        keep = _sweep_cover(pts, pts - v_lo, v_hi - pts)
    return pts[keep], v_lo[keep], v_hi[keep], logs[keep]


def _sweep_cover(sorted_params, half_lo, half_hi):
    """Classical interval covering: every sample ends up inside a chosen ball."""
    n = len(sorted_params)
    chosen = []
    frontier = -np.inf
    i = 0
    while i < n:
        if sorted_params[i] <= frontier:
            i += 1
            continue
        s = sorted_params[i]
        best = -1
        j = i
        while j < n and sorted_params[j] - half_lo[j] <= s:
            if best < 0 or sorted_params[j] + half_hi[j] >= sorted_params[best] + half_hi[best]:
                best = j
            j += 1
        if best < 0:
            best = i
        chosen.append(best)
        frontier = sorted_params[best] + half_hi[best]
        i = max(i, best + 1)
    return np.asarray(chosen, dtype=int)


def _dense_cover(sorted_params, half_hi):
    """Accept each point not already inside an accepted ball (one-sided sweep)."""
    keep = []
    frontier = -np.inf
    for i, s in enumerate(sorted_params):
        if s > frontier:
            keep.append(i)
            frontier = s + half_hi[i]
    return np.asarray(keep, dtype=int)


def candidates_at(ops, i_params, v_lo, v_hi, n: int, n_cross: int,
                  raise_on_no_crossing: bool = False):
    """Crossing candidates for the cover points; smallest crossing m is primary."""
    if len(i_params) == 0:
        return []
    cross = ops.crossings(i_params, n, v_lo, v_hi, n_cross)
    cands = []
    for i, per_m in enumerate(cross):
        if not per_m:
            if raise_on_no_crossing:
                raise NoCrossing(f"no crossing within m <= {n_cross} at param {i_params[i]}")
            cands.append(None)
            continue
        m = min(per_m)
        core, collar = per_m[m]
        cands.append(Candidate(x_param=float(i_params[i]), n=n, m=m,
                               core=core, collar=collar,
                               vprime=(float(v_lo[i]), float(v_hi[i])),
                               crossings=per_m))
    return cands


def _blocked_zones(state: BuilderState, k: int, sigma: float):
    """Disjoint sorted (lo, hi, owner) arrays of core+annulus zones at step k."""
    if not state.elements:
        return np.empty(0), np.empty(0), np.empty(0, dtype=int)
    zones = [e.annulus_zone(k, sigma) for e in state.elements]
    lo = np.asarray([z[0] for z in zones])
    hi = np.asarray([z[1] for z in zones])
    owner = np.arange(len(zones))
    order = np.argsort(lo)
    return lo[order], hi[order], owner[order]


def select_step(state: BuilderState, cands, frame, sigma: float):
    """Greedy maximal disjoint family, away from prior cores and live annuli.

    Candidates are ranked by descending core measure with position as the tie
    break; acceptance requires the collar to stay inside the base disk, clear
    of every previously accepted core and its current annulus, and disjoint
    from collars accepted earlier this step.
    """
    import bisect

    n = state.step
    z_lo, z_hi, _ = _blocked_zones(state, n, sigma)
    live = [c for c in cands if c is not None]
    live.sort(key=lambda c: (-(c.core[1] - c.core[0]), c.core[0]))
    accepted = []
    taken = []  # sorted (lo, hi) of collars accepted this step
    for c in live:
        lo, hi = c.collar
        if lo < frame[0] or hi > frame[1]:
            continue
        if _hits_sorted(z_lo, z_hi, lo, hi):
            continue
        j = bisect.bisect_left(taken, (lo, lo))
        if (j < len(taken) and taken[j][0] < hi) or (j > 0 and taken[j - 1][1] > lo):
            continue
        idx = len(state.elements)
        elem = Element(index=idx, x_param=c.x_param, n=n, m=c.m, R=c.R,
                       core=c.core, collar=c.collar,
                       w0=(c.core[0] - c.collar[0], c.collar[1] - c.core[1]))
        state.elements.append(elem)
        accepted.append(elem)
        taken.insert(j, (lo, hi))
    state.accepted_by_step[n] = [e.index for e in accepted]
    return accepted


def _hits_sorted(z_lo, z_hi, lo: float, hi: float) -> bool:
    if len(z_lo) == 0:
        return False
    i = np.searchsorted(z_lo, hi)
    for k in range(max(0, i - 1), min(len(z_lo), i + 1)):
        if min(hi, z_hi[k]) > max(lo, z_lo[k]):
            return True
    return False


def _owners_hit(z_lo, z_hi, owner, lo: float, hi: float):
    if len(z_lo) == 0:
        return []
    i0 = np.searchsorted(z_lo, lo) - 1
    i1 = np.searchsorted(z_lo, hi) + 1
    hits = []
    for k in range(max(0, i0), min(len(z_lo), i1)):
        if min(hi, z_hi[k]) > max(lo, z_lo[k]):
            hits.append(int(owner[k]))
    return hits


def update_satellites(state: BuilderState, cands, frame, sigma: float):
    """Collect V'_n mass near every chosen element and near the disk boundary.

    For each cover point and each crossing iterate m, a collar meeting an
    element's core+annulus zone contributes V'_n(x) minus the element core to
    that element's satellite; collars leaking outside the base disk feed the
    boundary satellite.
    """
    n = state.step
    z_lo, z_hi, owner = _blocked_zones(state, n, sigma)
    per_elem = {}
    boundary = []
    for c in cands:
        if c is None:
            continue
        for m, (core, collar) in sorted(c.crossings.items()):
            lo, hi = collar
            for idx in _owners_hit(z_lo, z_hi, owner, lo, hi):
                per_elem.setdefault(idx, []).append(c.vprime)
            if lo < frame[0] or hi > frame[1]:
                boundary.append(c.vprime)
    sat_records = []
    for idx, pieces in sorted(per_elem.items()):
        e = state.elements[idx]
        region = IntervalUnion(pieces).clip(*frame).difference(
            IntervalUnion.single(*e.core))
        if region:
            sat_records.append((idx, region.measure, region.intervals()))
    state.satellites[n] = sat_records
    bregion = IntervalUnion(boundary).clip(*frame)
    state.boundary_sat[n] = (bregion.measure, bregion.intervals())
    return sat_records


# ---------------------------------------------------------------------------
# The build loop.
# ---------------------------------------------------------------------------

def make_ops(sys, params: PartitionParams, disk: geometry.ReferenceDisk = None):
    if sys.dim == 1:
        return CircleOps(sys, params.p, params.delta0)
    if disk is None:
        raise ValidationError("2D builds need the ambient reference disk")
    return SegmentOps(sys, disk, params.delta0, params.delta_s, params.max_gap)


def build(sys, hyp: HyperbolicParams, params: PartitionParams,
          disk: geometry.ReferenceDisk = None) -> Partition:
    """Run the inductive construction for n = n0..n_max.

    Deterministic given the seed; aborts with StallAbort when no candidate is
    accepted for n_stall consecutive steps.
    """
    if params.n_cross is None:
        raise ValidationError("resolve the reference setup (n_cross) before building")
    params = params.resolved(params.n_cross)
    if params.p is None or params.delta0 is None:
        raise ValidationError("build needs p and delta0")
    ops = make_ops(sys, params, disk=disk)
    frame = ops.frame
    state = BuilderState(step=params.n0 - 1,
                         delta_n=IntervalUnion.single(*frame))
    stall = 0
    if params.n_max >= params.n0:
        for n in range(params.n0, params.n_max + 1):
            state.step = n
            rng = stream(params.seed, PHASE_BUILD, n)
            i_params, v_lo, v_hi, _ = cover_hyperbolic_set(
                ops, n, params.samples_per_step, hyp.sigma, params.delta1_prime,
                rng, focus=state.delta_n, mode="dense",
                logs_horizon=n + params.n_cross)
            state.i_n_sizes[n] = len(i_params)
            cands = candidates_at(ops, i_params, v_lo, v_hi, n, params.n_cross)
            state.no_crossing.extend(
                (n, float(i_params[i])) for i, c in enumerate(cands) if c is None)
            accepted = select_step(state, cands, frame, hyp.sigma)
            update_satellites(state, cands, frame, hyp.sigma)
            if accepted:
                state.delta_n = state.delta_n.difference(
                    IntervalUnion([e.core for e in accepted]))
                stall = 0
            else:
                stall += 1
                if stall >= params.n_stall:
                    raise StallAbort(
                        f"no acceptance for {stall} consecutive steps at n={n}",
                        {"step": n, "uncovered": state.delta_n.measure,
                         "i_n": state.i_n_sizes.get(n, 0),
                         "no_crossing": len(state.no_crossing)})
            state.delta_curve.append((n, state.delta_n.measure))
    part = Partition(
        elements=list(state.elements),
        uncovered_mass=state.delta_n.measure,
        delta_curve=np.asarray(state.delta_curve, dtype=float).reshape(-1, 2),
        frame=frame,
        p=params.p if sys.dim == 1 else 0.0,
        delta0=params.delta0,
        n_cross=params.n_cross,
        hyp=hyp,
        params=params,
        state=state,
        sys_json=sys.to_json(),
    )
    part.constants.update(satellite_constants(part))
    p_hat, p_suff = separation_estimate(part)
    part.constants["P_hat"] = p_hat
    part.constants["P_suff"] = p_suff
    return part


def satellite_constants(part: Partition) -> dict:
    """Empirical satellite constants over the full build history.

    C5_hat is the running max of Leb(S_n(w)) / (sigma^{(n-k)/2} Leb(w)) over
    elements w chosen at step k; eta_hat the analogue for the boundary
    satellite against sigma^{n/2} Leb(Delta_0).
    """
    sigma = part.hyp.sigma
    c5 = 0.0
    for n, records in part.state.satellites.items():
        for idx, measure, _ in records:
            e = part.elements[idx]
            denom = sigma ** ((n - e.n) / 2.0) * (e.core[1] - e.core[0])
            if denom > 0:
                c5 = max(c5, measure / denom)
    eta = 0.0
    total = part.total_mass
    for n, (measure, _) in part.state.boundary_sat.items():
        eta = max(eta, measure / (sigma ** (n / 2.0) * total))
    return {"C5_hat": c5, "eta_hat": eta}


def boundary_decay_ratio(part: Partition) -> float:
    """Fitted per-step geometric ratio of the boundary-satellite measures."""
    items = sorted((n, m) for n, (m, _) in part.state.boundary_sat.items() if m > 0)
    if len(items) < 3:
        return float("nan")
    ns = np.asarray([n for n, _ in items], dtype=float)
    ys = np.log([m for _, m in items])
    slope = np.polyfit(ns, ys, 1)[0]
    return float(math.exp(slope))


# ---------------------------------------------------------------------------
# Verification and separation.
# ---------------------------------------------------------------------------

def _element_image_interval_1d(sys, elem: Element, which: str = "core"):
    """(lift_lo, lift_hi) of the f^R image of the element core or collar."""
    lo, hi = getattr(elem, which)
    x = elem.x_param % 1.0
    d = np.asarray([lo - elem.x_param, hi - elem.x_param])
    sep = systems.propagate_separation(sys, np.full(2, x), d, elem.R)
    z = np.asarray(x)
    for _ in range(elem.R):
        z = systems.step_many(sys, z)
    return float(z + sep[0]), float(z + sep[1])


def verify_markov(sys, part: Partition, resolution: float = None,
                  pair_samples: int = 24, disk: geometry.ReferenceDisk = None,
                  zeta: float = 1.0, seed: int = 0) -> dict:
    """Certificate pass over every element of a built partition.

    (i) the f^R image of the core u-crosses the base cylinder with endpoints
    on its boundary (within resolution); (ii) the backward-contraction ratio
    with the empirical constant recorded; (iii) the distortion constant is
    consistent with C2_hat / (1 - sigma^{zeta/2}) within 20 percent.
    """
    if resolution is None:
        resolution = part.params.resolution
    sigma = part.hyp.sigma
    rng = np.random.default_rng(seed)
    failures = []
    c_hat = 0.0
    cbar_hat = 0.0
    c2_hat = 0.0
    ops = make_ops(sys, part.params, disk=disk) if sys.dim == 2 else None
    for e in part.elements:
        if sys.dim == 1:
            img_lo, img_hi = _element_image_interval_1d(sys, e, "core")
            length = img_hi - img_lo
            b_lo = part.p - part.delta0
            shift = (b_lo - img_lo) % 1.0
            covers = length >= 1.0 or shift + 2 * part.delta0 <= length + resolution
            # Markov exactness: the core image must land on the base disk
            # boundary, not merely cover the disk.
            endpoint_defect = abs(length - 2 * part.delta0)
            if not (covers and endpoint_defect <= resolution):
                failures.append((e.index, "u-cross",
                                 {"covers": bool(covers), "endpoint_defect": endpoint_defect}))
            pb = geometry.PreBall(center=e.x_param % 1.0, center_param=e.x_param,
                                  n=e.R, lo=e.core[0], hi=e.core[1],
                                  lo_prime=e.core[0], hi_prime=e.core[1],
                                  delta1=part.delta0, delta1_prime=part.delta0)
        else:
            _, pts = geometry.iterate_segment(sys, ops.disk, e.core[0], e.core[1],
                                              e.R, max_gap=part.params.max_gap)
            s, t = geometry.project_to_base(ops.cyl1, pts)
            span_lo, span_hi = float(np.min(s)), float(np.max(s))
            res2 = ops.ucross_resolution
            covers = span_lo <= -part.delta0 + res2 and span_hi >= part.delta0 - res2
            exact = abs(span_lo + part.delta0) <= res2 and abs(span_hi - part.delta0) <= res2
            inside = bool(np.all(np.abs(t) <= ops.cyl1.delta_s + res2))
            if not (covers and exact and inside):
                failures.append((e.index, "u-cross",
                                 {"covers": bool(covers), "span": (span_lo, span_hi)}))
            pb = geometry.PreBall(center=ops.disk.points_at(np.asarray(e.x_param)),
                                  center_param=e.x_param, n=e.R,
                                  lo=e.core[0], hi=e.core[1],
                                  lo_prime=e.core[0], hi_prime=e.core[1],
                                  delta1=part.delta0, delta1_prime=part.delta0,
                                  disk=ops.disk)
        ratio = geometry.check_backward_contraction(sys, pb, sigma,
                                                    pair_samples=pair_samples, rng=rng)
        c_hat = max(c_hat, ratio)
        cert = geometry.check_distortion(sys, pb, zeta=zeta,
                                         pair_samples=pair_samples, rng=rng)
        cbar_hat = max(cbar_hat, cert.C2_hat)
        base_cert = _preball_distortion(sys, part, e, ops, zeta, pair_samples, rng)
        c2_hat = max(c2_hat, base_cert)
    bound = c2_hat / (1.0 - sigma ** (zeta / 2.0))
    distortion_ok = cbar_hat <= bound * 1.2 + 1e-9
    return {
        "elements": len(part.elements),
        "failures": failures,
        "all_pass": not failures and distortion_ok,
        "C_hat": c_hat,
        "Cbar_hat": cbar_hat,
        "C2_hat": c2_hat,
        "Cbar_bound": bound,
        "distortion_consistent": distortion_ok,
    }


def _preball_distortion(sys, part, e: Element, ops, zeta, pair_samples, rng) -> float:
    """Distortion constant measured on the element's base pre-ball at time n."""
    if sys.dim == 1:
        pb = geometry.preball(sys, e.x_param % 1.0, e.n, part.params.delta1,
                              part.params.delta1_prime, part.hyp.sigma, check=False)
    else:
        pb = geometry.preball(sys, ops.disk.points_at(np.asarray(e.x_param)), e.n,
                              part.params.delta1, part.params.delta1_prime,
                              part.hyp.sigma, disk=ops.disk, check=False,
                              max_gap=part.params.max_gap)
    cert = geometry.check_distortion(sys, pb, zeta=zeta, pair_samples=pair_samples,
                                     rng=rng)
    return cert.C2_hat


def corrupt_element(part: Partition, index: int = 0, widen: float = 2.0) -> Partition:
    """Negative control: widen one core so its image overshoots the base disk."""
    import copy

    out = copy.deepcopy(part)
    e = out.elements[index]
    c = 0.5 * (e.core[0] + e.core[1])
    h = 0.5 * (e.core[1] - e.core[0]) * widen
    e.core = (c - h, c + h)
    out.state.elements[index] = e
    return out


def separation_estimate(part: Partition):
    """(P_hat, P_suff): empirical separation lag and the closed-form bound.

    P_hat is the smallest lag such that no pair of element-plus-satellite sets
    recorded at a common step intersects at that or any larger lag; P_suff
    evaluates the sufficient condition 4*delta1' * sigma^{P/2} <
    delta0 * sigma^{N0/2} from the configured constants.
    """
    sigma = part.hyp.sigma
    p = part.params
    rhs = part.delta0 * sigma ** (part.n_cross / 2.0) / (4.0 * p.delta1_prime)
    if rhs >= 1.0:
        p_suff = part.n_cross
    else:
        p_suff = max(part.n_cross, int(math.ceil(2.0 * math.log(rhs) / math.log(sigma))))
    max_lag = -1
    for u, records in part.state.satellites.items():
        # Tagged intervals of every B-set alive at step u: element cores plus
        # the recorded satellite pieces; a sweep finds intersecting pairs with
        # distinct owners without the quadratic pair loop.
        tagged = [(e.core[0], e.core[1], e.index, e.n)
                  for e in part.elements if e.n <= u]
        for idx, _, intervals in records:
            e = part.elements[idx]
            tagged.extend((lo, hi, e.index, e.n) for lo, hi in intervals)
        tagged.sort()
        active = []  # (hi, owner, n) with hi above the sweep position
        for lo, hi, owner, en in tagged:
            active = [a for a in active if a[0] > lo]
            for ahi, aowner, an in active:
                if aowner != owner:
                    max_lag = max(max_lag, u - max(en, an))
            active.append((hi, owner, en))
    return max_lag + 1, p_suff


# ---------------------------------------------------------------------------
# Invariant helpers used by tests and the CLI report.
# ---------------------------------------------------------------------------

def tail_subset_check(part: Partition) -> bool:
    """{R > k} lies inside Delta_{k - N0} for every recorded k."""
    curve = {int(n): mass for n, mass in part.delta_curve}
    removed_by = {}
    for e in part.elements:
        removed_by.setdefault(e.n, []).append(e)
    for k in range(part.params.n0 + part.n_cross, part.params.n_max + 1):
        step = k - part.n_cross
        if step not in curve:
            continue
        late = IntervalUnion([e.core for e in part.elements if e.R > k])
        early = IntervalUnion([e.core for e in part.elements if e.n <= step])
        if late.intersect(early).measure > part.params.resolution:
            return False
    return True


def mass_conservation_defect(part: Partition) -> float:
    """Max over steps of |Leb(Delta_n) + removed cores - Leb(Delta_0)|."""
    total = part.total_mass
    worst = 0.0
    removed = 0.0
    by_step = {}
    for e in part.elements:
        by_step.setdefault(e.n, 0.0)
        by_step[e.n] += e.core[1] - e.core[0]
    for n, mass in part.delta_curve:
        removed += by_step.get(int(n), 0.0)
        worst = max(worst, abs(mass + removed - total))
    return worst
