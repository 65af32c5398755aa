"""Monte-Carlo orbit statistics: Birkhoff means, correlation functions,
large deviations, and recurrence-time tails of built partitions.

Initial points are Lebesgue-sampled and pushed through a burn-in so the
empirical ensemble approximates the physical measure.  Every estimator is
chunked into mergeable partial sums with per-chunk RNG streams, so results
are bit-identical for any worker count, and the chunks double as batches for
the batch-means standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import systems
from .errors import DegenerateBand, InsufficientTail, ValidationError
from .hyperbolic import DecayFit, TailEstimate, fit_decay_curve
from .seeding import PHASE_STATS, stream

BATCHES = 20


@dataclass(frozen=True)
class Observable:
    """Named observable with its Holder data estimated on random pairs."""

    name: str
    evaluator: object
    holder_exponent: float = 1.0
    holder_constant_hat: float = 0.0

    def __call__(self, pts):
        return self.evaluator(pts)


def _obs_one(pts):
    p = np.asarray(pts, dtype=float)
    return np.ones(p.shape[0] if p.ndim > 1 else p.shape or (1,))


def _obs_coord0(pts):
    p = np.asarray(pts, dtype=float)
    return p[..., 0] if p.ndim > 1 else p


def _obs_coord0_centered(pts):
    return _obs_coord0(pts) - 0.5


def _obs_sin2pi_x0(pts):
    return np.sin(2.0 * math.pi * _obs_coord0(pts))


def _obs_cos2pi_sum(pts):
    p = np.asarray(pts, dtype=float)
    s = p.sum(axis=-1) if p.ndim > 1 else p
    return np.cos(2.0 * math.pi * s)


OBSERVABLES = {
    "one": _obs_one,
    "coord0": _obs_coord0,
    "coord0_centered": _obs_coord0_centered,
    "sin2pi_x0": _obs_sin2pi_x0,
    "cos2pi_sum": _obs_cos2pi_sum,
}


def make_observable(name: str, sys=None, holder_exponent: float = 1.0,
                    pairs: int = 2000, seed: int = 0) -> Observable:
    """Observable from the registry with an estimated Holder constant."""
    if name not in OBSERVABLES:
        raise ValidationError(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}")
    ev = OBSERVABLES[name]
    rng = np.random.default_rng(seed)
    dim = sys.dim if sys is not None else 1
    shape = (pairs,) if dim == 1 else (pairs, dim)
    a = rng.uniform(0, 1, size=shape)
    b = rng.uniform(0, 1, size=shape)
    gap = systems._min_image(a - b)
    d = np.abs(gap) if dim == 1 else np.linalg.norm(gap, axis=1)
    keep = d > 1e-9
    ratios = np.abs(ev(a) - ev(b))[keep] / d[keep] ** holder_exponent
    return Observable(name=name, evaluator=ev, holder_exponent=holder_exponent,
                      holder_constant_hat=float(ratios.max()) if len(ratios) else 0.0)


@dataclass(frozen=True)
class CorrelationSeries:
    ns: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    samples: int
    burn_in: int
    seed: int
    phi: str = ""
    psi: str = ""


@dataclass(frozen=True)
class DeviationCurve:
    epsilon: float
    ns: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    mean_estimate: float
    fit: object = None
    nonincreasing_trend: bool = True


# ---------------------------------------------------------------------------
# Orbit helpers.
# ---------------------------------------------------------------------------

def _sample_points(sys, rng, count: int):
    if sys.dim == 1:
        return rng.uniform(0.0, 1.0, size=count)
    return rng.uniform(0.0, 1.0, size=(count, 2))


def _advance(sys, pts, steps: int):
    for _ in range(steps):
        pts = systems.step_many(sys, pts)
    return pts


def birkhoff_mean(sys, obs, x, n: int, block: int = 8192) -> float:
    """Time average of the observable along one orbit of length n."""
    if n < 1:
        raise ValidationError("birkhoff_mean: n >= 1")
    pt = np.asarray([x], dtype=float) if sys.dim == 1 else \
        np.asarray(x, dtype=float).reshape(1, 2)
    total = 0.0
    done = 0
    while done < n:
        k = min(block, n - done)
        shape = (k,) if sys.dim == 1 else (k, 2)
        orbit = np.empty(shape)
        for j in range(k):
            orbit[j] = pt[0]
            pt = systems.step_many(sys, pt)
        total += float(np.sum(obs(orbit)))
        done += k
    return total / n


# ---------------------------------------------------------------------------
# Correlation functions.
# ---------------------------------------------------------------------------

def correlation(sys, phi, psi, n_max: int, samples: int, burn_in: int = 100,
                seed: int = 0, workers: int = 1) -> CorrelationSeries:
    """Plug-in estimator of |E[phi (psi o f^n)] - E phi E psi| for n <= n_max.

    Pooled sums over fixed chunks give the estimate; the spread of per-chunk
    estimates gives the batch-means standard error.
    """
    if samples < 10_000:
        raise ValidationError("correlation: samples >= 10^4")
    sizes = _chunks(samples, BATCHES)
    sum_phi = np.zeros(1)
    sum_psi = np.zeros(n_max + 1)
    sum_cross = np.zeros(n_max + 1)
    per_chunk = np.zeros((len(sizes), n_max + 1))
    count = 0
    for ci, k in enumerate(sizes):
        rng = stream(seed, PHASE_STATS, ci)
        pts = _advance(sys, _sample_points(sys, rng, k), burn_in)
        phi0 = np.asarray(phi(pts), dtype=float)
        cur = pts
        c_phi = phi0.sum()
        for n in range(n_max + 1):
            if n > 0:
                cur = systems.step_many(sys, cur)
            psin = np.asarray(psi(cur), dtype=float)
            sum_psi[n] += psin.sum()
            cross = float(phi0 @ psin)
            sum_cross[n] += cross
            per_chunk[ci, n] = cross / k - (c_phi / k) * (psin.sum() / k)
        sum_phi[0] += c_phi
        count += k
    est = sum_cross / count - (sum_phi[0] / count) * (sum_psi / count)
    stderr = per_chunk.std(axis=0, ddof=1) / math.sqrt(len(sizes))
    return CorrelationSeries(ns=np.arange(n_max + 1), estimate=est, stderr=stderr,
                             samples=count, burn_in=burn_in, seed=seed,
                             phi=getattr(phi, "name", ""), psi=getattr(psi, "name", ""))


def fit_correlation_decay(series: CorrelationSeries, force_tau=None,
                          window=None) -> DecayFit:
    """Decay fit of |estimate| restricted to points above the noise floor."""
    keep = np.abs(series.estimate) > 3.0 * series.stderr
    ys = np.where(keep, np.abs(series.estimate), 0.0)
    return fit_decay_curve(series.ns, ys, force_tau=force_tau, window=window)


def _chunks(total: int, parts: int):
    parts = min(parts, total)
    base = total // parts
    rem = total % parts
    return [base + (1 if i < rem else 0) for i in range(parts)]


# ---------------------------------------------------------------------------
# Large deviations.
# ---------------------------------------------------------------------------

def large_deviation(sys, obs, n_list, epsilon: float, samples: int,
                    seed: int = 0, burn_in: int = 100, mean: float = None,
                    mean_orbit_len: int = 1_000_000, workers: int = 1) -> DeviationCurve:
    """Fraction of starts whose time average leaves the epsilon band.

    The reference mean is estimated first from one long orbit (recorded in
    the result); DegenerateBand is raised when epsilon exceeds the observed
    oscillation of the observable around that mean.
    """
    n_list = sorted(int(n) for n in n_list)
    if not n_list or n_list[0] < 1:
        raise ValidationError("large_deviation: n_list must hold positive integers")
    rng0 = stream(seed, PHASE_STATS, 10_000)
    if mean is None:
        x0 = _sample_points(sys, rng0, 1)[0]
        mean = birkhoff_mean(sys, obs, x0, mean_orbit_len)
    osc_pts = _sample_points(sys, rng0, 4096)
    osc = float(np.max(np.abs(np.asarray(obs(osc_pts)) - mean)))
    if epsilon >= osc:
        raise DegenerateBand(f"epsilon {epsilon} >= observed oscillation {osc:.4f}")
    sizes = _chunks(samples, BATCHES)
    n_max = n_list[-1]
    hits = np.zeros(len(n_list))
    per_chunk = np.zeros((len(sizes), len(n_list)))
    count = 0
    for ci, k in enumerate(sizes):
        rng = stream(seed, PHASE_STATS, ci)
        pts = _advance(sys, _sample_points(sys, rng, k), burn_in)
        acc = np.zeros(k)
        cur = pts
        pos = 0
        for j in range(1, n_max + 1):
            acc += np.asarray(obs(cur), dtype=float)
            cur = systems.step_many(sys, cur)
            if j == n_list[pos]:
                viol = np.abs(acc / j - mean) > epsilon
                per_chunk[ci, pos] = viol.mean()
                hits[pos] += viol.sum()
                pos += 1
                if pos >= len(n_list):
                    break
        count += k
    est = hits / count
    stderr = per_chunk.std(axis=0, ddof=1) / math.sqrt(len(sizes))
    fit = None
    try:
        fit = fit_decay_curve(np.asarray(n_list, dtype=float), est, force_tau=1.0,
                              window=(n_list[0], n_list[-1]))
    except InsufficientTail:
        pass
    tol = 2.0 * (stderr[:-1] + stderr[1:]) if len(est) > 1 else np.zeros(0)
    trend = bool(np.all(np.diff(est) <= tol)) if len(est) > 1 else True
    return DeviationCurve(epsilon=epsilon, ns=np.asarray(n_list), estimate=est,
                          stderr=stderr, mean_estimate=float(mean), fit=fit,
                          nonincreasing_trend=trend)


# ---------------------------------------------------------------------------
# Recurrence tails and time fractions.
# ---------------------------------------------------------------------------

def recurrence_tail(part, force_tau=None, window=None):
    """(TailEstimate, DecayFit) of Leb{R > n} / Leb(Delta_0) for a built partition.

    Uncovered mass counts as R beyond the horizon (censored) and floors the
    curve; the default fit window therefore stops where the curve comes
    within a factor two of that floor, so the fit sees only the genuine
    decay regime.
    """
    total = part.total_mass
    if not part.elements:
        raise InsufficientTail("empty partition")
    r_max = max(e.R for e in part.elements)
    masses = np.zeros(r_max + 2)
    for e in part.elements:
        masses[e.R] += e.core[1] - e.core[0]
    suffix = np.cumsum(masses[::-1])[::-1]
    ns = np.arange(r_max + 1)
    curve = (np.array([suffix[n + 1] for n in ns]) + part.uncovered_mass) / total
    tail = TailEstimate(curve=curve, sample_count=len(part.elements),
                        censored_fraction=part.uncovered_mass / total)
    if window is None:
        floor = part.uncovered_mass / total
        above = ns[curve >= max(2.0 * floor, 1e-12)]
        hi = float(above.max()) if len(above) else float(ns.max())
        window = (max(1.0, math.ceil(r_max / 4.0)), hi)
        if window[0] >= window[1]:
            window = (1.0, hi)
    fit = fit_decay_curve(ns, curve, force_tau=force_tau, window=window)
    return tail, fit


def time_fraction_outside(sys, region_fn, x, n: int) -> float:
    """Fraction of the first n iterates landing outside the given region."""
    if n < 1:
        raise ValidationError("time_fraction_outside: n >= 1")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim <= 1 and sys.dim == 2 or pts.ndim == 0
    if sys.dim == 2:
        pts = pts.reshape(-1, 2)
    else:
        pts = np.atleast_1d(pts)
    outside = np.zeros(pts.shape[0] if sys.dim == 2 else pts.shape)
    cur = pts
    for _ in range(n):
        outside += ~np.asarray(region_fn(cur), dtype=bool)
        cur = systems.step_many(sys, cur)
    frac = outside / n
    return float(frac[0]) if single and frac.size == 1 else frac
