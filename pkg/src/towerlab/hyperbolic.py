"""Expansion-time function, Pliss-type hyperbolic-time extraction, tail curves.

The orbitwise quantity throughout is a_j = log ||Df^{-1} | E^cu|| evaluated at
the j-th image of a point: negative values mean expansion.  Window sums of the
a_j drive the hyperbolic-time scan; prefix averages drive the expansion time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import systems
from .errors import DerivativeUndefined, InsufficientTail, ValidationError
from .seeding import PHASE_TAILS, stream


@dataclass(frozen=True)
class HyperbolicParams:
    """NUE rate b, contraction factor sigma, and the verification horizon."""

    b: float
    n_max: int
    sigma: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.b <= 0:
            raise ValidationError("HyperbolicParams: b must be positive")
        if self.n_max < 1:
            raise ValidationError("HyperbolicParams: n_max >= 1")
        if self.sigma is None:
            object.__setattr__(self, "sigma", math.exp(-self.b / 2.0))
        if not 0.0 < self.sigma < 1.0:
            raise ValidationError("HyperbolicParams: sigma must lie in (0,1)")


@dataclass(frozen=True)
class ExpansionLog:
    """Sequence a_0..a_{n-1} of log inverse cu-stretches along one orbit."""

    origin: object
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) < 1:
            raise ValidationError("ExpansionLog: need at least one value")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("ExpansionLog: values must be finite")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class Censored:
    """Expansion time undetermined up to the horizon."""

    horizon: int


@dataclass(frozen=True)
class HyperbolicReport:
    expansion_time: object  # int or Censored
    times: np.ndarray
    frequency: float
    theta_check: float


@dataclass(frozen=True)
class TailEstimate:
    """Monte-Carlo curve n -> fraction of disk samples with E > n (or R > n)."""

    curve: np.ndarray
    sample_count: int
    censored_fraction: float
    disk: object = None
    skipped: int = 0

    def __post_init__(self):
        c = np.asarray(self.curve, dtype=float)
        if np.any(c < -1e-12) or np.any(c > 1.0 + 1e-12):
            raise ValidationError("TailEstimate: curve values must lie in [0,1]")
        if np.any(np.diff(c) > 1e-12):
            raise ValidationError("TailEstimate: curve must be nonincreasing")
        object.__setattr__(self, "curve", c)

    def stderr(self) -> np.ndarray:
        n = max(self.sample_count, 1)
        return np.sqrt(np.clip(self.curve * (1.0 - self.curve), 0.0, None) / n)


@dataclass(frozen=True)
class DecayFit:
    """Stretched-exponential fit exp(-rate * n^tau) over a window."""

    tau: float
    rate: float
    r_squared: float
    window: tuple
    forced_tau: bool = False
    points_used: int = 0


# ---------------------------------------------------------------------------
# Orbit logs.
# ---------------------------------------------------------------------------

def orbit_logs_batch(sys, pts, n: int, splitting_iters: int = systems.DEFAULT_SPLITTING_ITERS,
                     on_break: str = "raise"):
    """a_j for j < n along the orbits of an array of points.

    Returns (logs, ok) where logs has shape (N, n).  For 2D systems the
    invariant direction is seeded by a backward warm-up segment of length
    ``splitting_iters`` and then pushed forward along each orbit, which agrees
    with the pointwise estimate to the cone-iteration residual.

    ``on_break`` controls what happens when an orbit lands exactly on a branch
    junction with undefined derivative: "raise" propagates, "mask" drops the
    sample and reports it via the ok mask.
    """
    if n < 1:
        raise ValidationError("orbit_logs_batch: n >= 1")
    if sys.dim == 1:
        x = np.asarray(pts, dtype=float).copy()
        ok = np.ones(x.shape, dtype=bool)
        logs = np.empty(x.shape + (n,))
        breaks = systems.derivative_breaks(sys)
        for j in range(n):
            if breaks:
                bad = np.zeros(x.shape, dtype=bool)
                for b in breaks:
                    bad |= np.abs(x - b) < 1e-13
                if np.any(bad):
                    if on_break == "raise":
                        raise DerivativeUndefined(
                            f"{sys.name}: orbit hit a branch junction at step {j}")
                    ok &= ~bad
            logs[..., j] = -np.log(np.abs(systems.derivative_1d(sys, x)))
            x = systems.step_many(sys, x)
        return logs, ok
    p = np.asarray(pts, dtype=float).copy()
    hist = [p]
    for _ in range(splitting_iters):
        hist.append(systems.inverse_step_many(sys, hist[-1]))
    e_u, _ = systems.reference_frame(sys)
    v = np.broadcast_to(e_u, p.shape).copy()
    for k in range(splitting_iters, 0, -1):
        J = systems.jacobian_many(sys, hist[k])
        v = np.einsum("...ij,...j->...i", J, v)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
    logs = np.empty(p.shape[:-1] + (n,))
    x = p
    for j in range(n):
        J = systems.jacobian_many(sys, x)
        w = np.einsum("...ij,...j->...i", J, v)
        s = np.linalg.norm(w, axis=-1)
        logs[..., j] = -np.log(s)
        v = w / s[..., None]
        x = systems.step_many(sys, x)
    return logs, np.ones(p.shape[:-1], dtype=bool)


def expansion_log(sys, x, n: int,
                  splitting_iters: int = systems.DEFAULT_SPLITTING_ITERS) -> ExpansionLog:
    """Expansion log of a single orbit; propagates DerivativeUndefined."""
    if sys.dim == 1:
        logs, _ = orbit_logs_batch(sys, np.asarray([x], dtype=float), n,
                                   on_break="raise")
        return ExpansionLog(origin=float(x), values=logs[0])
    logs, _ = orbit_logs_batch(sys, np.asarray(x, dtype=float).reshape(1, 2), n,
                               splitting_iters=splitting_iters)
    return ExpansionLog(origin=np.asarray(x, dtype=float), values=logs[0])


# ---------------------------------------------------------------------------
# Expansion time and hyperbolic times.
# ---------------------------------------------------------------------------

def expansion_time(log: ExpansionLog, p: HyperbolicParams):
    """Smallest N with all prefix averages from N to the horizon below -b.

    Returns Censored(horizon) when the condition still fails at the horizon;
    the all-n>=N definition is only verifiable up to n_max and we never
    silently truncate.
    """
    if len(log) < p.n_max:
        raise ValidationError("expansion_time: log shorter than the horizon")
    vals = log.values[: p.n_max]
    avgs = np.cumsum(vals) / np.arange(1, p.n_max + 1)
    bad = np.nonzero(avgs >= -p.b)[0]
    if len(bad) == 0:
        return 1
    last_bad = int(bad[-1]) + 1  # 1-based prefix length
    if last_bad >= p.n_max:
        return Censored(p.n_max)
    return last_bad + 1


def hyperbolic_times(log, sigma: float) -> np.ndarray:
    """All n with every suffix-window sum ending at n below k*log(sigma).

    Single O(length) Pliss-type scan: with prefix sums S of (a_j - log sigma),
    n qualifies iff S_n <= min(S_0..S_{n-1}).  Exact ties count (the defining
    inequality is non-strict).
    """
    if not 0.0 < sigma < 1.0:
        raise ValidationError("hyperbolic_times: sigma in (0,1)")
    vals = log.values if isinstance(log, ExpansionLog) else np.asarray(log, dtype=float)
    shifted = vals - math.log(sigma)
    s = np.concatenate([[0.0], np.cumsum(shifted)])
    runmin = np.minimum.accumulate(s[:-1])
    return np.nonzero(s[1:] <= runmin)[0] + 1


def frequency_check(log: ExpansionLog, p: HyperbolicParams):
    """(theta_hat, pass): fraction of iterates up to the horizon that are hyperbolic.

    Censored samples are excluded from frequency statistics and fail the check.
    """
    e = expansion_time(log, p)
    if isinstance(e, Censored):
        return 0.0, False
    times = hyperbolic_times(log.values[: p.n_max], p.sigma)
    theta_hat = len(times) / p.n_max
    return theta_hat, theta_hat > 0.0


def hyperbolic_report(log: ExpansionLog, p: HyperbolicParams) -> HyperbolicReport:
    times = hyperbolic_times(log.values[: p.n_max], p.sigma)
    theta_hat, _ = frequency_check(log, p)
    return HyperbolicReport(
        expansion_time=expansion_time(log, p),
        times=times,
        frequency=len(times) / p.n_max,
        theta_check=theta_hat,
    )


# ---------------------------------------------------------------------------
# Tail curves.
# ---------------------------------------------------------------------------

def censored_tail_events(logs: np.ndarray, b: float) -> np.ndarray:
    """Per-row largest failing prefix length L (0 if none): E > n iff L >= n."""
    n = logs.shape[-1]
    avgs = np.cumsum(logs, axis=-1) / np.arange(1, n + 1)
    bad = avgs >= -b
    has = bad.any(axis=-1)
    last = np.where(has, n - 1 - np.argmax(bad[..., ::-1], axis=-1), -1)
    return last + 1  # 1-based prefix length, 0 when never bad


def tail_curve(sys, disk, p: HyperbolicParams, samples: int, seed: int,
               splitting_iters: int = systems.DEFAULT_SPLITTING_ITERS,
               workers: int = 1) -> TailEstimate:
    """Monte-Carlo estimate of Leb_disk{E > n} for n = 0..n_max.

    Points are sampled uniformly (w.r.t. arclength) on the reference disk;
    the curve is deterministic given the seed and independent of the worker
    count (chunks own fixed RNG streams and merge by counter addition).
    """
    if samples < 100:
        raise ValidationError("tail_curve: samples >= 100")
    chunks = _chunk_sizes(samples, max(1, workers) * 8)
    counts = np.zeros(p.n_max + 1, dtype=np.int64)
    censored = 0
    skipped = 0
    total = 0
    for ci, csize in enumerate(chunks):
        rng = stream(seed, PHASE_TAILS, ci)
        params = rng.uniform(-disk.radius, disk.radius, size=csize)
        pts = disk.points_at(params)
        logs, ok = orbit_logs_batch(sys, pts, p.n_max,
                                    splitting_iters=splitting_iters, on_break="mask")
        logs = logs[ok]
        skipped += int(csize - ok.sum())
        L = censored_tail_events(logs, p.b)
        censored += int(np.sum(L >= p.n_max))
        # E > n  <=>  L >= n for n >= 1; curve(0) counts everything.
        counts[0] += len(L)
        hist = np.bincount(np.clip(L, 0, p.n_max), minlength=p.n_max + 1)
        counts[1:] += np.cumsum(hist[::-1])[::-1][1:]
        total += len(L)
    curve = counts / max(total, 1)
    return TailEstimate(curve=curve, sample_count=total,
                        censored_fraction=censored / max(total, 1),
                        disk=disk, skipped=skipped)


def _chunk_sizes(total: int, parts: int):
    parts = min(parts, total)
    base = total // parts
    rem = total % parts
    return [base + (1 if i < rem else 0) for i in range(parts)]


# ---------------------------------------------------------------------------
# Decay fitting.
# ---------------------------------------------------------------------------

def _linfit(x, y):
    """Least-squares line fit returning (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 0.0 if ss_tot < 1e-300 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(coef[0]), float(coef[1]), r2


def fit_decay_curve(ns, ys, force_tau=None, window=None, min_points: int = 5) -> DecayFit:
    """Fit ys ~ exp(-rate * n^tau) on strictly positive values inside the window.

    With force_tau given, a single regression of log y on n^tau; otherwise tau
    comes from regressing log(-log y) on log n first, then the rate from the
    forced-tau fit.  r_squared always refers to the final rate regression.
    """
    ns = np.asarray(ns, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if window is None:
        positive = ns[ys > 0]
        if len(positive) == 0:
            raise InsufficientTail("no strictly positive tail values")
        n_hi = float(positive.max())
        n_lo = max(1.0, math.ceil(ns.max() / 4.0))
        window = (n_lo, n_hi)
    sel = (ns >= window[0]) & (ns <= window[1]) & (ys > 0)
    if int(sel.sum()) < min_points:
        raise InsufficientTail(
            f"{int(sel.sum())} usable points in window {window}, need {min_points}")
    n_sel, y_sel = ns[sel], ys[sel]
    if force_tau is None:
        tsel = (y_sel < 1.0) & (n_sel >= 1.0)
        if int(tsel.sum()) < min_points:
            raise InsufficientTail("too few points below 1 for the tau regression")
        slope, _, _ = _linfit(np.log(n_sel[tsel]), np.log(-np.log(y_sel[tsel])))
        tau = min(1.0, max(1e-6, slope))
        forced = False
    else:
        tau = float(force_tau)
        forced = True
    slope, _, r2 = _linfit(n_sel ** tau, np.log(y_sel))
    return DecayFit(tau=tau, rate=-slope, r_squared=r2, window=(float(window[0]), float(window[1])),
                    forced_tau=forced, points_used=int(sel.sum()))


def fit_decay(tail: TailEstimate, force_tau=None, window=None) -> DecayFit:
    ns = np.arange(len(tail.curve))
    return fit_decay_curve(ns, tail.curve, force_tau=force_tau, window=window)


def fit_power_law(ns, ys, window=None, min_points: int = 5):
    """Log-log line fit ys ~ n^(-p); returns (p, r_squared, points_used)."""
    ns = np.asarray(ns, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if window is None:
        positive = ns[(ys > 0) & (ns >= 1)]
        if len(positive) == 0:
            raise InsufficientTail("no strictly positive tail values")
        window = (max(1.0, math.ceil(ns.max() / 4.0)), float(positive.max()))
    sel = (ns >= window[0]) & (ns <= window[1]) & (ys > 0) & (ns >= 1)
    if int(sel.sum()) < min_points:
        raise InsufficientTail("too few points for the power-law fit")
    slope, _, r2 = _linfit(np.log(ns[sel]), np.log(ys[sel]))
    return -slope, r2, int(sel.sum())


def compare_tail_models(tail: TailEstimate, window=None) -> dict:
    """Stretched-exponential vs power-law fits with a preferred-model verdict."""
    ns = np.arange(len(tail.curve))
    stretched = fit_decay_curve(ns, tail.curve, window=window)
    p, r2_pow, used = fit_power_law(ns, tail.curve, window=window)
    return {
        "stretched": stretched,
        "power_exponent": p,
        "power_r_squared": r2_pow,
        "power_points": used,
        "preferred": "power" if r2_pow > stretched.r_squared else "stretched",
    }
