"""Map zoo: expanding circle maps and (perturbed) hyperbolic torus automorphisms.

All systems act on the torus [0,1)^d with d in {1, 2} and expose closed-form
derivatives, so every quantity downstream (expansion logs, pre-balls, disks)
is exact up to float rounding.  2D members carry a fixed reference splitting
(the eigenframe of the linear automorphism) from which invariant directions
are estimated by cone iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConstructionFailed,
    DerivativeUndefined,
    NonConvergent,
    ValidationError,
)

# Hyperbolic automorphism [[2,1],[1,1]] of the 2-torus and its eigenframe.
CAT_MATRIX = np.array([[2.0, 1.0], [1.0, 1.0]])
CAT_MATRIX_INV = np.array([[1.0, -1.0], [-1.0, 2.0]])
CAT_LAMBDA_U = (3.0 + math.sqrt(5.0)) / 2.0
CAT_LAMBDA_S = (3.0 - math.sqrt(5.0)) / 2.0


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# CAT_MATRIX is symmetric, so the eigenframe is orthonormal.
CAT_E_U = _unit([1.0, (math.sqrt(5.0) - 1.0) / 2.0])
CAT_E_S = _unit([1.0, -(math.sqrt(5.0) + 1.0) / 2.0])

DEFAULT_CONE_WIDTH = 0.3
DEFAULT_SPLITTING_ITERS = 30
DEFAULT_MIN_ANGLE = 0.1

_1D_NAMES = ("doubling", "doubling_sine", "pomeau_manneville", "two_branch")
_2D_NAMES = ("cat", "perturbed_cat")


@dataclass(frozen=True)
class SystemDescriptor:
    """A concrete dynamical system of the zoo.

    ``constants`` holds verified numerical constants (e.g. sigma1/sigma2 of a
    perturbed map) so a descriptor round-trips through JSON reproducibly.
    """

    name: str
    dim: int
    params: dict = field(default_factory=dict)
    cone_width: float | None = None
    domination_lambda: float | None = None
    constants: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "params": dict(self.params),
            "cone_width": self.cone_width,
            "domination_lambda": self.domination_lambda,
            "constants": dict(self.constants),
        }


@dataclass(frozen=True)
class SplittingFrame:
    """Estimated invariant directions at a point, with the iteration defect."""

    at: np.ndarray
    e_cu: np.ndarray
    e_s: np.ndarray
    residual: float


def wrap(x):
    """Reduce coordinates modulo 1 into [0, 1)."""
    return np.asarray(x, dtype=float) % 1.0


def make_system(name: str, **params) -> SystemDescriptor:
    """Build a zoo member by name.  Unknown names raise ValidationError."""
    if name == "doubling":
        return SystemDescriptor("doubling", 1, {})
    if name == "doubling_sine":
        eps = float(params.get("eps", 0.1))
        if not 0.0 <= eps < 1.0 / (2.0 * math.pi):
            raise ValidationError("doubling_sine: need 0 <= eps < 1/(2*pi) for expansion")
        return SystemDescriptor("doubling_sine", 1, {"eps": eps})
    if name == "pomeau_manneville":
        alpha = float(params.get("alpha", 0.5))
        if not 0.0 < alpha < 1.0:
            raise ValidationError("pomeau_manneville: need alpha in (0,1)")
        return SystemDescriptor("pomeau_manneville", 1, {"alpha": alpha})
    if name == "two_branch":
        a = float(params.get("a", 0.4))
        if not 0.0 < a < 1.0:
            raise ValidationError("two_branch: need branch point a in (0,1)")
        return SystemDescriptor("two_branch", 1, {"a": a})
    if name == "cat":
        return SystemDescriptor(
            "cat", 2, {}, cone_width=float(params.get("cone_width", DEFAULT_CONE_WIDTH)),
            domination_lambda=CAT_LAMBDA_S / CAT_LAMBDA_U,
        )
    if name == "perturbed_cat":
        return make_perturbed_anosov(
            eps=float(params.get("eps", 0.0)),
            v_center=np.asarray(params.get("v_center", (0.0, 0.0)), dtype=float),
            v_radius=float(params.get("v_radius", 0.05)),
            cone_width=float(params.get("cone_width", DEFAULT_CONE_WIDTH)),
            grid_n=int(params.get("grid_n", 512)),
            delta0_max=float(params.get("delta0_max", 0.2)),
        )
    raise ValidationError(f"unknown system name: {name!r}")


def system_from_json(doc: dict) -> SystemDescriptor:
    return make_system(doc["name"], **doc.get("params", {}))


# ---------------------------------------------------------------------------
# Forward map and Jacobian, vectorized over points.
# ---------------------------------------------------------------------------

def _bump(t):
    """C^2 bump g(t) = (1-t)^3 on [0,1], zero beyond; g(0)=1, g,g',g'' vanish at 1."""
    t = np.asarray(t, dtype=float)
    return np.where(t < 1.0, (1.0 - np.minimum(t, 1.0)) ** 3, 0.0)


def _bump_d(t):
    t = np.asarray(t, dtype=float)
    return np.where(t < 1.0, -3.0 * (1.0 - np.minimum(t, 1.0)) ** 2, 0.0)


def _min_image(d):
    """Displacement reduced to the fundamental torus cell (-1/2, 1/2]^d."""
    return (np.asarray(d, dtype=float) + 0.5) % 1.0 - 0.5


def _shear_apply(params, pts):
    """Radial bump displacement toward the center, supported in B(center, radius)."""
    q = np.asarray(params["v_center"], dtype=float)
    r = float(params["v_radius"])
    eps = float(params["eps"])
    d = _min_image(pts - q)
    t = np.sum(d * d, axis=-1) / (r * r)
    return wrap(pts - eps * _bump(t)[..., None] * d)


def _shear_jacobian(params, pts):
    """Dh at pts: (N,2,2). h(y) = y - eps*g(|y-q|^2/r^2)*(y-q)."""
    q = np.asarray(params["v_center"], dtype=float)
    r = float(params["v_radius"])
    eps = float(params["eps"])
    d = _min_image(np.asarray(pts, dtype=float) - q)
    t = np.sum(d * d, axis=-1) / (r * r)
    g = _bump(t)
    gd = _bump_d(t)
    eye = np.broadcast_to(np.eye(2), d.shape[:-1] + (2, 2))
    outer = d[..., :, None] * d[..., None, :] / (r * r)
    return eye - eps * (g[..., None, None] * eye + 2.0 * gd[..., None, None] * outer)


def _shear_invert(params, pts, tol=1e-13, max_iter=60):
    """Newton inversion of the radial shear; identity outside the support ball.

    Works in coordinates centered at the bump: h maps B(0, r) onto itself
    (radial map s -> s(1 - eps*g(s^2/r^2)) is increasing), so only points
    inside the ball need iteration.
    """
    q = np.asarray(params["v_center"], dtype=float)
    r = float(params["v_radius"])
    eps = float(params["eps"])
    z = _min_image(np.asarray(pts, dtype=float) - q)
    inside = np.sum(z * z, axis=-1) < r * r
    w = z.copy()
    for _ in range(max_iter):
        if not np.any(inside):
            break
        t = np.sum(w * w, axis=-1) / (r * r)
        g = _bump(t)
        res = w - eps * g[..., None] * w - z
        if np.max(np.abs(res[inside])) < tol:
            break
        gd = _bump_d(t)
        eye = np.broadcast_to(np.eye(2), w.shape[:-1] + (2, 2)).copy()
        outer = w[..., :, None] * w[..., None, :] / (r * r)
        J = eye - eps * (g[..., None, None] * eye + 2.0 * gd[..., None, None] * outer)
        delta = np.linalg.solve(J, res[..., None])[..., 0]
        w = np.where(inside[..., None], w - delta, w)
    return wrap(q + np.where(inside[..., None], w, z))


def step_many(sys: SystemDescriptor, pts):
    """Apply the forward map to an array of points (shape (...,) for 1D, (...,2) for 2D)."""
    p = np.asarray(pts, dtype=float)
    if sys.name == "doubling":
        return (2.0 * p) % 1.0
    if sys.name == "doubling_sine":
        e = sys.params["eps"]
        return (2.0 * p + e * np.sin(2.0 * math.pi * p)) % 1.0
    if sys.name == "pomeau_manneville":
        a = sys.params["alpha"]
        return (p + p ** (1.0 + a)) % 1.0
    if sys.name == "two_branch":
        a = sys.params["a"]
        return np.where(p < a, p / a, (p - a) / (1.0 - a)) % 1.0
    if sys.name == "cat":
        return (p @ CAT_MATRIX.T) % 1.0
    if sys.name == "perturbed_cat":
        return _shear_apply(sys.params, (p @ CAT_MATRIX.T) % 1.0)
    raise ValidationError(f"unknown system {sys.name!r}")


def step(sys: SystemDescriptor, x):
    """Forward map of a single point; coordinates reduced mod 1."""
    if sys.dim == 1:
        return float(step_many(sys, np.asarray([x], dtype=float))[0])
    return step_many(sys, np.asarray(x, dtype=float).reshape(1, 2))[0]


def inverse_step_many(sys: SystemDescriptor, pts):
    """Inverse map for 2D zoo members (diffeomorphisms)."""
    p = np.asarray(pts, dtype=float)
    if sys.name == "cat":
        return (p @ CAT_MATRIX_INV.T) % 1.0
    if sys.name == "perturbed_cat":
        return (_shear_invert(sys.params, p) @ CAT_MATRIX_INV.T) % 1.0
    raise ValidationError(f"{sys.name} has no implemented inverse")


def derivative_1d(sys: SystemDescriptor, pts):
    """f'(x) for 1D members, branchwise (right-open branches)."""
    p = np.asarray(pts, dtype=float)
    if sys.name == "doubling":
        return np.full_like(p, 2.0)
    if sys.name == "doubling_sine":
        e = sys.params["eps"]
        return 2.0 + 2.0 * math.pi * e * np.cos(2.0 * math.pi * p)
    if sys.name == "pomeau_manneville":
        a = sys.params["alpha"]
        return 1.0 + (1.0 + a) * p ** a
    if sys.name == "two_branch":
        a = sys.params["a"]
        return np.where(p < a, 1.0 / a, 1.0 / (1.0 - a))
    raise ValidationError(f"{sys.name} is not a 1D system")


def derivative_breaks(sys: SystemDescriptor):
    """Interior branch junctions where one-sided derivatives differ.

    Convention: branches are right-open, the derivative at a junction is
    defined when both one-sided slopes agree (doubling at 1/2, the
    Pomeau-Manneville turnover point) and undefined when they do not.
    """
    if sys.name == "two_branch":
        return (sys.params["a"],)
    return ()


def jacobian(sys: SystemDescriptor, x):
    """Df(x) as a d x d matrix, exact for every zoo member."""
    if sys.dim == 1:
        xf = float(np.asarray(x).reshape(()))
        for b in derivative_breaks(sys):
            if abs(xf - b) < 1e-13:
                raise DerivativeUndefined(
                    f"{sys.name}: one-sided derivatives differ at branch junction x={b}")
        return np.array([[float(derivative_1d(sys, np.asarray([xf]))[0])]])
    return jacobian_many(sys, np.asarray(x, dtype=float).reshape(1, 2))[0]


def jacobian_many(sys: SystemDescriptor, pts):
    """Df at an array of 2D points, shape (N, 2, 2)."""
    p = np.asarray(pts, dtype=float)
    if sys.name == "cat":
        return np.broadcast_to(CAT_MATRIX, p.shape[:-1] + (2, 2)).copy()
    if sys.name == "perturbed_cat":
        ap = (p @ CAT_MATRIX.T) % 1.0
        return _shear_jacobian(sys.params, ap) @ CAT_MATRIX
    raise ValidationError(f"{sys.name} is not a 2D system")


# ---------------------------------------------------------------------------
# Lift arithmetic for 1D maps: separations along iterated curves.
# ---------------------------------------------------------------------------

def lift_gap(sys: SystemDescriptor, x, d):
    """F(x + d) - F(x) for the continuous degree-2 lift F; exact and branch-safe."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    return _lift(sys, x + d) - _lift(sys, x)


def _lift(sys: SystemDescriptor, t):
    t = np.asarray(t, dtype=float)
    k = np.floor(t)
    fr = t - k
    if sys.name == "doubling":
        return 2.0 * t
    if sys.name == "doubling_sine":
        e = sys.params["eps"]
        return 2.0 * t + e * np.sin(2.0 * math.pi * t)
    if sys.name == "pomeau_manneville":
        a = sys.params["alpha"]
        return 2.0 * k + fr + fr ** (1.0 + a)
    if sys.name == "two_branch":
        a = sys.params["a"]
        return 2.0 * k + np.where(fr < a, fr / a, 1.0 + (fr - a) / (1.0 - a))
    raise ValidationError(f"{sys.name} is not a 1D system")


def propagate_separation(sys: SystemDescriptor, x0, d0, n: int):
    """Signed lift separation of x0 and x0+d0 after n forward steps (vectorized)."""
    x = np.asarray(x0, dtype=float).copy()
    d = np.asarray(d0, dtype=float).copy()
    for _ in range(n):
        d = lift_gap(sys, x, d)
        x = step_many(sys, x)
    return d


# ---------------------------------------------------------------------------
# Splitting estimation for 2D members.
# ---------------------------------------------------------------------------

def reference_frame(sys: SystemDescriptor):
    """Constant extension bundle used to seed cone iteration."""
    if sys.dim != 2:
        raise ValidationError("reference_frame is 2D-only")
    return CAT_E_U.copy(), CAT_E_S.copy()


def _canonical_sign(v):
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def e_cu_batch(sys: SystemDescriptor, pts, iters: int = DEFAULT_SPLITTING_ITERS):
    """Unstable directions at pts via push-forward along backward orbit segments."""
    p = np.asarray(pts, dtype=float)
    hist = [p]
    for _ in range(iters):
        hist.append(inverse_step_many(sys, hist[-1]))
    e_u, _ = reference_frame(sys)
    v = np.broadcast_to(e_u, p.shape).copy()
    for k in range(iters, 0, -1):
        J = jacobian_many(sys, hist[k])
        v = np.einsum("...ij,...j->...i", J, v)
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v


def _e_s_at(sys: SystemDescriptor, x, iters: int):
    """Stable direction via pull-back along the forward orbit."""
    orbit = [np.asarray(x, dtype=float).reshape(2)]
    for _ in range(iters):
        orbit.append(step_many(sys, orbit[-1].reshape(1, 2))[0])
    _, e_s = reference_frame(sys)
    v = e_s.copy()
    for k in range(iters - 1, -1, -1):
        J = jacobian_many(sys, orbit[k].reshape(1, 2))[0]
        v = np.linalg.solve(J, v)
        v /= np.linalg.norm(v)
    return v


def splitting_at(sys: SystemDescriptor, x, iters: int = DEFAULT_SPLITTING_ITERS,
                 tol: float = 1e-6, min_angle: float = DEFAULT_MIN_ANGLE) -> SplittingFrame:
    """Estimate the invariant frame at x by finite cone iteration.

    The residual is the angle change of e_cu when the backward segment is
    extended by one more iterate; it is reported, never hidden.
    """
    if sys.dim != 2:
        raise ValidationError("splitting_at requires a 2D system")
    if iters < 1:
        raise ValidationError("splitting_at: iters >= 1")
    x = wrap(np.asarray(x, dtype=float).reshape(2))
    w1 = e_cu_batch(sys, x.reshape(1, 2), iters)[0]
    w2 = e_cu_batch(sys, x.reshape(1, 2), iters + 1)[0]
    residual = float(np.arccos(np.clip(abs(np.dot(w1, w2)), -1.0, 1.0)))
    if residual > tol:
        raise NonConvergent(
            f"splitting residual {residual:.3e} > {tol:.1e} after {iters} iterations")
    e_s = _e_s_at(sys, x, iters)
    angle = float(np.arccos(np.clip(abs(np.dot(w1, e_s)), -1.0, 1.0)))
    if angle < min_angle:
        raise NonConvergent(f"splitting angle {angle:.3e} below min_angle {min_angle}")
    return SplittingFrame(at=x, e_cu=_canonical_sign(w1), e_s=_canonical_sign(e_s),
                          residual=residual)


def cu_inverse_norm(sys: SystemDescriptor, x, iters: int = DEFAULT_SPLITTING_ITERS) -> float:
    """|| Df(x)^{-1} restricted to E^cu at f(x) || = 1 / (stretch of Df(x) along e_cu(x))."""
    if sys.dim == 1:
        J = jacobian(sys, x)
        return 1.0 / abs(float(J[0, 0]))
    frame = splitting_at(sys, x, iters=iters)
    J = jacobian_many(sys, frame.at.reshape(1, 2))[0]
    return 1.0 / float(np.linalg.norm(J @ frame.e_cu))


def in_perturbation_region(sys: SystemDescriptor, pts):
    """Mask of points whose derivative differs from the linear automorphism."""
    if sys.name != "perturbed_cat":
        raise ValidationError("in_perturbation_region applies to perturbed_cat only")
    q = np.asarray(sys.params["v_center"], dtype=float)
    r = float(sys.params["v_radius"])
    ap = (np.asarray(pts, dtype=float) @ CAT_MATRIX.T) % 1.0
    d = _min_image(ap - q)
    return np.sum(d * d, axis=-1) < r * r


# ---------------------------------------------------------------------------
# Perturbed Anosov construction with verified constants.
# ---------------------------------------------------------------------------

def _cone_directions(cone_width: float, count: int = 17):
    ts = np.linspace(-1.0, 1.0, count)
    dirs = CAT_E_U[None, :] + (ts * cone_width)[:, None] * CAT_E_S[None, :]
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def verify_perturbed_items(sys: SystemDescriptor, grid_n: int = 512,
                           delta0_max: float = 0.2,
                           splitting_iters: int = DEFAULT_SPLITTING_ITERS) -> dict:
    """Grid checks of the four construction items; returns measured constants.

    (1) the cu-cone of the configured width maps strictly inside itself;
    (2) stretch along every cone direction exceeds sigma1 > 1 (volume
        expansion on cu-disks);
    (3) the inverse stretch along the estimated invariant direction is
        below sigma2 < 1 off the perturbation region;
    (4) and below 1 + delta0 on it.
    """
    a = sys.cone_width
    xs = (np.arange(grid_n) + 0.5) / grid_n
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    J = jacobian_many(sys, pts)

    # Item 1: images of the cone boundary stay strictly inside the cone.
    failures = []
    max_ratio = 0.0
    for sgn in (+1.0, -1.0):
        v = _unit(CAT_E_U + sgn * a * CAT_E_S)
        w = np.einsum("nij,j->ni", J, v)
        cu = w @ CAT_E_U
        cs = w @ CAT_E_S
        if np.any(cu <= 0):
            failures.append((1, "cone direction flipped orientation"))
            break
        max_ratio = max(max_ratio, float(np.max(np.abs(cs) / (a * np.abs(cu)))))
    cone_margin = 1.0 - max_ratio
    if not failures and cone_margin <= 0.0:
        failures.append((1, f"cone not strictly invariant (max boundary ratio {max_ratio:.4f})"))

    # Item 2: minimum stretch over sampled cone directions.
    dirs = _cone_directions(a)
    stretches = np.linalg.norm(np.einsum("nij,kj->nki", J, dirs), axis=-1)
    sigma1_hat = float(np.min(stretches))
    if sigma1_hat <= 1.0:
        k = np.unravel_index(int(np.argmin(stretches)), stretches.shape)
        failures.append((2, f"min cone stretch {sigma1_hat:.4f} <= 1 at grid point {pts[k[0]]}"))

    # Items 3 and 4 along the estimated invariant direction.
    e = e_cu_batch(sys, pts, iters=splitting_iters)
    inv_stretch = 1.0 / np.linalg.norm(np.einsum("nij,nj->ni", J, e), axis=-1)
    in_v = in_perturbation_region(sys, pts) if sys.name == "perturbed_cat" else \
        np.zeros(len(pts), dtype=bool)
    sigma2_hat = float(np.max(inv_stretch[~in_v])) if np.any(~in_v) else 0.0
    sigma2_cone = float(np.max(1.0 / stretches[~in_v])) if np.any(~in_v) else 0.0
    if sigma2_hat >= 1.0:
        failures.append((3, f"inverse cu-stretch {sigma2_hat:.4f} >= 1 off the region"))
    on_v_max = float(np.max(inv_stretch[in_v])) if np.any(in_v) else sigma2_hat
    delta0_hat = max(0.0, on_v_max - 1.0)
    if on_v_max >= 1.0 + delta0_max:
        failures.append((4, f"inverse cu-stretch {on_v_max:.4f} >= 1 + {delta0_max} on the region"))

    # Numerical invertibility of the composed map.
    probe = pts[:: max(1, len(pts) // 4096)]
    back = inverse_step_many(sys, step_many(sys, probe))
    inv_err = float(np.max(np.linalg.norm(_min_image(back - probe), axis=-1)))
    if inv_err > 1e-9:
        failures.append((1, f"inverse round-trip error {inv_err:.2e} > 1e-9"))

    constants = {
        "sigma1": sigma1_hat,
        "sigma2": sigma2_hat,
        "sigma2_cone": sigma2_cone,
        "delta0": delta0_hat,
        "cone_margin": cone_margin,
        "inverse_roundtrip": inv_err,
        "grid_n": grid_n,
        "items_pass": not failures,
    }
    return {"constants": constants, "failures": failures}


def make_perturbed_anosov(eps: float, v_center, v_radius: float,
                          cone_width: float = DEFAULT_CONE_WIDTH,
                          grid_n: int = 512, delta0_max: float = 0.2) -> SystemDescriptor:
    """Radial-shear deformation of the linear automorphism, with verified items.

    The map is f = h o A where h displaces points toward v_center inside
    B(v_center, v_radius) with a C^2 bump profile of strength eps.  The four
    construction items are checked on a grid_n x grid_n grid and the measured
    constants recorded in the descriptor; any failure raises
    ConstructionFailed naming the failing items.
    """
    v_center = wrap(np.asarray(v_center, dtype=float).reshape(2))
    if v_radius <= 0 or v_radius >= 0.5:
        raise ValidationError("v_radius must lie in (0, 0.5)")
    # Radial derivative of h: 1 - eps*(g + 2t g'); keep it positive for injectivity.
    ts = np.linspace(0.0, 1.0, 513)
    radial = 1.0 - eps * (_bump(ts) + 2.0 * ts * _bump_d(ts))
    if np.min(radial) <= 0.0:
        raise ConstructionFailed([(1, f"radial shear not injective at eps={eps}")])
    sys = SystemDescriptor(
        "perturbed_cat", 2,
        {"eps": float(eps), "v_center": tuple(v_center.tolist()), "v_radius": float(v_radius)},
        cone_width=float(cone_width),
        domination_lambda=CAT_LAMBDA_S / CAT_LAMBDA_U,
    )
    report = verify_perturbed_items(sys, grid_n=grid_n, delta0_max=delta0_max)
    if report["failures"]:
        raise ConstructionFailed(report["failures"])
    lam = _estimate_domination(sys, grid_n=min(grid_n, 128))
    return replace(sys, constants=report["constants"], domination_lambda=lam)


def _estimate_domination(sys: SystemDescriptor, grid_n: int = 128) -> float:
    """Grid estimate of ||Df|e_s|| * ||Df^{-1}|e_cu at f(x)|| (domination ratio)."""
    xs = (np.arange(grid_n) + 0.5) / grid_n
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    J = jacobian_many(sys, pts)
    e = e_cu_batch(sys, pts, iters=16)
    cu_stretch = np.linalg.norm(np.einsum("nij,nj->ni", J, e), axis=-1)
    s_stretch = np.linalg.norm(np.einsum("nij,j->ni", J, CAT_E_S), axis=-1)
    return float(np.max(s_stretch / cu_stretch))
