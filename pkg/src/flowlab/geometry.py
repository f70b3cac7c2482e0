"""Constant-curvature model manifolds.

Flat space uses global Cartesian coordinates.  The sphere of sectional
curvature kappa^2 is the radius-1/kappa sphere embedded in R^{n+1}; the
hyperbolic space of sectional curvature -k^2 is the upper sheet of the
hyperboloid <x,x>_M = -1/k^2 in Minkowski R^{n,1} with the timelike
coordinate stored last.  Points on curved models therefore carry n+1
ambient coordinates.

Metric components, Christoffel symbols and tangent-vector components are
expressed in a graph chart: the sphere chart drops the largest-magnitude
ambient component, the hyperboloid chart drops the timelike one.  For a
vector tangent to the embedded surface the chart components are exactly the
remaining ambient slots, so no chart-transition bookkeeping is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import gamma as _gamma

POINT_TOL = 1e-12  # relative constraint tolerance for on-manifold checks
CUT_LOCUS_MARGIN = 1e-6


class ManifoldKind(str, Enum):
    FLAT = "flat"
    SPHERE = "sphere"
    HYPERBOLIC = "hyperbolic"


class InvalidPointError(ValueError):
    pass


class CutLocusError(ValueError):
    """Geodesic data requested at or past the cut locus."""


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ManifoldModel:
    kind: ManifoldKind
    dim: int
    curvature_param: float = 0.0

    def __post_init__(self):
        if not (2 <= self.dim <= 4):
            raise DomainError(f"dim must be 2..4, got {self.dim}")
        if self.kind is ManifoldKind.FLAT:
            object.__setattr__(self, "curvature_param", 0.0)
        elif self.curvature_param <= 0:
            raise DomainError("curved model needs curvature_param > 0")

    @property
    def sec(self) -> float:
        """Constant sectional curvature."""
        if self.kind is ManifoldKind.SPHERE:
            return self.curvature_param**2
        if self.kind is ManifoldKind.HYPERBOLIC:
            return -self.curvature_param**2
        return 0.0

    @property
    def scalar_curvature(self) -> float:
        return self.dim * (self.dim - 1) * self.sec

    @property
    def ambient_dim(self) -> int:
        return self.dim if self.kind is ManifoldKind.FLAT else self.dim + 1

    @property
    def diameter(self) -> float:
        if self.kind is ManifoldKind.SPHERE:
            return math.pi / self.curvature_param
        return math.inf

    def __str__(self):
        tag = {ManifoldKind.FLAT: "R", ManifoldKind.SPHERE: "S", ManifoldKind.HYPERBOLIC: "H"}[self.kind]
        if self.kind is ManifoldKind.FLAT:
            return f"{tag}{self.dim}"
        return f"{tag}{self.dim}(c={self.curvature_param:g})"


@dataclass(frozen=True)
class ChartPoint:
    """Point in the fixed global representation of its manifold.

    Flat: n Cartesian coordinates.  Sphere/hyperbolic: n+1 ambient
    coordinates on the embedded surface.
    """

    coords: tuple

    @property
    def vec(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


@dataclass(frozen=True)
class CovariantCotensor:
    rank: int
    components: object  # callable point -> ndarray, symmetric in its indices

    def __post_init__(self):
        if self.rank not in (1, 2, 3):
            raise DomainError("rank must be 1, 2, or 3")


def flat(dim: int = 4) -> ManifoldModel:
    return ManifoldModel(ManifoldKind.FLAT, dim)


def sphere(dim: int, kappa: float = 1.0) -> ManifoldModel:
    return ManifoldModel(ManifoldKind.SPHERE, dim, kappa)


def hyperbolic(dim: int, k: float = 1.0) -> ManifoldModel:
    return ManifoldModel(ManifoldKind.HYPERBOLIC, dim, k)


def standard_models() -> list[ManifoldModel]:
    """The five canonical models every sweep runs on."""
    return [flat(4), sphere(2), sphere(4), hyperbolic(3), hyperbolic(4)]


def as_vec(x) -> np.ndarray:
    if isinstance(x, ChartPoint):
        return x.vec
    return np.asarray(x, dtype=float)


def minkowski_dot(u, v):
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    return np.sum(u[..., :-1] * v[..., :-1], axis=-1) - u[..., -1] * v[..., -1]


def check_point(M: ManifoldModel, x) -> np.ndarray:
    """Validate and return the coordinate array; raise InvalidPointError."""
    v = as_vec(x)
    if v.shape[-1] != M.ambient_dim:
        raise InvalidPointError(f"expected {M.ambient_dim} coordinates, got {v.shape[-1]}")
    if M.kind is ManifoldKind.SPHERE:
        r2 = 1.0 / M.curvature_param**2
        if np.any(np.abs(np.sum(v * v, axis=-1) - r2) > POINT_TOL * max(r2, 1.0) * 10):
            raise InvalidPointError("point violates the sphere constraint")
    elif M.kind is ManifoldKind.HYPERBOLIC:
        r2 = 1.0 / M.curvature_param**2
        if np.any(np.abs(minkowski_dot(v, v) + r2) > POINT_TOL * max(r2, 1.0) * 10) or np.any(
            v[..., -1] <= 0
        ):
            raise InvalidPointError("point violates the hyperboloid constraint")
    return v


def project_to_manifold(M: ManifoldModel, v) -> np.ndarray:
    """Rescale an ambient vector onto the model surface (used after arithmetic)."""
    v = np.asarray(v, float)
    if M.kind is ManifoldKind.SPHERE:
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        return v / (nrm * M.curvature_param)
    if M.kind is ManifoldKind.HYPERBOLIC:
        spatial = v[..., :-1]
        t = np.sqrt(1.0 / M.curvature_param**2 + np.sum(spatial * spatial, axis=-1))
        return np.concatenate([spatial, t[..., None]], axis=-1)
    return v


# ----------------------------------------------------------------- distance

def distance(M: ManifoldModel, x, y):
    """Geodesic distance; broadcasts over leading axes.

    Chord-based branches keep near-coincident pairs well conditioned: the
    arccos/arccosh forms lose half the mantissa once the angle is small.
    """
    xv, yv = check_point(M, x), check_point(M, y)
    if M.kind is ManifoldKind.FLAT:
        return np.linalg.norm(yv - xv, axis=-1)
    c = M.curvature_param
    if M.kind is ManifoldKind.SPHERE:
        cosang = c * c * np.sum(xv * yv, axis=-1)
        chord = np.linalg.norm(yv - xv, axis=-1)
        near = 2.0 * np.arcsin(np.clip(c * chord / 2.0, 0.0, 1.0)) / c
        far = np.arccos(np.clip(cosang, -1.0, 1.0)) / c
        return np.where(cosang > 0.5, near, far)
    q2 = minkowski_dot(yv - xv, yv - xv)  # = (4/c^2) sinh^2(c d / 2)
    return 2.0 * np.arcsinh(c * np.sqrt(np.maximum(q2, 0.0)) / 2.0) / c


def geodesic_point(M: ManifoldModel, x0, x, rho: float):
    """Point X(rho) on the geodesic with X(0)=x0, X(1)=x."""
    a, b = check_point(M, x0), check_point(M, x)
    d = distance(M, x0, x)
    if M.kind is ManifoldKind.FLAT:
        return a + rho * (b - a)
    _guard_cut_locus(M, d)
    theta = M.curvature_param * d
    if theta < 1e-12:
        return a.copy()
    if M.kind is ManifoldKind.SPHERE:
        out = (math.sin((1 - rho) * theta) * a + math.sin(rho * theta) * b) / math.sin(theta)
    else:
        out = (math.sinh((1 - rho) * theta) * a + math.sinh(rho * theta) * b) / math.sinh(theta)
    return project_to_manifold(M, out)


def _guard_cut_locus(M: ManifoldModel, d) -> None:
    if M.kind is ManifoldKind.SPHERE and np.any(
        np.asarray(d) >= math.pi / M.curvature_param - CUT_LOCUS_MARGIN
    ):
        raise CutLocusError("pair at or beyond the injectivity radius")


@dataclass(frozen=True)
class GeodesicSegment:
    """Constant-speed segment X: [0,1] -> M with X(0)=x0, X(1)=x."""

    manifold: ManifoldModel
    x0: tuple
    x: tuple
    length: float

    @classmethod
    def between(cls, M, x0, x):
        a, b = check_point(M, x0), check_point(M, x)
        d = float(distance(M, x0, x))
        _guard_cut_locus(M, d)
        return cls(M, tuple(a), tuple(b), d)

    def point(self, rho: float) -> np.ndarray:
        return geodesic_point(self.manifold, self.x0, self.x, rho)

    def velocity(self, rho: float) -> np.ndarray:
        """Ambient dX/drho; |velocity| = length in the ambient norm."""
        M = self.manifold
        a, b = np.asarray(self.x0), np.asarray(self.x)
        if M.kind is ManifoldKind.FLAT:
            return b - a
        theta = M.curvature_param * self.length
        if theta < 1e-12:
            return np.zeros_like(a)
        if M.kind is ManifoldKind.SPHERE:
            return theta * (-math.cos((1 - rho) * theta) * a + math.cos(rho * theta) * b) / math.sin(theta)
        return theta * (-math.cosh((1 - rho) * theta) * a + math.cosh(rho * theta) * b) / math.sinh(theta)


def exp_map(M: ManifoldModel, x, v_unit, r):
    """exp_x(r v) for an ambient unit tangent v at x; broadcasts over r."""
    xv = check_point(M, x)
    v = np.asarray(v_unit, float)
    r = np.asarray(r, float)[..., None]
    if M.kind is ManifoldKind.FLAT:
        return xv + r * v
    c = M.curvature_param
    if M.kind is ManifoldKind.SPHERE:
        return np.cos(c * r) * xv + np.sin(c * r) * v / c
    return np.cosh(c * r) * xv + np.sinh(c * r) * v / c


def random_point(M: ManifoldModel, rng, spread: float = 1.0):
    if M.kind is ManifoldKind.FLAT:
        return spread * rng.standard_normal(M.dim)
    if M.kind is ManifoldKind.SPHERE:
        v = rng.standard_normal(M.dim + 1)
        return v / (np.linalg.norm(v) * M.curvature_param)
    u = spread * rng.standard_normal(M.dim)
    return np.append(u, math.sqrt(1.0 / M.curvature_param**2 + float(u @ u)))


def project_tangent(M: ManifoldModel, x, v) -> np.ndarray:
    """Orthogonal projection of an ambient vector onto the tangent space at x."""
    xv = check_point(M, x)
    v = np.asarray(v, float)
    c2 = M.curvature_param**2
    if M.kind is ManifoldKind.SPHERE:
        return v - c2 * np.sum(v * xv, axis=-1, keepdims=True) * xv
    if M.kind is ManifoldKind.HYPERBOLIC:
        return v + c2 * minkowski_dot(v, xv)[..., None] * xv
    return v


def induced_dot(M: ManifoldModel, u, v):
    """Inner product of tangent vectors in ambient representation."""
    if M.kind is ManifoldKind.HYPERBOLIC:
        return minkowski_dot(u, v)
    return np.sum(np.asarray(u, float) * np.asarray(v, float), axis=-1)


def tangent_basis(M: ManifoldModel, x) -> np.ndarray:
    """Orthonormal basis of the tangent space at x, rows = basis vectors."""
    xv = check_point(M, x)
    basis = []
    for i in range(M.ambient_dim):
        e = np.zeros(M.ambient_dim)
        e[i] = 1.0
        v = project_tangent(M, xv, e)
        for b in basis:
            v = v - float(induced_dot(M, v, b)) * b
        nrm = math.sqrt(max(float(induced_dot(M, v, v)), 0.0))
        if nrm > 1e-8:
            basis.append(v / nrm)
        if len(basis) == M.dim:
            break
    return np.array(basis)


def random_tangent(M: ManifoldModel, x, rng, size: int | None = None):
    """Unit tangent vector(s) at x, uniform on the tangent unit sphere of the
    induced metric; ambient representation."""
    if M.kind is ManifoldKind.FLAT:
        shape = (M.dim,) if size is None else (size, M.dim)
        g = rng.standard_normal(shape)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)
    B = tangent_basis(M, x)
    shape = (M.dim,) if size is None else (size, M.dim)
    c = rng.standard_normal(shape)
    c = c / np.linalg.norm(c, axis=-1, keepdims=True)
    return c @ B


# ------------------------------------------------------------- chart algebra

def chart_axis(M: ManifoldModel, x) -> int | None:
    if M.kind is ManifoldKind.FLAT:
        return None
    if M.kind is ManifoldKind.HYPERBOLIC:
        return M.dim  # timelike slot
    return int(np.argmax(np.abs(as_vec(x))))


def chart_coords(M: ManifoldModel, x, axis: int | None = None) -> np.ndarray:
    v = check_point(M, x)
    if M.kind is ManifoldKind.FLAT:
        return v
    if axis is None:
        axis = chart_axis(M, x)
    return np.delete(v, axis)


def chart_embed(M: ManifoldModel, u, axis: int | None = None, sign: float = 1.0) -> np.ndarray:
    """Inverse of chart_coords on the chart's hemisphere / sheet."""
    u = np.asarray(u, float)
    if M.kind is ManifoldKind.FLAT:
        return u
    r2 = 1.0 / M.curvature_param**2
    if M.kind is ManifoldKind.HYPERBOLIC:
        return np.append(u, math.sqrt(r2 + float(u @ u)))
    z2 = r2 - float(u @ u)
    if z2 <= 0:
        raise DomainError("chart coordinates outside the hemisphere")
    return np.insert(u, axis, sign * math.sqrt(z2))


def chart_components(M: ManifoldModel, x, v_ambient, axis: int | None = None) -> np.ndarray:
    """Chart components of a vector tangent at x: drop the chart axis slot."""
    v = np.asarray(v_ambient, float)
    if M.kind is ManifoldKind.FLAT:
        return v
    if axis is None:
        axis = chart_axis(M, x)
    return np.delete(v, axis, axis=-1)


def metric_from_chart(M: ManifoldModel, u) -> np.ndarray:
    u = np.asarray(u, float)
    n = M.dim
    if M.kind is ManifoldKind.FLAT:
        return np.eye(n)
    r2 = 1.0 / M.curvature_param**2
    if M.kind is ManifoldKind.SPHERE:
        z2 = r2 - float(u @ u)
        if z2 <= 0:
            raise DomainError("chart coordinates outside the hemisphere")
        return np.eye(n) + np.outer(u, u) / z2
    t2 = r2 + float(u @ u)
    return np.eye(n) - np.outer(u, u) / t2


def metric_at(M: ManifoldModel, x) -> np.ndarray:
    """g_{mu nu}(x) in the graph chart at x; symmetric positive definite."""
    v = check_point(M, x)
    return metric_from_chart(M, chart_coords(M, v, chart_axis(M, v)))


def inverse_metric_at(M: ManifoldModel, x) -> np.ndarray:
    u = chart_coords(M, check_point(M, x))
    n = M.dim
    if M.kind is ManifoldKind.FLAT:
        return np.eye(n)
    r2 = 1.0 / M.curvature_param**2
    if M.kind is ManifoldKind.SPHERE:
        # Sherman-Morrison of I + uu^T/z^2 with z^2 = r2 - |u|^2
        return np.eye(n) - np.outer(u, u) / r2
    return np.eye(n) + np.outer(u, u) / r2


def christoffels_from_chart(M: ManifoldModel, u) -> np.ndarray:
    """Gamma^k_{ij} = Sec * g_{ij}(u) * u^k for both curved graph charts."""
    n = M.dim
    if M.kind is ManifoldKind.FLAT:
        return np.zeros((n, n, n))
    g = metric_from_chart(M, u)
    return M.sec * np.einsum("ij,k->kij", g, np.asarray(u, float))


def christoffels(M: ManifoldModel, x) -> np.ndarray:
    """Gamma^k_{ij}(x) in the graph chart at x; symmetric in the lower pair."""
    v = check_point(M, x)
    return christoffels_from_chart(M, chart_coords(M, v, chart_axis(M, v)))


def curvature_scalar(M: ManifoldModel, x) -> float:
    check_point(M, x)
    return M.scalar_curvature


# ------------------------------------------------------------------- sigma

def sigma_ambient(M: ManifoldModel, x, y) -> np.ndarray:
    """Ambient components of sigma(x, y): the tangent vector at y of length
    d(x, y) pointing away from x along the geodesic."""
    xv, yv = check_point(M, x), check_point(M, y)
    if M.kind is ManifoldKind.FLAT:
        return yv - xv
    d = float(distance(M, x, y))
    _guard_cut_locus(M, d)
    c = M.curvature_param
    theta = c * d
    if M.kind is ManifoldKind.SPHERE:
        proj = xv - c * c * float(np.dot(xv, yv)) * yv
        s = math.sin(theta)
    else:
        proj = xv + c * c * float(minkowski_dot(xv, yv)) * yv
        s = math.sinh(theta)
    if theta < 1e-8:
        # sigma -> (y - x) tangentially; the prefactor tends to -1
        return -proj
    return -(d * c / s) * proj


def sigma(M: ManifoldModel, x, y, axis: int | None = None) -> np.ndarray:
    """Chart components at y of the sigma bi-tensor."""
    return chart_components(M, y, sigma_ambient(M, x, y), axis)


def norm_identity_defect(M: ManifoldModel, x, y) -> float:
    """Relative defect of g_{mu nu}(y) sigma^mu sigma^nu = d^2(x, y)."""
    s = sigma(M, x, y)
    g = metric_at(M, y)
    d2 = float(distance(M, x, y)) ** 2
    if d2 == 0.0:
        return float(s @ g @ s)
    return abs(float(s @ g @ s) - d2) / d2


# --------------------------------------------- covariant derivatives, Taylor

# A depth-r chain of nested central differences has noise eps/h^r and
# truncation h^2, so the near-optimal uniform step grows with the depth.
_CHAIN_STEP = {1: 1e-4, 2: 1e-4, 3: 6e-4, 4: 2e-3}


def covariant_derivatives(M: ManifoldModel, f, x, order: int, axis: int | None = None):
    """[f, grad f, ..., nabla^order f] at x; chart-component tensors.

    f takes an ambient point array.  Curvature enters through the
    Christoffel corrections at every nesting level.
    """
    v = check_point(M, x)
    if axis is None:
        axis = chart_axis(M, v)
    n = M.dim

    if M.kind is ManifoldKind.SPHERE:
        sign = 1.0 if v[axis] >= 0 else -1.0
    else:
        sign = 1.0

    def embed(u):
        return chart_embed(M, u, axis, sign)

    def tensor(u, r, h):
        if r == 0:
            return np.asarray(f(embed(u)), float)
        parts = np.empty((n,) + (n,) * (r - 1))
        for mu in range(n):
            du = np.zeros(n)
            du[mu] = h
            parts[mu] = (tensor(u + du, r - 1, h) - tensor(u - du, r - 1, h)) / (2 * h)
        if r == 1 or M.kind is ManifoldKind.FLAT:
            return parts
        gam = christoffels_from_chart(M, u)
        corr = np.zeros_like(parts)
        prev = tensor(u, r - 1, _CHAIN_STEP.get(r - 1, 2e-3))
        for slot in range(r - 1):
            # subtract Gamma^lam_{mu nu_slot} T_{nu_1 .. lam .. nu_{r-1}}
            t_moved = np.moveaxis(prev, slot, 0)
            c = np.einsum("lmn,l...->mn...", gam, t_moved)
            corr += np.moveaxis(c, 1, slot + 1)
        return parts - corr

    u0 = chart_coords(M, v, axis)
    return [tensor(u0, r, _CHAIN_STEP.get(r, 2e-3)) for r in range(order + 1)], axis


def tensor_norm(M: ManifoldModel, x, T, axis: int | None = None) -> float:
    """Norm of a covariant tensor by inverse-metric contractions."""
    T = np.asarray(T, float)
    if T.ndim == 0:
        return abs(float(T))
    ginv = inverse_metric_at(M, x) if axis is None else _inverse_metric_axis(M, x, axis)
    out = T
    for _ in range(T.ndim):
        out = np.tensordot(out, ginv, axes=([0], [0]))
    return math.sqrt(abs(float(np.sum(out * T))))


def _inverse_metric_axis(M, x, axis):
    u = chart_coords(M, check_point(M, x), axis)
    return np.linalg.inv(metric_from_chart(M, u))


GAUSS_NODES = 33


def covariant_taylor(M: ManifoldModel, f, x0, x, order: int):
    """Expansion of f at x around x0 in powers of sigma, with the exact
    integral remainder and its a-priori bound.

    Returns (expansion_value, remainder_value, remainder_bound).  The
    identity expansion + remainder = f(x) holds up to finite-difference and
    quadrature error; |remainder| <= bound up to the same error.
    """
    if order < 0 or order > 3:
        raise DomainError("order must be 0..3")
    seg = GeodesicSegment.between(M, x0, x)
    d = seg.length
    mid = seg.point(0.5)
    axis = chart_axis(M, mid)

    tensors, _ = covariant_derivatives(M, f, seg.x0, order, axis=axis)
    sig = sigma(M, x, np.asarray(seg.x0), axis=axis)

    total = float(tensors[0])
    for r in range(1, order + 1):
        contou = tensors[r]
        for _ in range(r):
            contou = np.tensordot(contou, sig, axes=([0], [0]))
        total += ((-1.0) ** r / math.factorial(r)) * float(contou)

    # remainder: integral over the segment of the rank order+1 tensor
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_NODES)
    rho = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    rem = 0.0
    sup = 0.0
    r1 = order + 1
    for rho_i, w_i in zip(rho, w):
        p = seg.point(float(rho_i))
        vel_chart = chart_components(M, p, seg.velocity(float(rho_i)), axis)
        tens, _ = covariant_derivatives(M, f, p, r1, axis=axis)
        T = tens[r1]
        sup = max(sup, tensor_norm(M, p, T, axis=axis))
        cont = T
        for _ in range(r1):
            cont = np.tensordot(cont, vel_chart, axes=([0], [0]))
        rem += w_i * ((1.0 - rho_i) ** order / math.factorial(order)) * float(cont)

    bound = d**r1 / math.factorial(r1) * sup
    return total, rem, bound


def laplace_beltrami(M: ManifoldModel, f, x) -> float:
    """Divergence-form Laplacian by nested central differences in the chart."""
    v = check_point(M, x)
    axis = chart_axis(M, v)
    if M.kind is ManifoldKind.SPHERE:
        sign = 1.0 if v[axis] >= 0 else -1.0
    else:
        sign = 1.0
    n = M.dim
    h = 1e-4

    def embed(u):
        return chart_embed(M, u, axis, sign)

    def flux(u):
        # F^mu = sqrt|g| g^{mu nu} d_nu f
        g = metric_from_chart(M, u)
        ginv = np.linalg.inv(g)
        sq = math.sqrt(np.linalg.det(g))
        grad = np.empty(n)
        for nu in range(n):
            du = np.zeros(n)
            du[nu] = h
            grad[nu] = (f(embed(u + du)) - f(embed(u - du))) / (2 * h)
        return sq * ginv @ grad

    u0 = chart_coords(M, v, axis)
    g0 = metric_from_chart(M, u0)
    div = 0.0
    for mu in range(n):
        du = np.zeros(n)
        du[mu] = h
        div += (flux(u0 + du)[mu] - flux(u0 - du)[mu]) / (2 * h)
    return div / math.sqrt(np.linalg.det(g0))


# ------------------------------------------------------------ volume, balls

def unit_sphere_area(n: int) -> float:
    """Area of the unit S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / _gamma(n / 2.0)


def radial_profile(M: ManifoldModel, r):
    """Metric growth factor S(r): r, sin(cr)/c, sinh(cr)/c."""
    r = np.asarray(r, float)
    if M.kind is ManifoldKind.FLAT:
        return r
    c = M.curvature_param
    if M.kind is ManifoldKind.SPHERE:
        return np.sin(c * r) / c
    return np.sinh(c * r) / c


def ball_volume(M: ManifoldModel, x, r: float) -> float:
    """Volume of the geodesic ball B(x, r); closed antiderivatives per model."""
    check_point(M, x)
    if r < 0:
        raise DomainError("radius must be nonnegative")
    n = M.dim
    if M.kind is ManifoldKind.SPHERE and M.curvature_param * r >= math.pi:
        raise DomainError("radius reaches past the injectivity bound")
    if M.kind is ManifoldKind.FLAT:
        return unit_sphere_area(n) * r**n / n
    c = M.curvature_param
    a = c * r
    if M.kind is ManifoldKind.SPHERE:
        if n == 2:
            val = (1.0 - math.cos(a)) / c**2
        elif n == 3:
            val = r / (2 * c**2) - math.sin(2 * a) / (4 * c**3)
        else:
            val = (2.0 / 3.0 - math.cos(a) + math.cos(a) ** 3 / 3.0) / c**4
    else:
        if n == 2:
            val = (math.cosh(a) - 1.0) / c**2
        elif n == 3:
            val = math.sinh(2 * a) / (4 * c**3) - r / (2 * c**2)
        else:
            val = (math.cosh(a) ** 3 / 3.0 - math.cosh(a) + 2.0 / 3.0) / c**4
    return unit_sphere_area(n) * val


# below the switch the closed forms cancel ~8 digits; the quartic+sextic
# series is then the more accurate branch
_COMPARISON_SWITCH = 0.1


def comparison_h4(r: float) -> float:
    """(cosh 3r - 9 cosh r + 8) / (3 r^4); equals 1 at r = 0."""
    if abs(r) < _COMPARISON_SWITCH:
        r2 = r * r
        return 1.0 + r2 / 3.0 + r2 * r2 * (6552.0 / 120960.0 + r2 * (59040.0 / 10886400.0))
    return (math.cosh(3 * r) - 9 * math.cosh(r) + 8.0) / (3.0 * r**4)


def comparison_s4(r: float) -> float:
    """(cos 3r - 9 cos r + 8) / (3 r^4) for r < pi; equals 1 at r = 0."""
    if abs(r) >= math.pi:
        raise DomainError("comparison function needs r < pi")
    if abs(r) < _COMPARISON_SWITCH:
        r2 = r * r
        return 1.0 - r2 / 3.0 + r2 * r2 * (6552.0 / 120960.0 - r2 * (59040.0 / 10886400.0))
    return (math.cos(3 * r) - 9 * math.cos(r) + 8.0) / (3.0 * r**4)
