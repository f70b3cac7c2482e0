"""Heat kernels on the model manifolds, their verification, and bounds.

Evaluation routes:
  flat      exact Gaussian
  H^3       exact closed form
  H^2       one integral over the stable u-substitution
  H^4       descent from H^2 (one integral, strictly positive integrand)
  S^n       spectral Gegenbauer sum, switching to the short-time
            Gaussian-type form where the sum would cancel catastrophically

All model kernels are radial; eval_K reduces point pairs to distances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import geometry as G
from .geometry import DomainError, ManifoldKind, ManifoldModel
from .records import FAIL, INCONCLUSIVE, PASS, VerificationRecord, digest_inputs


class KernelEvalError(ValueError):
    pass


SPECTRAL_CAP = 4000
# the Gegenbauer sum cancels down from coincidence scale, so its noise floor
# is ~1e-16 e^{theta^2/4t} relative to the target; route an evaluation to the
# spectral sum only while that stays below this budget
SPECTRAL_T_MIN = 1e-3
SPECTRAL_NOISE_BUDGET = 1e-3


def heat_kernel_bound_constant(delta: float) -> float:
    """b(delta) = 2 (1 + 3 delta) / (1 - 3 delta), needs 3 delta < 1."""
    if not 0 < delta < 1.0 / 3.0:
        raise DomainError("delta must lie in (0, 1/3)")
    return 2.0 * (1.0 + 3.0 * delta) / (1.0 - 3.0 * delta)


# ------------------------------------------------------------ flat kernel

def _flat_kernel(n: int, t: float, d):
    d = np.asarray(d, float)
    return (4.0 * math.pi * t) ** (-n / 2.0) * np.exp(-(d * d) / (4.0 * t))


# ------------------------------------------------------- hyperbolic kernels

def _h2_u_cutoff(t: float, rho: float):
    """Upper u-limit where e^{-sigma^2/4t} has dropped e^{-40} below its
    peak at u = 0; None if the peak itself has underflowed."""
    if rho * rho / (4.0 * t) > 700.0:
        return None
    sig_eff = math.sqrt(rho * rho + 160.0 * t)
    return math.sqrt(math.cosh(sig_eff) - math.cosh(rho))


def _h2_unit_scalar(t: float, rho: float) -> float:
    # K = pref(t) * int_0^inf (sigma/sinh sigma) e^{-sigma^2/4t} du,
    # cosh sigma = cosh rho + u^2, evaluated through x = cosh sigma - 1
    base = 2.0 * math.sinh(rho / 2.0) ** 2

    def integrand(u):
        x = base + u * u
        sh = math.sqrt(x * (x + 2.0))  # sinh sigma
        sigma = math.asinh(sh)
        ratio = 1.0 if sh < 1e-12 else sigma / sh
        return ratio * math.exp(-sigma * sigma / (4.0 * t))

    u_max = _h2_u_cutoff(t, rho)
    if u_max is None:
        return 0.0
    val, _ = quad(integrand, 0.0, u_max, epsabs=1e-300, epsrel=1e-10, limit=200)
    pref = 2.0 * math.sqrt(2.0) * math.exp(-t / 4.0) / (4.0 * math.pi * t) ** 1.5
    return pref * val


def _h4_unit_scalar(t: float, rho: float) -> float:
    # descent: K_4 = -(e^{-2t}/2pi) (1/sinh rho) d_rho K_2, with the radial
    # derivative taken inside the u-integral; sinh rho cancels exactly
    base = 2.0 * math.sinh(rho / 2.0) ** 2

    def integrand(u):
        x = base + u * u
        sh = math.sqrt(x * (x + 2.0))  # sinh sigma
        sigma = math.asinh(sh)
        if sigma < 1e-3:
            t1 = -sigma / 3.0 + 7.0 * sigma**3 / 90.0
        else:
            t1 = (math.sinh(sigma) - sigma * math.cosh(sigma)) / (sh * sh)
        gp = t1 - sigma * sigma / (2.0 * t * sh) if sh > 0 else -sigma / (2.0 * t)
        if sh < 1e-12:
            # limit of g'(sigma)/sinh sigma at sigma -> 0
            return -math.exp(-sigma * sigma / (4.0 * t)) * (1.0 / 3.0 + 1.0 / (2.0 * t))
        return math.exp(-sigma * sigma / (4.0 * t)) * gp / sh

    u_max = _h2_u_cutoff(t, rho)
    if u_max is None:
        return 0.0
    val, _ = quad(integrand, 0.0, u_max, epsabs=1e-300, epsrel=1e-10, limit=200)
    pref = 2.0 * math.sqrt(2.0) * math.exp(-t / 4.0) / (4.0 * math.pi * t) ** 1.5
    return -math.exp(-2.0 * t) / (2.0 * math.pi) * pref * val


# --------------------------------------------------------- sphere kernels

def _gegenbauer_alpha(n: int) -> float:
    return (n - 1) / 2.0


def _gegenbauer_at_one(l: int, alpha: float) -> float:
    # C_l^alpha(1) = binom(l + 2 alpha - 1, l)
    from scipy.special import gammaln

    return math.exp(gammaln(l + 2 * alpha) - gammaln(l + 1) - gammaln(2 * alpha))


def _sphere_spectral(n: int, t, theta, cap: int = SPECTRAL_CAP):
    """Unit-sphere kernel by the Gegenbauer sum; theta may be an array."""
    theta = np.asarray(theta, float)
    x = np.cos(theta)
    alpha = _gegenbauer_alpha(n)
    pref = math.gamma((n + 1) / 2.0) / (2.0 * math.pi ** ((n + 1) / 2.0)) / (n - 1)
    c_prev = np.ones_like(x)  # C_0
    c_curr = 2.0 * alpha * x  # C_1
    total = pref * (n - 1) * c_prev  # l = 0 term: (2*0+n-1) C_0 = (n-1)
    running_scale = float(np.max(np.abs(total)))
    for l in range(1, cap + 1):
        if l >= 2:
            c_next = (2.0 * (l - 1 + alpha) * x * c_curr - (l + 2 * alpha - 2) * c_prev) / l
            c_prev, c_curr = c_curr, c_next
        term = pref * math.exp(-l * (l + n - 1) * t) * (2 * l + n - 1) * c_curr
        total = total + term
        bound = pref * math.exp(-l * (l + n - 1) * t) * (2 * l + n - 1) * _gegenbauer_at_one(l, alpha)
        running_scale = max(running_scale, float(np.max(np.abs(total))))
        if bound < 1e-15 * max(running_scale, 1e-300):
            return total, bound
    raise KernelEvalError(f"spectral sum hit the {cap}-term cap with residual {bound:.2e}")


def _sphere_gaussian_regime(n: int, t, theta):
    """Short-time form (4 pi t)^{-n/2} (theta/sin theta)^{(n-1)/2}
    exp(-theta^2/4t + R t/6) with R = n(n-1) on the unit sphere."""
    theta = np.asarray(theta, float)
    expo = -(theta * theta) / (4.0 * t) + n * (n - 1) * t / 6.0
    guard = theta < math.pi - 1e-3
    safe = np.where(guard, theta, 0.0)
    ratio = np.where(safe < 1e-8, 1.0, safe / np.sin(np.where(safe < 1e-8, 1.0, safe)))
    vv = (4.0 * math.pi * t) ** (-n / 2.0) * ratio ** ((n - 1) / 2.0) * np.exp(expo)
    # past the guard angle the value has underflowed anyway
    out = np.where(guard | (expo < -700.0), np.where(guard, vv, 0.0), np.nan)
    if np.any(np.isnan(out)):
        raise KernelEvalError("short-time form invalid this close to the cut locus")
    return out


def _spectral_noise_rel(n: int, t, theta):
    """Cancellation noise of the spectral sum relative to the kernel size,
    with the focusing enhancement toward the far pole estimated and capped."""
    theta = np.asarray(theta, float)
    safe = np.where(theta > 1e-8, theta, 1e-8)
    enh = np.where(
        theta < math.pi - 1e-8, safe / np.abs(np.sin(np.minimum(safe, math.pi - 1e-8))), np.inf
    ) ** ((n - 1) / 2.0)
    enh = np.minimum(enh, (math.pi**2 / (4.0 * t)) ** ((n - 1) / 2.0))
    log_noise = math.log(1e-16) + theta * theta / (4.0 * t) - np.log(enh)
    return np.exp(np.minimum(log_noise, 700.0))


def _sphere_unit(n: int, t, theta):
    theta = np.atleast_1d(np.asarray(theta, float))
    out = np.empty_like(theta)
    use_spectral = (t >= SPECTRAL_T_MIN) & (
        _spectral_noise_rel(n, t, theta) <= SPECTRAL_NOISE_BUDGET
    )
    if np.any(use_spectral):
        vals, _ = _sphere_spectral(n, t, theta[use_spectral])
        out[use_spectral] = np.maximum(vals, 0.0)
    if np.any(~use_spectral):
        out[~use_spectral] = _sphere_gaussian_regime(n, t, theta[~use_spectral])
    return out


def sphere_coincidence_series(n: int, t: float, cap: int = SPECTRAL_CAP) -> float:
    """K(t, x, x) on the unit sphere by the spectral sum at theta = 0."""
    alpha = _gegenbauer_alpha(n)
    pref = math.gamma((n + 1) / 2.0) / (2.0 * math.pi ** ((n + 1) / 2.0)) / (n - 1)
    total = 0.0
    for l in range(cap + 1):
        term = pref * math.exp(-l * (l + n - 1) * t) * (2 * l + n - 1) * _gegenbauer_at_one(l, alpha)
        total += term
        if l > 0 and term < 1e-16 * total:
            return total
    raise KernelEvalError(f"coincidence series hit the {cap}-term cap")


# ----------------------------------------------------------- public kernel

def kernel_radial(M: ManifoldModel, t: float, d):
    """K(t, d) for geodesic separation d.

    d may be any array; the result matches its shape. A scalar d gives a float.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    d_arr = np.asarray(d, float)
    if np.any(d_arr < 0):
        raise DomainError("distance must be nonnegative")
    dd = np.atleast_1d(d_arr).ravel()
    n = M.dim
    c = M.curvature_param
    if M.kind is ManifoldKind.FLAT:
        vals = _flat_kernel(n, t, dd)
    elif M.kind is ManifoldKind.SPHERE:
        if np.any(c * dd > math.pi * (1 + 1e-12)):
            raise DomainError("separation exceeds the sphere diameter")
        theta = np.minimum(c * dd, math.pi)
        vals = c**n * _sphere_unit(n, c * c * t, theta)
    elif n == 3:
        rho = c * dd
        ratio = np.where(rho < 1e-8, 1.0, rho / np.sinh(np.maximum(rho, 1e-300)))
        vals = (4.0 * math.pi * t) ** -1.5 * ratio * np.exp(-c * c * t - dd * dd / (4.0 * t))
    else:
        fn = _h2_unit_scalar if n == 2 else _h4_unit_scalar
        ts = c * c * t
        vals = c**n * np.array([fn(ts, float(c * r)) for r in dd])
    if d_arr.ndim == 0:
        return float(vals[0])
    return vals.reshape(d_arr.shape)


def kernel_coincidence(M: ManifoldModel, t: float) -> float:
    """K(t, x, x); spatially constant on the model spaces."""
    if M.kind is ManifoldKind.SPHERE:
        ts = M.curvature_param**2 * t
        if ts >= 3e-6:
            return M.curvature_param**M.dim * sphere_coincidence_series(M.dim, ts)
        n = M.dim
        return (4.0 * math.pi * t) ** (-n / 2.0) * math.exp(M.scalar_curvature * t / 6.0)
    return float(np.atleast_1d(kernel_radial(M, t, 0.0))[0])


def eval_K(M: ManifoldModel, t: float, x, y) -> float:
    d = float(G.distance(M, x, y))
    return float(np.atleast_1d(kernel_radial(M, t, d))[0])


# ------------------------------------------------------------- propagators

def propagator_radial(M: ManifoldModel, m2: float, eps: float, t: float, d,
                      rel_tol: float | None = None):
    """C^{eps,t}(d) = int_eps^t e^{-m2 s} K(s, d) ds."""
    if not 0 < eps <= t:
        raise DomainError("need 0 < eps <= t")
    if rel_tol is None:
        rel_tol = 1e-8 if M.kind is ManifoldKind.FLAT else 1e-5
    d_arr = np.atleast_1d(np.asarray(d, float))
    out = np.empty_like(d_arr)
    for i, di in enumerate(d_arr):
        out[i], _ = quad(
            lambda s: math.exp(-m2 * s) * float(np.atleast_1d(kernel_radial(M, s, di))[0]),
            eps, t, epsabs=1e-300, epsrel=rel_tol, limit=300,
        )
    return out if np.ndim(d) else float(out[0])


def propagator(M, m2, eps, t, x, y, rel_tol=None):
    return propagator_radial(M, m2, eps, t, float(G.distance(M, x, y)), rel_tol)


def propagator_deriv_radial(M: ManifoldModel, m2: float, t: float, d):
    """d/dt of the propagator: e^{-m2 t} K(t, d)."""
    return math.exp(-m2 * t) * kernel_radial(M, t, d)


def tadpole(M: ManifoldModel, m2: float, t: float) -> float:
    """Coincidence propagator derivative e^{-m2 t} K(t, x, x)."""
    return math.exp(-m2 * t) * kernel_coincidence(M, t)


# ----------------------------------------------------- completeness checks

def _radial_cutoff(M: ManifoldModel, t: float) -> float:
    if M.kind is ManifoldKind.SPHERE:
        return math.pi / M.curvature_param
    drift = 2.0 * (M.dim - 1) * M.curvature_param * t if M.kind is ManifoldKind.HYPERBOLIC else 0.0
    return drift + 30.0 * math.sqrt(t)


def verify_completeness(M: ManifoldModel, t: float, method: str = "quad",
                        n_samples: int = 20000, rng=None,
                        err_request: float = 1e-3) -> VerificationRecord:
    """Check that the kernel integrates to one over the whole space."""
    name = "completeness"
    digest = digest_inputs({"model": str(M), "t": t, "method": method})
    r_max = _radial_cutoff(M, t)
    omega = G.unit_sphere_area(M.dim)

    def density(r):
        prof = float(G.radial_profile(M, r))
        return omega * prof ** (M.dim - 1) * float(np.atleast_1d(kernel_radial(M, t, r))[0])

    if method == "quad":
        est, err = quad(density, 0.0, r_max, epsabs=1e-12, epsrel=1e-10, limit=300)
        status = PASS if (abs(est - 1.0) < max(3.0 * err, 1e-12) + err_request and err < err_request) else FAIL
        return VerificationRecord(name, digest, est, 1.0, est, {"quad_err": err}, status, err)
    if method != "mc":
        raise DomainError(f"unknown method {method!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    sampler = KernelSampler(M, t)
    r, q_radial = sampler.sample_radii(rng, n_samples)
    w = np.array([density(ri) for ri in r]) / q_radial
    est = float(np.mean(w))
    err = float(np.std(w, ddof=1) / math.sqrt(n_samples))
    if err > err_request:
        status = INCONCLUSIVE
    else:
        status = PASS if abs(est - 1.0) < 3.0 * err + 1e-12 else FAIL
    return VerificationRecord(name, digest, est, 1.0, est, {"mc_err": err}, status, err)


def _rotated_distance(M: ManifoldModel, r, D: float, cos_alpha):
    """d(z, y) for z at distance r from x and angle alpha from the x -> y
    direction, with D = d(x, y): the model law of cosines."""
    r = np.asarray(r, float)
    if M.kind is ManifoldKind.FLAT:
        return np.sqrt(np.maximum(r * r + D * D - 2.0 * r * D * cos_alpha, 0.0))
    c = M.curvature_param
    if M.kind is ManifoldKind.SPHERE:
        cosd = np.cos(c * r) * math.cos(c * D) + np.sin(c * r) * math.sin(c * D) * cos_alpha
        return np.arccos(np.clip(cosd, -1.0, 1.0)) / c
    coshd = np.cosh(c * r) * math.cosh(c * D) - np.sinh(c * r) * math.sinh(c * D) * cos_alpha
    return np.arccosh(np.maximum(coshd, 1.0)) / c


def verify_semigroup(M: ManifoldModel, t1: float, t2: float, d: float,
                     n_alpha: int = 48) -> VerificationRecord:
    """Check int K(t1, x, z) K(t2, z, y) dz = K(t1 + t2, x, y) at separation d."""
    digest = digest_inputs({"model": str(M), "t1": t1, "t2": t2, "d": d})
    target = float(np.atleast_1d(kernel_radial(M, t1 + t2, d))[0])
    n = M.dim
    omega_ang = 2.0 if n == 2 else G.unit_sphere_area(n - 1)
    nodes, weights = np.polynomial.legendre.leggauss(n_alpha)
    alpha = 0.5 * math.pi * (nodes + 1.0)
    w_alpha = 0.5 * math.pi * weights
    ang_meas = np.sin(alpha) ** (n - 2) if n > 2 else np.ones_like(alpha)
    if M.kind is ManifoldKind.SPHERE:
        r_max = math.pi / M.curvature_param
    else:
        r_max = _radial_cutoff(M, max(t1, t2)) + d

    def shell(r):
        k1 = float(np.atleast_1d(kernel_radial(M, t1, r))[0])
        if k1 == 0.0:
            return 0.0
        dz = _rotated_distance(M, r, d, np.cos(alpha))
        k2 = np.atleast_1d(kernel_radial(M, t2, dz))
        prof = float(G.radial_profile(M, r))
        return omega_ang * prof ** (n - 1) * k1 * float(np.sum(w_alpha * ang_meas * k2))

    peak = d * t1 / (t1 + t2)
    est, err = quad(shell, 0.0, r_max, epsabs=1e-300, epsrel=1e-8, limit=300,
                    points=[peak] if 0.0 < peak < r_max else None)
    rel = abs(est - target) / target
    status = PASS if (abs(est - target) < max(3.0 * err, 1e-3 * target)) and err < 1e-3 * target else FAIL
    return VerificationRecord("semigroup", digest, est, target, est / target,
                              {"quad_err": err, "rel_defect": rel}, status, err)


# ------------------------------------------------------------ kernel sampler

@dataclass
class KernelSampler:
    """Draws y ~ K(theta, x, .) by radial inverse-CDF plus a uniform direction.

    The discretized radial density is kept exactly (piecewise constant), so
    importance weights against it are unbiased regardless of grid error.
    """

    M: ManifoldModel
    theta: float
    n_grid: int = 2048

    def __post_init__(self):
        M, theta = self.M, self.theta
        r_max = _radial_cutoff(M, theta)
        edges = np.linspace(0.0, r_max, self.n_grid + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        prof = np.asarray(G.radial_profile(M, mid), float)
        dens = np.atleast_1d(kernel_radial(M, theta, mid)) * prof ** (M.dim - 1)
        dens = np.maximum(dens, 0.0)
        mass = dens * np.diff(edges)
        total = float(np.sum(mass))
        if total <= 0:
            raise KernelEvalError("sampler grid has no mass")
        self._edges = edges
        self._pdf = dens / total  # radial density per unit r, up to omega
        self._cdf = np.concatenate([[0.0], np.cumsum(mass) / total])

    def sample_radii(self, rng, n: int):
        """Radii plus their exact (discretized, normalized) radial density
        including the angular factor omega S(r)^{n-1}."""
        u = rng.random(n)
        idx = np.searchsorted(self._cdf, u, side="right") - 1
        idx = np.clip(idx, 0, self.n_grid - 1)
        left, right = self._edges[idx], self._edges[idx + 1]
        frac = (u - self._cdf[idx]) / np.maximum(self._cdf[idx + 1] - self._cdf[idx], 1e-300)
        r = left + frac * (right - left)
        return r, self._pdf[idx]

    def sample_points(self, x, rng, n: int):
        """Points y plus the exact sampling density w.r.t. the volume measure."""
        r, q_radial = self.sample_radii(rng, n)
        dirs = G.random_tangent(self.M, x, rng, size=n)
        prof = np.asarray(G.radial_profile(self.M, r), float)
        area = G.unit_sphere_area(self.M.dim) * prof ** (self.M.dim - 1)
        pts = np.stack([np.asarray(G.exp_map(self.M, x, dirs[i], float(r[i])), float)
                        for i in range(n)])
        return pts, q_radial / np.maximum(area, 1e-300)


# --------------------------------------------------------- bound certificates

def default_d_grid(M: ManifoldModel, t_max: float, n_pts: int = 12) -> np.ndarray:
    top = 5.0 * math.sqrt(t_max)
    if M.kind is ManifoldKind.SPHERE:
        top = min(top, math.pi / M.curvature_param - 0.05)
    return np.linspace(0.0, top, n_pts)


def _bound_rows(M, name, t_grid, d_grid, lhs_fn, rhs_fn):
    rows = []
    for t in t_grid:
        lhs = np.atleast_1d(lhs_fn(t, d_grid))
        rhs = np.atleast_1d(rhs_fn(t, d_grid))
        for i, dd in enumerate(d_grid):
            if rhs[i] <= 0 or not np.isfinite(rhs[i]) or not np.isfinite(lhs[i]):
                raise KernelEvalError(f"{name}: comparator degenerate at t={t}, d={dd}")
            rows.append({"manifold": str(M), "bound": name, "t": float(t), "d": float(dd),
                         "lhs": float(lhs[i]), "rhs": float(rhs[i]),
                         "ratio": float(lhs[i] / rhs[i])})
    return rows


def certify_two_sided(M: ManifoldModel, t_grid, d_grid, delta: float = 0.1) -> dict:
    """Fit c, C with c t^{-n/2} e^{-d^2/(4t(1-delta))} <= K <= C t^{-n/2} e^{-d^2/(4t(1+delta))}."""
    if not 0 < delta < 1:
        raise DomainError("delta in (0,1) required")
    n = M.dim

    def comp(t, d, sgn):
        d = np.asarray(d, float)
        return t ** (-n / 2.0) * np.exp(-(d * d) / (4.0 * t * (1.0 + sgn * delta)))

    rows_up = _bound_rows(M, "upper_envelope", t_grid, d_grid,
                          lambda t, d: kernel_radial(M, t, d), lambda t, d: comp(t, d, +1.0))
    rows_lo = _bound_rows(M, "lower_envelope", t_grid, d_grid,
                          lambda t, d: kernel_radial(M, t, d), lambda t, d: comp(t, d, -1.0))
    C = max(r["ratio"] for r in rows_up)
    c = min(r["ratio"] for r in rows_lo)
    ok = np.isfinite(C) and np.isfinite(c) and c > 0
    return {"c": c, "C": C, "rows": rows_up + rows_lo, "status": PASS if ok else FAIL,
            "delta": delta}


def certify_distance_moment(M: ManifoldModel, s: int, t_grid, d_grid,
                            delta_prime: float = 0.25) -> dict:
    """Fit c' with d^s K(t, d) <= c' t^{s/2} K(t (1 + delta'), d)."""
    if s not in (1, 2, 3):
        raise DomainError("moment order s must be 1, 2, or 3")
    if delta_prime <= 0:
        raise DomainError("delta_prime must be positive")
    rows = _bound_rows(
        M, f"distance_moment_{s}", t_grid, d_grid,
        lambda t, d: np.asarray(d, float) ** s * np.atleast_1d(kernel_radial(M, t, d)),
        lambda t, d: t ** (s / 2.0) * np.atleast_1d(kernel_radial(M, t * (1.0 + delta_prime), d)),
    )
    cp = max(r["ratio"] for r in rows)
    return {"c_prime": cp, "rows": rows, "status": PASS if np.isfinite(cp) else FAIL,
            "delta_prime": delta_prime, "s": s}


def _radial_derivative(M, t, d_grid, h_rel=1e-5):
    d_grid = np.asarray(d_grid, float)
    h = h_rel * max(math.sqrt(t), float(np.max(d_grid)) if d_grid.size else 1.0)
    lo = np.maximum(d_grid - h, 0.0)
    hi = d_grid + h
    if M.kind is ManifoldKind.SPHERE:
        hi = np.minimum(hi, math.pi / M.curvature_param)
    k_hi = np.atleast_1d(kernel_radial(M, t, hi))
    k_lo = np.atleast_1d(kernel_radial(M, t, lo))
    return (k_hi - k_lo) / (hi - lo)


def certify_gradient_bound(M: ManifoldModel, t_grid, d_grid, delta: float = 0.1) -> dict:
    """Fit C with |grad K|(t, d) <= C t^{-1/2} K(t (1 + delta), d)."""
    rows = _bound_rows(
        M, "gradient", t_grid, d_grid,
        lambda t, d: np.abs(_radial_derivative(M, t, d)),
        lambda t, d: t**-0.5 * np.atleast_1d(kernel_radial(M, t * (1.0 + delta), d)),
    )
    C = max(r["ratio"] for r in rows)
    return {"C_grad": C, "rows": rows, "status": PASS if np.isfinite(C) else FAIL, "delta": delta}


def certify_time_derivative_bound(M: ManifoldModel, t_grid, d_grid, delta: float = 0.1) -> dict:
    """Fit C with |d_t K|(t, d) <= C t^{-1} K(t (1 + delta), d)."""

    def dt_K(t, d):
        h = 1e-4 * t
        up = np.atleast_1d(kernel_radial(M, t + h, d))
        dn = np.atleast_1d(kernel_radial(M, t - h, d))
        return np.abs(up - dn) / (2.0 * h)

    rows = _bound_rows(
        M, "time_derivative", t_grid, d_grid,
        dt_K,
        lambda t, d: (1.0 / t) * np.atleast_1d(kernel_radial(M, t * (1.0 + delta), d)),
    )
    C = max(r["ratio"] for r in rows)
    return {"C_time": C, "rows": rows, "status": PASS if np.isfinite(C) else FAIL, "delta": delta}


def certify_log_gradient_bound(M: ManifoldModel, t_grid, d_grid) -> dict:
    """Fit C with |grad K| / K <= C t^{-1/2} (1 + d^2/t)."""

    def log_grad(t, d):
        k = np.atleast_1d(kernel_radial(M, t, d))
        return np.abs(_radial_derivative(M, t, d)) / np.maximum(k, 1e-300)

    rows = _bound_rows(
        M, "log_gradient", t_grid, d_grid,
        log_grad,
        lambda t, d: t**-0.5 * (1.0 + np.asarray(d, float) ** 2 / t),
    )
    C = max(r["ratio"] for r in rows)
    return {"C_log": C, "rows": rows, "status": PASS if np.isfinite(C) else FAIL}


def stability_under_refinement(fit_fn, coarse_args, fine_args, keys, tol: float = 0.1) -> dict:
    """Compare fitted constants between a grid and its refinement."""
    a = fit_fn(*coarse_args)
    b = fit_fn(*fine_args)
    drift = {k: abs(a[k] - b[k]) / max(abs(a[k]), abs(b[k]), 1e-300) for k in keys}
    ok = all(v <= tol for v in drift.values())
    return {"coarse": a, "fine": b, "drift": drift, "status": PASS if ok else FAIL}
