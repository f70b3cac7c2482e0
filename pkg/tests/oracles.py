"""Independent recomputation routes used as test oracles.

Everything here is deliberately written from scratch against the embedding
definitions of the model spaces, not by calling back into the package code
paths under test: metrics come from finite differences of an explicit
embedding map, geodesics from an ODE integrator, distances from path-length
quadrature, curvature from the coordinate formula applied to FD metrics.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import quad, solve_ivp


# --------------------------------------------------------- embedding charts

def embedding_map(kind: str, dim: int, c: float, axis: int, sign: float):
    """Chart coords u (dim,) -> ambient point for the graph chart."""

    if kind == "flat":
        return lambda u: np.asarray(u, float)
    if kind == "sphere":
        r2 = 1.0 / c**2

        def emb(u):
            u = np.asarray(u, float)
            return np.insert(u, axis, sign * math.sqrt(r2 - float(u @ u)))

        return emb
    r2 = 1.0 / c**2

    def emb(u):
        u = np.asarray(u, float)
        return np.append(u, math.sqrt(r2 + float(u @ u)))

    return emb


def ambient_dot(kind: str):
    if kind == "hyperbolic":
        return lambda a, b: float(np.dot(a[:-1], b[:-1]) - a[-1] * b[-1])
    return lambda a, b: float(np.dot(a, b))


def metric_fd(kind: str, dim: int, c: float, axis: int, sign: float, u, h: float = 1e-6):
    """g_ij(u) = <d_i X, d_j X> with FD Jacobian of the embedding."""
    emb = embedding_map(kind, dim, c, axis, sign)
    dot = ambient_dot(kind)
    u = np.asarray(u, float)
    J = []
    for i in range(dim):
        du = np.zeros(dim)
        du[i] = h
        J.append((emb(u + du) - emb(u - du)) / (2 * h))
    g = np.empty((dim, dim))
    for i in range(dim):
        for j in range(dim):
            g[i, j] = dot(J[i], J[j])
    return g


def christoffels_fd(kind: str, dim: int, c: float, axis: int, sign: float, u, h: float = 3e-4):
    """Gamma^k_ij = (1/2) g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)."""
    u = np.asarray(u, float)

    def g_at(v):
        return metric_fd(kind, dim, c, axis, sign, v)

    dg = np.empty((dim, dim, dim))  # dg[l, i, j] = d_l g_ij
    for l in range(dim):
        du = np.zeros(dim)
        du[l] = h
        dg[l] = (g_at(u + du) - g_at(u - du)) / (2 * h)
    ginv = np.linalg.inv(g_at(u))
    gam = np.empty((dim, dim, dim))
    for k in range(dim):
        for i in range(dim):
            for j in range(dim):
                s = 0.0
                for l in range(dim):
                    s += ginv[k, l] * (dg[i, l, j] + dg[j, l, i] - dg[l, i, j])
                gam[k, i, j] = 0.5 * s
    return gam


def scalar_curvature_fd(kind: str, dim: int, c: float, axis: int, sign: float, u, h: float = 3e-3):
    """R = g^{ij} Ric_ij with Ric from FD of the Christoffel field.

    Convention fixed so that the unit two-sphere gives +2.
    """
    u = np.asarray(u, float)

    def gam_at(v):
        return christoffels_fd(kind, dim, c, axis, sign, v)

    dgam = np.empty((dim, dim, dim, dim))  # dgam[m, k, i, j] = d_m Gamma^k_ij
    for m in range(dim):
        du = np.zeros(dim)
        du[m] = h
        dgam[m] = (gam_at(u + du) - gam_at(u - du)) / (2 * h)
    gam = gam_at(u)
    ric = np.empty((dim, dim))
    for i in range(dim):
        for j in range(dim):
            s = 0.0
            for k in range(dim):
                s += dgam[k, k, i, j] - dgam[i, k, k, j]
                for l in range(dim):
                    s += gam[k, k, l] * gam[l, i, j] - gam[k, i, l] * gam[l, k, j]
            ric[i, j] = s
    g = metric_fd(kind, dim, c, axis, sign, u)
    return float(np.trace(np.linalg.inv(g) @ ric))


def geodesic_shoot(kind: str, dim: int, c: float, axis: int, sign: float, u0, v0, length: float):
    """Integrate u'' + Gamma(u)(u', u') = 0 from (u0, v0) for unit time.

    v0 should have metric norm equal to `length`.  Returns the final chart
    point.  Christoffels come from the FD route above, so this checks the
    exponential map against nothing but the embedding.
    """

    def rhs(_, y):
        u, v = y[:dim], y[dim:]
        gam = christoffels_fd(kind, dim, c, axis, sign, u)
        acc = -np.einsum("kij,i,j->k", gam, v, v)
        return np.concatenate([v, acc])

    sol = solve_ivp(rhs, (0.0, 1.0), np.concatenate([u0, v0]), rtol=1e-10, atol=1e-12)
    assert sol.success
    return sol.y[:dim, -1]


def path_length(kind: str, dim: int, c: float, axis: int, sign: float, curve, n_nodes: int = 400):
    """Arc length of chart curve(rho), rho in [0,1], via the FD metric."""
    total = 0.0
    hs = 1.0 / n_nodes
    for i in range(n_nodes):
        rho = (i + 0.5) * hs
        h = 1e-6
        du = (np.asarray(curve(rho + h)) - np.asarray(curve(rho - h))) / (2 * h)
        g = metric_fd(kind, dim, c, axis, sign, curve(rho))
        total += math.sqrt(max(float(du @ g @ du), 0.0)) * hs
    return total


def ball_volume_quad(kind: str, dim: int, c: float, r: float):
    omega = 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)
    if kind == "flat":
        profile = lambda t: t
    elif kind == "sphere":
        profile = lambda t: math.sin(c * t) / c
    else:
        profile = lambda t: math.sinh(c * t) / c
    val, err = quad(lambda t: profile(t) ** (dim - 1), 0.0, r, epsabs=1e-14, epsrel=1e-13)
    return omega * val, omega * err


# --------------------------------------------------------------- heat kernels
#
# Each route below evaluates a model kernel through machinery the package does
# not use: the radial eigenfunction transform on H^3, the sigma-substitution
# integral on H^2, a finite-difference dimensional descent for H^4, classical
# orthogonal-polynomial series on the spheres, and closed covariance formulas
# on flat space.

def h3_plancherel(t: float, d: float) -> float:
    """Unit H^3 kernel via the radial transform: spherical function
    sin(lam d)/(lam sinh d), density lam^2/(2 pi^2), eigenvalue 1 + lam^2."""

    def integrand(lam):
        if d < 1e-12:
            phi = 1.0
        elif lam < 1e-12:
            phi = d / math.sinh(d)
        else:
            phi = math.sin(lam * d) / (lam * math.sinh(d))
        return math.exp(-(1.0 + lam * lam) * t) * phi * lam * lam / (2.0 * math.pi**2)

    lam_max = math.sqrt(45.0 / t)
    val, _ = quad(integrand, 0.0, lam_max, epsabs=1e-300, epsrel=1e-10, limit=400)
    return val


def h2_sigma_form(t: float, rho: float) -> float:
    """Unit H^2 kernel by the sigma-substitution integral
    sqrt(2) (4 pi t)^{-3/2} e^{-t/4} int_rho^inf sigma e^{-sigma^2/4t}
    (cosh sigma - cosh rho)^{-1/2} dsigma, desingularized by sigma = rho + w^2
    and the product form of the cosh difference."""

    def integrand(w):
        sig = rho + w * w
        if sig * sig / (4.0 * t) > 700.0:
            return 0.0
        den = 2.0 * math.sinh(0.5 * (sig + rho)) * math.sinh(0.5 * w * w)
        if den <= 0.0:
            return 0.0
        return 2.0 * w * sig * math.exp(-sig * sig / (4.0 * t)) / math.sqrt(den)

    w_max = math.sqrt(math.sqrt(rho * rho + 180.0 * t) - rho)
    val, _ = quad(integrand, 0.0, w_max, epsabs=1e-300, epsrel=1e-11, limit=400)
    return math.sqrt(2.0) * (4.0 * math.pi * t) ** -1.5 * math.exp(-t / 4.0) * val


def h4_descent_fd(t: float, rho: float, h: float = 2e-4) -> float:
    """Unit H^4 kernel from H^2 by dimensional descent,
    K_4 = -(e^{-2t} / (2 pi sinh rho)) d/drho K_2, with the radial derivative
    taken by Richardson-extrapolated central differences of the sigma form."""
    assert rho > 2 * h

    def der(hh):
        return (h2_sigma_form(t, rho + hh) - h2_sigma_form(t, rho - hh)) / (2.0 * hh)

    d1, d2 = der(h), der(0.5 * h)
    val = (4.0 * d2 - d1) / 3.0
    return -math.exp(-2.0 * t) / (2.0 * math.pi * math.sinh(rho)) * val


def s2_legendre_sum(t: float, theta: float, cap: int = 8000) -> float:
    """Unit S^2 kernel as the Legendre series (4 pi)^{-1} sum (2l+1) e^{-l(l+1)t} P_l."""
    from scipy.special import eval_legendre

    x = math.cos(theta)
    total = 0.0
    for l in range(cap):
        tail = (2 * l + 1) * math.exp(-l * (l + 1) * t)
        total += tail * eval_legendre(l, x)
        if l > 2 and tail < 1e-17 * abs(total):
            return total / (4.0 * math.pi)
    raise RuntimeError("series cap hit")


def s3_sin_sum(t: float, theta: float, cap: int = 8000) -> float:
    """Unit S^3 kernel: (2 pi^2)^{-1} sum_{m>=1} m e^{-(m^2-1)t} sin(m theta)/sin(theta)."""
    total = 0.0
    for m in range(1, cap):
        amp = m * math.exp(-(m * m - 1.0) * t)
        total += amp * (m if theta < 1e-12 else math.sin(m * theta) / math.sin(theta))
        if m > 2 and m * amp < 1e-17 * abs(total):
            return total / (2.0 * math.pi**2)
    raise RuntimeError("series cap hit")


def s4_gegenbauer_scipy(t: float, theta: float, cap: int = 8000) -> float:
    """Unit S^4 kernel summed with scipy's own Gegenbauer evaluator."""
    from scipy.special import eval_gegenbauer

    pref = math.gamma(2.5) / (2.0 * math.pi**2.5) / 3.0
    x = math.cos(theta)
    total = 0.0
    for l in range(cap):
        peak = math.exp(-l * (l + 3.0) * t) * (2 * l + 3) * (l + 1) * (l + 2) / 2.0
        total += pref * math.exp(-l * (l + 3.0) * t) * (2 * l + 3) * eval_gegenbauer(l, 1.5, x)
        if l > 2 and pref * peak < 1e-17 * abs(total):
            return total
    raise RuntimeError("series cap hit")


def s4_coincidence_sum(t: float, cap: int = 20000) -> float:
    """S^4 coincidence value: eigenspace dimensions (2l+3)(l+1)(l+2)/6 over
    the volume 8 pi^2 / 3."""
    total = 0.0
    for l in range(cap):
        term = (2 * l + 3) * (l + 1) * (l + 2) / 6.0 * math.exp(-l * (l + 3.0) * t)
        total += term
        if l > 0 and term < 1e-17 * total:
            return total * 3.0 / (8.0 * math.pi**2)
    raise RuntimeError("series cap hit")


def flat4_covariance_window(eps: float, t: float, d: float) -> float:
    """Massless 4D covariance over scales [eps, t] in closed form."""
    return (math.exp(-d * d / (4.0 * t)) - math.exp(-d * d / (4.0 * eps))) / (
        4.0 * math.pi**2 * d * d
    )


def flat4_covariance_massive(m: float, d: float) -> float:
    """Full-range massive 4D covariance m K_1(m d) / (4 pi^2 d)."""
    from scipy.special import k1

    return m * k1(m * d) / (4.0 * math.pi**2 * d)
