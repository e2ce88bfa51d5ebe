"""Independent reference calculations used by the tests.

Nothing here imports the solver internals; each oracle re-derives its
answer from a closed form or a different numerical route.
"""
import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import jv, jvp


def sellmeier_direct(coefficients, formula, lam_um):
    """Index straight from the written-out dispersion formulas."""
    lam = float(lam_um)
    if formula == "single_pole_ir":
        A, B, C, D = coefficients
        return math.sqrt(A + B / (1 - (C / lam) ** 2) - D * lam**2)
    if formula == "double_pole":
        A, B, C, D, E = coefficients
        return math.sqrt(A + B / (lam**2 - C) + D / (lam**2 - E))
    raise ValueError(formula)


def exponential_slab_indices(n_sub, dn, depth_um, n_cover, lam_um, samples=20001):
    """Guided indices of a slab with n^2(y) = n_sub^2 + D exp(-y/d) under a uniform cover.

    With s = 2 k d sqrt(D) exp(-y/2d) the field equation becomes Bessel's
    equation of order nu = 2 k d sqrt(N^2 - n_sub^2); the bounded solution is
    J_nu(s), and matching to exp(-gamma_c |y|) in the cover gives
    xi J_nu'(xi) + 2 d gamma_c J_nu(xi) = 0 with xi = 2 k d sqrt(D).
    """
    k = 2 * math.pi / lam_um
    D = (n_sub + dn) ** 2 - n_sub**2
    xi = 2 * k * depth_um * math.sqrt(D)

    def f(N):
        nu = 2 * k * depth_um * math.sqrt(N * N - n_sub * n_sub)
        gc = k * math.sqrt(N * N - n_cover * n_cover)
        return xi * jvp(nu, xi) + 2 * depth_um * gc * jv(nu, xi)

    Ns = np.linspace(n_sub + 1e-9, n_sub + dn - 1e-12, samples)
    vals = np.array([f(N) for N in Ns])
    idx = np.flatnonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))
    roots = [brentq(f, Ns[i], Ns[i + 1], xtol=1e-16, rtol=1e-15) for i in idx]
    return sorted(roots, reverse=True)


def step_slab_indices(n_core, n_clad, width_um, lam_um):
    """Symmetric step slab via the tangent form: tan(u) = v/u (even), -cot(u) = v/u (odd)."""
    k = 2 * math.pi / lam_um
    V = 0.5 * width_um * k * math.sqrt(n_core**2 - n_clad**2)
    out = []
    m = 0
    while m * math.pi / 2 < V:
        lo, hi = m * math.pi / 2 + 1e-12, min((m + 1) * math.pi / 2 - 1e-12, V)
        if m % 2 == 0:
            g = lambda u: math.tan(u) - math.sqrt(V * V - u * u) / u
        else:
            g = lambda u: -1.0 / math.tan(u) - math.sqrt(V * V - u * u) / u
        if g(lo) * g(hi) > 0:
            break
        u = brentq(g, lo, hi, xtol=1e-15)
        kx = u / (width_um / 2)
        out.append(math.sqrt(n_core**2 - (kx / k) ** 2))
        m += 1
    return out


def displaced_gaussian_overlap(delta, sigma):
    """Overlap of two Gaussian mode functions exp(-x^2/(2 sigma^2)) displaced by delta."""
    return math.exp(-delta**2 / (4 * sigma**2))


def gaussian_width(z_mm, w0_um, lam_nm, m2=1.0, z0_mm=0.0):
    """Embedded-Gaussian second-moment radius w(z) in um."""
    zr = math.pi * (w0_um * 1e-3) ** 2 / (m2 * lam_nm * 1e-6)
    return w0_um * math.sqrt(1 + ((z_mm - z0_mm) / zr) ** 2)
