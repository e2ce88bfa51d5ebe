"""
Scalar guided modes of an ion-exchanged channel waveguide.

The channel is treated with the effective-index method: a depth slab with an
exponentially decaying index increase under an air cover is solved first, and
each of its modes supplies the core index of a lateral slab of width ``w``.
Mode labels ``(i, j)`` count nodes along the width and depth respectively.

Lengths are in micrometres and wavelengths are vacuum wavelengths in
micrometres throughout this module.
"""
from __future__ import annotations

import functools
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq
from scipy.special import erf

from .material import KTP_FAN, SellmeierSet, WavelengthRangeError, refractive_index

log = logging.getLogger(__name__)

POLARIZATIONS = ("H", "V", "P")


class ModeSolverError(RuntimeError):
    """Root bracketing or eigenvalue refinement failed."""


class ShapeError(ValueError):
    """Arrays that should share a grid do not."""


@dataclass(frozen=True)
class WaveguideGeometry:
    width_um: float = 2.0
    depth_um: float = 5.0
    delta_n_h: float = 0.01
    delta_n_v: float = 0.01
    length_mm: float = 1.0
    poling_period_um: float = 9.4
    lateral_shape: str = "step"
    lateral_diffusion_um: float = 0.5
    cover_index: float = 1.0
    axis_h: str = "y"
    axis_v: str = "z"
    axis_p: str = "y"
    material: tuple = (KTP_FAN["x"], KTP_FAN["y"], KTP_FAN["z"])

    def __post_init__(self):
        positive = ("width_um", "depth_um", "delta_n_h", "delta_n_v", "length_mm",
                    "poling_period_um", "lateral_diffusion_um")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.lateral_shape not in ("step", "graded"):
            raise ValueError(f"lateral_shape must be 'step' or 'graded', got {self.lateral_shape!r}")
        for ax in (self.axis_h, self.axis_v, self.axis_p):
            if ax not in ("x", "y", "z"):
                raise ValueError(f"unknown crystal axis {ax!r}")
        if isinstance(self.material, dict):
            object.__setattr__(self, "material", tuple(self.material[a] for a in sorted(self.material)))

    def sellmeier(self, pol: str) -> SellmeierSet:
        axis = {"H": self.axis_h, "V": self.axis_v, "P": self.axis_p}[pol]
        for s in self.material:
            if s.axis == axis:
                return s
        raise KeyError(f"no Sellmeier set for axis {axis!r}")

    def delta_n(self, pol: str) -> float:
        # the pump sees the index increase of whichever signal axis it shares
        if pol == "H" or (pol == "P" and self.axis_p == self.axis_h):
            return self.delta_n_h
        if pol == "V" or (pol == "P" and self.axis_p == self.axis_v):
            return self.delta_n_v
        return self.delta_n_h

    def substrate_index(self, pol: str, lam_um):
        return refractive_index(self.sellmeier(pol), lam_um)

    def replace(self, **changes) -> "WaveguideGeometry":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SlabMode:
    """One mode of a 1D slab: effective index plus a unit-norm amplitude profile."""

    n_eff: float
    order: int
    evaluate: Callable = field(repr=False)

    def __call__(self, coords):
        return self.evaluate(np.asarray(coords, dtype=float))


def count_nodes(values, rel_floor=1e-3):
    """Sign changes of a sampled profile, ignoring samples below ``rel_floor`` of the peak."""
    v = np.asarray(values, dtype=float)
    keep = np.abs(v) > rel_floor * np.max(np.abs(v))
    s = np.sign(v[keep])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def _fix_sign(values, rel_floor=1e-3):
    v = np.asarray(values)
    first = np.flatnonzero(np.abs(v) > rel_floor * np.max(np.abs(v)))[0]
    return 1.0 if v[first] > 0 else -1.0


def _fd_level(eps, h, k, n_left, n_right, n_floor, limit=None, vectors=True, iterate=True):
    """Bound modes of E'' + k^2 eps E = k^2 N^2 E with exact exterior decay at both ends.

    Returns a list of (N, eigenvector or None) sorted by descending N.
    """
    m = eps.size
    k2 = k * k
    base = -2.0 / h**2 + k2 * eps
    off = np.full(m - 1, 1.0 / h**2)
    off[0] *= np.sqrt(2.0)
    off[-1] *= np.sqrt(2.0)
    n_top = float(np.sqrt(eps.max()))

    def matrix(N):
        gl = k * np.sqrt(max(N * N - n_left**2, 0.0))
        gr = k * np.sqrt(max(N * N - n_right**2, 0.0))
        d = base.copy()
        d[0] -= 2.0 * gl / h
        d[-1] -= 2.0 * gr / h
        return d

    # first pass with a mid-range decay constant to count candidate modes
    n_mid = 0.5 * (n_floor + n_top)
    w = eigh_tridiagonal(matrix(n_mid), off, eigvals_only=True,
                         select="v", select_range=(k2 * n_floor**2, k2 * n_top**2))
    count = w.size if limit is None else min(w.size, limit)
    out = []
    for j in range(count):
        N = np.sqrt(w[::-1][j]) / k
        if not iterate:
            out.append((N, None))
            continue
        sel = (m - 1 - j, m - 1 - j)
        for _ in range(40):
            wj = eigh_tridiagonal(matrix(N), off, eigvals_only=True, select="i", select_range=sel)
            if wj[0] <= k2 * n_floor**2:
                N = None
                break
            N_new = np.sqrt(wj[0]) / k
            if abs(N_new - N) < 1e-14:
                N = N_new
                break
            N = N_new
        else:
            raise ModeSolverError(
                f"decay-constant iteration did not converge for mode {j} in "
                f"index bracket ({n_floor:.6f}, {n_top:.6f}) at k={k:.6f} rad/um"
            )
        if N is None:
            break
        vec = None
        if vectors:
            _, vj = eigh_tridiagonal(matrix(N), off, select="i", select_range=sel)
            vec = vj[:, 0].copy()
            vec[0] *= np.sqrt(2.0)
            vec[-1] *= np.sqrt(2.0)
        out.append((N, vec))
    return out


def _fd_modes(eps_fn, x0, x1, k, n_left, n_right, h, levels, margin, limit=None, vectors=True):
    """Richardson-extrapolated finite-difference modes on [x0, x1]."""
    n_floor = max(n_left, n_right)
    per_level = []
    for lev in range(levels):
        hl = h / 2**lev
        npts = int(round((x1 - x0) / hl)) + 1
        grid = np.linspace(x0, x1, npts)
        eps = eps_fn(grid)
        last = lev == levels - 1
        per_level.append((grid, _fd_level(eps, grid[1] - grid[0], k, n_left, n_right, n_floor,
                                          limit, vectors and last)))
    count = min(len(lv[1]) for lv in per_level)
    grid, finest = per_level[-1]
    results = []
    for j in range(count):
        mu = [lv[1][j][0] ** 2 for lv in per_level]
        # eigenvalue error expands in even powers of the step
        for order in range(1, len(mu)):
            f = 4.0**order
            mu = [(f * mu[i + 1] - mu[i]) / (f - 1.0) for i in range(len(mu) - 1)]
        N = float(np.sqrt(mu[0]))
        if N - n_floor <= margin:
            continue
        results.append((N, grid, finest[j][1]))
    return results


def _slab_from_samples(N, order, grid, vec, k, n_left, n_right):
    """Wrap FD samples as a unit-norm profile with exact exponential exterior tails."""
    gl = k * np.sqrt(N * N - n_left**2)
    gr = k * np.sqrt(N * N - n_right**2)
    norm2 = trapezoid(vec * vec, grid) + vec[0] ** 2 / (2 * gl) + vec[-1] ** 2 / (2 * gr)
    vals = vec * (_fix_sign(vec) / np.sqrt(norm2))
    spline = CubicSpline(grid, vals)
    x0, x1, e0, e1 = grid[0], grid[-1], vals[0], vals[-1]

    def evaluate(c):
        out = np.empty_like(c)
        lo, hi = c < x0, c > x1
        mid = ~(lo | hi)
        out[mid] = spline(c[mid])
        out[lo] = e0 * np.exp(gl * (c[lo] - x0))
        out[hi] = e1 * np.exp(-gr * (c[hi] - x1))
        return out

    return SlabMode(N, order, evaluate)


def _depth_extent(eps_fn, k, n_cover, n_sub, dn, d, extent, limit, decay=30.0):
    """Domain depth at which the weakest kept mode has decayed by exp(-decay).

    A coarse solve estimates the lowest index; the domain is cut where the
    field past the substrate-side turning point has fallen far below rounding,
    never shallower than 6 d and never deeper than ``extent`` d.
    """
    full = extent * d
    grid = np.linspace(0.0, full, int(round(full / 0.1)) + 1)
    modes = _fd_level(eps_fn(grid), grid[1] - grid[0], k, n_cover, n_sub, n_sub,
                      limit, vectors=False, iterate=False)
    if not modes:
        return full
    N = modes[-1][0]
    if N - n_sub < 1e-5:
        return full
    gamma = k * np.sqrt(N * N - n_sub**2)
    turning = d * np.log(max(dn / (N - n_sub), 1.0))
    return float(min(full, max(6.0 * d, turning + decay / gamma)))


@functools.lru_cache(maxsize=4096)
def _depth_cached(n_sub, dn, d, n_cover, lam, form, h, levels, extent, limit, profiles=True):
    k = 2 * np.pi / lam
    if form == "index":
        eps_fn = lambda y: (n_sub + dn * np.exp(-y / d)) ** 2
    elif form == "permittivity":
        top = (n_sub + dn) ** 2 - n_sub**2
        eps_fn = lambda y: n_sub**2 + top * np.exp(-y / d)
    else:
        raise ValueError(f"unknown depth profile form {form!r}")
    depth_end = _depth_extent(eps_fn, k, n_cover, n_sub, dn, d, extent, limit)
    modes = _fd_modes(eps_fn, 0.0, depth_end, k, n_cover, n_sub, h, levels, margin=1e-7,
                      limit=limit, vectors=profiles)
    if not profiles:
        return tuple(SlabMode(N, j, None) for j, (N, _, _) in enumerate(modes))
    return tuple(_slab_from_samples(N, j, g, v, k, n_cover, n_sub) for j, (N, g, v) in enumerate(modes))


def solve_depth_slab(n_sub, delta_n, depth_um, n_cover, lam_um, *, form="index",
                     step_um=0.04, levels=2, extent=22.0, max_count=None, profiles=True):
    """Modes of the exponential depth profile, sorted by descending effective index.

    ``form="index"`` uses n(y) = n_sub + dn exp(-y/d); ``form="permittivity"``
    makes n^2 exactly exponential with the same surface index. ``y`` is
    measured into the substrate from the surface at ``y = 0``. Returns an
    empty list when no mode is bound. With ``profiles=False`` only effective
    indices are computed.
    """
    if not delta_n > 0:
        raise ValueError("delta_n must be > 0")
    return list(_depth_cached(float(n_sub), float(delta_n), float(depth_um), float(n_cover),
                              float(lam_um), form, float(step_um), int(levels), float(extent),
                              None if max_count is None else int(max_count), bool(profiles)))


def _step_slab_mode(order, u, V, n_core, n_clad, w, k):
    v = np.sqrt(max(V * V - u * u, 0.0))
    a = w / 2.0
    kx, gam = u / a, v / a
    N = float(np.sqrt(n_core**2 - (kx / k) ** 2))
    even = order % 2 == 0
    if even:
        edge = np.cos(u)
        norm2 = a + a * np.sin(2 * u) / (2 * u) + edge**2 / gam
    else:
        edge = np.sin(u)
        norm2 = a - a * np.sin(2 * u) / (2 * u) + edge**2 / gam
    scale = 1.0 / np.sqrt(norm2)
    if not even:
        # first lobe (most negative x) positive
        scale = -scale

    def evaluate(c):
        inside = np.abs(c) <= a
        tail = edge * np.exp(-gam * (np.abs(c) - a))
        if even:
            out = np.where(inside, np.cos(kx * c), tail)
        else:
            out = np.where(inside, np.sin(kx * c), np.sign(c) * tail)
        return scale * out

    return SlabMode(N, order, evaluate)


def solve_lateral_slab(n_core_eff, n_clad_eff, width_um, lam_um):
    """Modes of a symmetric step slab from the standard transcendental relation."""
    if n_core_eff <= n_clad_eff:
        return []
    k = 2 * np.pi / lam_um
    V = 0.5 * width_um * k * np.sqrt(n_core_eff**2 - n_clad_eff**2)
    modes = []
    order = 0
    while order * np.pi / 2 < V:
        lo = order * np.pi / 2
        hi = min((order + 1) * np.pi / 2, V)
        if order % 2 == 0:
            f = lambda u: u * np.sin(u) - np.sqrt(max(V * V - u * u, 0.0)) * np.cos(u)
        else:
            f = lambda u: u * np.cos(u) + np.sqrt(max(V * V - u * u, 0.0)) * np.sin(u)
        a, b = lo + 1e-15 * max(lo, 1.0), hi
        fa, fb = f(a), f(b)
        if fa * fb > 0:
            if abs(fb) < 1e-14:
                break
            raise ModeSolverError(
                f"no sign change for lateral order {order} in u-bracket [{a:.6g}, {b:.6g}] "
                f"at lambda={lam_um} um (V={V:.6g})"
            )
        u = brentq(f, a, b, xtol=1e-15, rtol=1e-15, maxiter=500)
        if V - u < 1e-9:
            break
        modes.append(_step_slab_mode(order, u, V, n_core_eff, n_clad_eff, width_um, k))
        order += 1
    return modes


def solve_graded_lateral_slab(n_core_eff, n_clad_eff, width_um, diffusion_um, lam_um,
                              *, step_um=0.02, levels=2, profiles=True):
    """Lateral modes for an error-function (diffused) channel edge."""
    if n_core_eff <= n_clad_eff:
        return []
    k = 2 * np.pi / lam_um
    a, D = width_um / 2.0, diffusion_um
    X = a + 6.0 * D
    dn = n_core_eff - n_clad_eff
    eps_fn = lambda x: (n_clad_eff + dn * 0.5 * (erf((x + a) / D) - erf((x - a) / D))) ** 2
    modes = _fd_modes(eps_fn, -X, X, k, n_clad_eff, n_clad_eff, step_um, levels, margin=1e-9,
                      vectors=profiles)
    if not profiles:
        return [SlabMode(N, i, None) for i, (N, _, _) in enumerate(modes)]
    return [_slab_from_samples(N, i, g, v, k, n_clad_eff, n_clad_eff) for i, (N, g, v) in enumerate(modes)]


def default_window(geom: WaveguideGeometry, points=512):
    """The 6w x 6d solver grid shared by every mode of one geometry."""
    w, d = geom.width_um, geom.depth_um
    x = np.linspace(-3 * w, 3 * w, points)
    y = np.linspace(-0.25 * d, 5.75 * d, points)
    return x, y


def _spline(lams, values):
    if lams.size == 1:
        return None
    if lams.size < 4:
        return PchipInterpolator(lams, values, extrapolate=False)
    cs = CubicSpline(lams, values, extrapolate=False)
    diffs = np.diff(values)
    if np.all(diffs < 0) or np.all(diffs > 0):
        dense = np.linspace(lams[0], lams[-1], 20 * lams.size)
        slope = cs(dense, 1)
        if not (np.all(slope < 0) or np.all(slope > 0)):
            return PchipInterpolator(lams, values, extrapolate=False)
    return cs


@dataclass(frozen=True, eq=False)
class GuidedMode:
    """A labelled channel mode with its effective-index dispersion and profile.

    ``profile`` is sampled on the shared window grid ``(y_um, x_um)`` and has
    unit norm under trapezoidal quadrature; ``lateral`` and ``depth`` evaluate
    the unit-norm 1D factors anywhere.
    """

    label: tuple
    pol: str
    wavelengths_um: np.ndarray
    n_eff: np.ndarray
    reference_um: float
    x_um: np.ndarray = field(repr=False)
    y_um: np.ndarray = field(repr=False)
    ux: np.ndarray = field(repr=False)
    uy: np.ndarray = field(repr=False)
    lateral: SlabMode = field(repr=False)
    depth: SlabMode = field(repr=False)

    @property
    def profile(self):
        return np.outer(self.uy, self.ux)

    @property
    def name(self):
        return f"{self.label[0]}{self.label[1]}_{self.pol}"

    @functools.cached_property
    def _interp(self):
        return _spline(np.asarray(self.wavelengths_um), np.asarray(self.n_eff))

    def n_eff_at(self, lam_um):
        lam = np.asarray(lam_um, dtype=float)
        lams = self.wavelengths_um
        if lams.size == 1:
            if not np.all(lam == lams[0]):
                raise WavelengthRangeError(
                    f"mode {self.name} solved only at {lams[0]} um; cannot evaluate at {lam}")
            out = np.full(lam.shape, self.n_eff[0])
        else:
            if np.any(lam < lams[0]) or np.any(lam > lams[-1]):
                bad = lam[(lam < lams[0]) | (lam > lams[-1])].flat[0]
                raise WavelengthRangeError(
                    f"wavelength {bad:.6g} um outside solved range [{lams[0]}, {lams[-1]}] "
                    f"um of mode {self.name}")
            out = self._interp(lam)
        return float(out) if out.ndim == 0 else out

    def group_index_at(self, lam_um):
        lam = np.asarray(lam_um, dtype=float)
        if self._interp is None:
            raise WavelengthRangeError(f"mode {self.name} has no dispersion samples")
        self.n_eff_at(lam)
        ng = self._interp(lam) - lam * self._interp(lam, 1)
        return float(ng) if ng.ndim == 0 else ng


def propagation_constant(mode: GuidedMode, lam_um):
    """beta = 2 pi n_eff / lambda in rad/um."""
    lam = np.asarray(lam_um, dtype=float)
    beta = 2 * np.pi * np.asarray(mode.n_eff_at(lam)) / lam
    return float(beta) if beta.ndim == 0 else beta


def _eim_indices(geom: WaveguideGeometry, pol: str, lam_um, max_label, profiles=True):
    """(label -> (n_eff, lateral SlabMode, depth SlabMode)) at one wavelength."""
    n_sub = geom.substrate_index(pol, lam_um)
    depth_modes = solve_depth_slab(n_sub, geom.delta_n(pol), geom.depth_um, geom.cover_index, lam_um,
                                   max_count=max_label + 1, profiles=profiles)
    out = {}
    for j, dm in enumerate(depth_modes[: max_label + 1]):
        if geom.lateral_shape == "step":
            lat = solve_lateral_slab(dm.n_eff, n_sub, geom.width_um, lam_um)
        else:
            lat = solve_graded_lateral_slab(dm.n_eff, n_sub, geom.width_um,
                                            geom.lateral_diffusion_um, lam_um, profiles=profiles)
        for i, lm in enumerate(lat[: max_label + 1]):
            out[(i, j)] = (lm.n_eff, lm, dm)
    return out


_WINDOW_MIN_POWER = 0.999


def _build_modes(geom, pol, knots, reference_um, max_label, max_modes, points, threads):
    ref_set = _eim_indices(geom, pol, reference_um, max_label)
    x, y = default_window(geom, points)
    labels = []
    for lab, (_, lm, dm) in ref_set.items():
        px = trapezoid(lm(x) ** 2, x)
        py = trapezoid(dm(y) ** 2, y)
        if px * py < _WINDOW_MIN_POWER:
            log.debug("dropping %s%s: only %.4f of its power lies in the window", lab, pol, px * py)
            continue
        labels.append(lab)
    if knots is None:
        per_knot = [ref_set]
        knots = np.array([reference_um])
    else:
        knots = np.asarray(knots, dtype=float)
        with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
            per_knot = list(ex.map(lambda l: _eim_indices(geom, pol, l, max_label, False), knots))
    modes = []
    for lab in labels:
        if not all(lab in pk for pk in per_knot):
            log.debug("dropping %s%s: cut off inside the wavelength range", lab, pol)
            continue
        _, lm, dm = ref_set[lab]
        ux, uy = lm(x), dm(y)
        ux = ux / np.sqrt(trapezoid(ux * ux, x))
        uy = uy / np.sqrt(trapezoid(uy * uy, y))
        modes.append(GuidedMode(
            label=lab, pol=pol, wavelengths_um=knots,
            n_eff=np.array([pk[lab][0] for pk in per_knot]),
            reference_um=float(reference_um), x_um=x, y_um=y, ux=ux, uy=uy,
            lateral=lm, depth=dm,
        ))
    modes.sort(key=lambda m: -ref_set[m.label][0])
    if max_modes is not None:
        modes = modes[:max_modes]
    return modes


class ModeCache:
    """Solved mode sets keyed by (geometry, polarization, wavelength sampling).

    Reads are lock-free; insertion happens under a lock so concurrent callers
    never see a partially built entry.
    """

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def get_or_solve(self, key, solve):
        hit = self._store.get(key)
        if hit is not None:
            return hit
        value = tuple(solve())
        with self._lock:
            return self._store.setdefault(key, value)

    def clear(self):
        with self._lock:
            self._store.clear()


CACHE = ModeCache()


def solve_modes(geom: WaveguideGeometry, pol: str, lam_um: float, max_modes=None, *,
                max_label=3, points=512):
    """Channel modes at one wavelength, sorted by descending effective index."""
    if pol not in POLARIZATIONS:
        raise ValueError(f"polarization must be one of {POLARIZATIONS}")
    geom.sellmeier(pol).check_range(lam_um)
    key = (geom, pol, None, float(lam_um), max_label, max_modes, points)
    return list(CACHE.get_or_solve(
        key, lambda: _build_modes(geom, pol, None, float(lam_um), max_label, max_modes, points, 1)))


def solve_mode_dispersion(geom: WaveguideGeometry, pol: str, lam_min_um, lam_max_um, *,
                          knots=7, reference_um=None, max_modes=None, max_label=3,
                          points=512, threads=1):
    """Channel modes with n_eff sampled on ``knots`` wavelengths for interpolation.

    Profiles are taken at ``reference_um`` (default: mid-range).
    """
    if pol not in POLARIZATIONS:
        raise ValueError(f"polarization must be one of {POLARIZATIONS}")
    lams = np.linspace(lam_min_um, lam_max_um, knots)
    geom.sellmeier(pol).check_range(lams)
    ref = float(reference_um if reference_um is not None else 0.5 * (lam_min_um + lam_max_um))
    key = (geom, pol, (float(lam_min_um), float(lam_max_um), int(knots)), ref, max_label, max_modes, points)
    return list(CACHE.get_or_solve(
        key, lambda: _build_modes(geom, pol, lams, ref, max_label, max_modes, points, threads)))


def _integrate2d(f, x=None, y=None):
    if x is None or y is None:
        return float(trapezoid(trapezoid(f, axis=1), axis=0))
    return float(trapezoid(trapezoid(f, x, axis=1), y, axis=0))


def _check_shapes(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeError(f"grid mismatch: {shape} vs {np.shape(a)}")


def mode_overlap(intensity_a, intensity_b, x=None, y=None):
    """Overlap of constant-phase mode functions rebuilt from two intensity maps.

    Computes the integral of sqrt(I_a I_b), normalised by the square roots of
    both total powers so the result lies in [0, 1].
    """
    a = np.asarray(intensity_a, dtype=float)
    b = np.asarray(intensity_b, dtype=float)
    _check_shapes(a, b)
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("intensities must be non-negative")
    num = _integrate2d(np.sqrt(a * b), x, y)
    den = np.sqrt(_integrate2d(a, x, y) * _integrate2d(b, x, y))
    if den == 0:
        raise ValueError("zero total intensity")
    return float(min(max(num / den, 0.0), 1.0))


def nonlinear_overlap(u_p, u_h, u_v, x=None, y=None):
    """Three-mode coupling integral of real amplitude profiles, in 1/um if x, y are in um."""
    _check_shapes(u_p, u_h, u_v)
    return _integrate2d(np.asarray(u_p) * np.asarray(u_h) * np.asarray(u_v), x, y)


def triplet_overlap(mode_p: GuidedMode, mode_h: GuidedMode, mode_v: GuidedMode):
    """Coupling integral of three solved modes; uses the separable form on the shared grid."""
    for m in (mode_h, mode_v):
        if m.x_um.shape != mode_p.x_um.shape or not np.array_equal(m.x_um, mode_p.x_um) \
                or not np.array_equal(m.y_um, mode_p.y_um):
            raise ShapeError("modes were solved on different grids")
    gx = trapezoid(mode_p.ux * mode_h.ux * mode_v.ux, mode_p.x_um)
    gy = trapezoid(mode_p.uy * mode_h.uy * mode_v.uy, mode_p.y_um)
    return float(gx * gy)


def guidance_floor(geom: WaveguideGeometry, pol: str, lam_um: float, *, lo=1e-4, hi=0.05,
                   rtol=1e-3, points=512):
    """Smallest index contrast of ``pol``'s axis that still yields a kept 00 mode at ``lam_um``.

    Bisection on the contrast with the other geometry fixed; the window-power
    rule of the mode builder counts as part of "kept".
    """
    field = {"H": "delta_n_h", "V": "delta_n_v"}.get(pol)
    if field is None:
        raise ValueError("guidance floor is defined for the H and V axes")

    def guided(dn):
        g = geom.replace(**{field: dn})
        return any(m.label == (0, 0) for m in solve_modes(g, pol, lam_um, max_label=0, points=points))

    if not guided(hi):
        raise ModeSolverError(f"no guided 00{pol} mode even at index contrast {hi}")
    if guided(lo):
        return lo
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if guided(mid) else (mid, hi)
    return hi
