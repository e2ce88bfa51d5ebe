"""
Free-space propagation of output-facet fields and the photon-counting
knife-edge M^2 measurement.

Fields live on square grids indexed [ix, iy] with pitch in um; planes are
placed in mm along z. Beam half-widths are w = 2 sigma of the intensity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import eval_hermite, factorial

from .jsa import HeraldedState
from .modesolver import GuidedMode


class NyquistError(ValueError):
    """The grid cannot represent the field's angular content or extent."""


class CoverageError(ValueError):
    """Knife-edge positions do not span the beam."""


class ReconstructionError(ValueError):
    """A knife-edge curve carries no usable derivative."""


class PlanError(ValueError):
    """A z-sampling plan violates the ISO point-count rule."""


class DegenerateIntensityError(ValueError):
    """Zero total intensity."""


class UnphysicalFitError(ValueError):
    def __init__(self, message, coefficients):
        super().__init__(message)
        self.coefficients = coefficients


@dataclass(frozen=True)
class GridSpec:
    """Square grid of ``n`` x ``n`` points with ``pitch_um`` spacing, centred on the axis."""

    n: int = 1024
    pitch_um: float = 5.0

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 8, got {self.n}")
        if not self.pitch_um > 0:
            raise ValueError(f"grid pitch must be positive, got {self.pitch_um}")

    @property
    def coords(self):
        return (np.arange(self.n) - self.n // 2) * self.pitch_um


# fraction of spectral power tolerated in the outer quarter of the Nyquist band
GUARD_TOLERANCE = 1e-3
# fraction of power tolerated in the outer 1/16 border of the window
EDGE_TOLERANCE = 1e-5


def _spectral_guard(f):
    """Power fraction in the outer quarter of the spatial-frequency band (either axis)."""
    P = np.abs(np.fft.fft2(f)) ** 2
    tot = P.sum()
    if tot == 0:
        return 0.0
    n0, n1 = f.shape
    k0 = np.abs(np.fft.fftfreq(n0)) > 0.375
    k1 = np.abs(np.fft.fftfreq(n1)) > 0.375
    outer = P[k0, :].sum() + P[~k0][:, k1].sum()
    return float(outer / tot)


def _edge_fraction(f):
    I = np.abs(f) ** 2
    tot = I.sum()
    if tot == 0:
        return 0.0
    b = max(1, f.shape[0] // 16)
    inner = I[b:-b, b:-b].sum()
    return float(1.0 - inner / tot)


@dataclass(frozen=True)
class TransverseField:
    """Complex field on a square grid at plane ``z_mm``, normalised to unit power."""

    field: np.ndarray
    pitch_um: float
    z_mm: float
    wavelength_nm: float
    guard_ok: bool = True

    def __post_init__(self):
        f = np.asarray(self.field, dtype=complex)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise ValueError(f"field must be a square 2D array, got shape {f.shape}")
        f.setflags(write=False)
        object.__setattr__(self, "field", f)

    @property
    def n(self):
        return self.field.shape[0]

    @property
    def x_um(self):
        return (np.arange(self.n) - self.n // 2) * self.pitch_um

    y_um = x_um

    @property
    def power(self):
        return float(np.sum(np.abs(self.field) ** 2) * self.pitch_um**2)

    @property
    def intensity(self):
        return np.abs(self.field) ** 2

    def marginal(self, axis):
        """1D intensity profile along ``axis`` ('x' or 'y'), integrated over the other."""
        I = self.intensity
        return I.sum(axis=1) * self.pitch_um if axis == "x" else I.sum(axis=0) * self.pitch_um

    def normalized(self):
        p = self.power
        if not p > 0:
            raise DegenerateIntensityError("field has zero power")
        return self.with_field(self.field / math.sqrt(p))

    def with_field(self, f, z_mm=None):
        return TransverseField(f, self.pitch_um, self.z_mm if z_mm is None else z_mm,
                               self.wavelength_nm, self.guard_ok)

    def widths(self):
        """(w_x, w_y) = 2 sigma of the intensity marginals, um."""
        return (second_moment_width(self.marginal("x"), self.x_um),
                second_moment_width(self.marginal("y"), self.y_um))

    def inner(self, other: "TransverseField"):
        return complex(np.sum(np.conj(self.field) * other.field) * self.pitch_um**2)


def _make_field(f, grid: GridSpec, wavelength_nm, guard_tol):
    guard = _spectral_guard(f)
    if guard > guard_tol:
        raise NyquistError(
            f"{guard:.2e} of the spectral power lies in the outer quarter of the band "
            f"(limit {guard_tol:.0e}); reduce the pitch below {grid.pitch_um} um")
    fld = TransverseField(f, grid.pitch_um, 0.0, wavelength_nm, True)
    return fld.normalized()


def hg_field(n: int, m: int, w0_um: float, wavelength_nm: float, grid: GridSpec = GridSpec(),
             *, guard_tol=GUARD_TOLERANCE) -> TransverseField:
    """Hermite-Gauss mode (n along x, m along y) at its waist; w0 is the 1/e^2 radius."""
    if not w0_um > 0:
        raise ValueError(f"waist must be positive, got {w0_um}")
    c = grid.coords
    u = np.sqrt(2.0) * c / w0_um

    def hg1(order):
        norm = 1.0 / math.sqrt(2.0**order * factorial(order, exact=True))
        return norm * eval_hermite(order, u) * np.exp(-u * u / 2)

    f = np.outer(hg1(n), hg1(m)).astype(complex)
    return _make_field(f, grid, wavelength_nm, guard_tol)


def _centroid(I, c):
    return float(np.sum(I * c) / np.sum(I))


def facet_offset(mode: GuidedMode):
    """Intensity centroid (x, y) of a guided mode in waveguide coordinates, um."""
    Ix = mode.ux**2
    Iy = mode.uy**2
    return _centroid(Ix, mode.x_um), _centroid(Iy, mode.y_um)


def relay_magnification(mode: GuidedMode, target_w_um=50.0):
    """Per-axis magnification taking the mode's facet half-widths to ``target_w_um``."""
    wx = second_moment_width(mode.ux**2, mode.x_um)
    wy = second_moment_width(mode.uy**2, mode.y_um)
    return target_w_um / wx, target_w_um / wy


def facet_field(mode: GuidedMode, wavelength_nm: float, grid: GridSpec = GridSpec(), *,
                magnification=(1.0, 1.0), offset_um=None, na=None,
                guard_tol=GUARD_TOLERANCE) -> TransverseField:
    """Unit-power image of a guided mode at the relay's image plane (z = 0).

    The facet point ``offset_um`` (default: the mode's own intensity centroid)
    maps to the grid centre; each axis is magnified independently. Share the
    offset and magnification across modes that form one beam. With ``na`` set,
    facet spatial frequencies beyond na * 2 pi / lambda are removed, as the
    collection objective's pupil does.
    """
    mx, my = (float(v) for v in np.broadcast_to(magnification, 2))
    if mx <= 0 or my <= 0:
        raise ValueError("magnification must be positive")
    x0, y0 = facet_offset(mode) if offset_um is None else offset_um
    c = grid.coords
    ux = mode.lateral(c / mx + x0)
    uy = mode.depth(c / my + y0)
    f = np.outer(ux, uy).astype(complex)
    if na is not None:
        k_cut = na * 2 * np.pi / (wavelength_nm / 1e3)
        k = np.fft.fftfreq(grid.n, grid.pitch_um) * 2 * np.pi
        pupil = (k[:, None] * mx) ** 2 + (k[None, :] * my) ** 2 <= k_cut**2
        f = np.fft.ifft2(np.fft.fft2(f) * pupil)
    return _make_field(f, grid, wavelength_nm, guard_tol)


def thin_lens(fld: TransverseField, f_mm: float) -> TransverseField:
    """Quadratic phase exp(-i pi r^2 / (lambda f)); f = inf is the identity."""
    if f_mm == 0:
        raise ValueError("focal length must be non-zero")
    if math.isinf(f_mm):
        return fld
    lam_um = fld.wavelength_nm / 1e3
    f_um = f_mm * 1e3
    x = fld.x_um
    I = fld.intensity
    # local spatial frequency of the lens phase must stay below Nyquist where light is
    lit = I > 1e-12 * I.max()
    r_need = max(np.abs(x[lit.any(axis=1)]).max(), np.abs(x[lit.any(axis=0)]).max())
    r_ok = lam_um * abs(f_um) / (2 * fld.pitch_um)
    if r_need > r_ok:
        raise NyquistError(
            f"lens phase aliases beyond r = {r_ok:.1f} um but the field extends to {r_need:.1f} um; "
            f"use a pitch below {lam_um * abs(f_um) / (2 * r_need):.3g} um")
    r2 = x[:, None] ** 2 + x[None, :] ** 2
    return fld.with_field(fld.field * np.exp(-1j * np.pi * r2 / (lam_um * f_um)))


def _kz(n, pitch_um, lam_um):
    k = 2 * np.pi / lam_um
    f = np.fft.fftfreq(n, pitch_um) * 2 * np.pi
    kt2 = f[:, None] ** 2 + f[None, :] ** 2
    if kt2.max() >= k * k:
        raise NyquistError(
            f"grid pitch {pitch_um} um samples evanescent waves at {lam_um} um; "
            f"use a pitch above {lam_um / 2 * np.sqrt(2):.3g} um")
    return np.sqrt(k * k - kt2) - k


def propagate(fld: TransverseField, dz_mm: float, *, edge_tol=EDGE_TOLERANCE) -> TransverseField:
    """Angular-spectrum propagation by ``dz_mm`` with the exact longitudinal wavenumber."""
    if dz_mm == 0:
        return fld
    lam_um = fld.wavelength_nm / 1e3
    H = np.exp(1j * _kz(fld.n, fld.pitch_um, lam_um) * dz_mm * 1e3)
    out = np.fft.ifft2(np.fft.fft2(fld.field) * H)
    edge = _edge_fraction(out)
    if edge > edge_tol:
        need = int(2 ** math.ceil(math.log2(fld.n * 2)))
        raise NyquistError(
            f"{edge:.2e} of the power reaches the window border after {dz_mm} mm; "
            f"enlarge the grid (e.g. n = {need} at the same pitch)")
    return fld.with_field(out, z_mm=fld.z_mm + dz_mm)


def second_moment_width(intensity, coords=None, *, pitch_um=1.0):
    """w = 2 sigma of a non-negative 1D intensity profile about its centroid.

    A 2D array returns (w_x, w_y) along its first and second axes, with
    ``coords`` shared by both.
    """
    I = np.asarray(intensity, dtype=float)
    if np.any(I < 0):
        raise ValueError("intensity must be non-negative")
    if I.ndim == 2:
        return (second_moment_width(I.sum(axis=1), coords, pitch_um=pitch_um),
                second_moment_width(I.sum(axis=0), coords, pitch_um=pitch_um))
    c = np.arange(I.size) * pitch_um if coords is None else np.asarray(coords, dtype=float)
    tot = I.sum()
    if not tot > 0:
        raise DegenerateIntensityError("intensity has zero total")
    mu = np.sum(I * c) / tot
    var = np.sum(I * (c - mu) ** 2) / tot
    return float(2.0 * math.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class MixedBeam:
    """Incoherent mixture of unit-power fields; weights are normalised to sum 1."""

    components: tuple

    def __post_init__(self):
        comps = tuple((f, float(w)) for f, w in self.components)
        if not comps:
            raise ValueError("a mixed beam needs at least one component")
        if any(w < 0 for _, w in comps):
            raise ValueError("mixture weights must be non-negative")
        tot = sum(w for _, w in comps)
        if not tot > 0:
            raise ValueError("mixture weights sum to zero")
        comps = tuple((f, w / tot) for f, w in comps)
        object.__setattr__(self, "components", comps)

    @classmethod
    def pure(cls, fld: TransverseField):
        return cls(((fld, 1.0),))

    @property
    def weights(self):
        return np.array([w for _, w in self.components])

    @property
    def wavelength_nm(self):
        return self.components[0][0].wavelength_nm

    def propagate(self, dz_mm):
        return MixedBeam(tuple((propagate(f, dz_mm), w) for f, w in self.components))

    def marginal(self, axis):
        return sum(w * f.marginal(axis) for f, w in self.components)

    def coords(self, axis):
        f = self.components[0][0]
        return f.x_um if axis == "x" else f.y_um

    def width(self, axis):
        return second_moment_width(self.marginal(axis), self.coords(axis))


def heralded_beam(state: HeraldedState, modes: dict, wavelength_nm: float,
                  grid: GridSpec = GridSpec(), *, target_w_um=50.0, reference=(0, 0),
                  na=0.8, min_weight=1e-6, guard_tol=GUARD_TOLERANCE) -> MixedBeam:
    """Spatial mixture carried by a heralded photon, imaged by the relay.

    The density matrix is diagonalised; each eigenvector is a coherent sum of
    facet fields and enters with its eigenvalue as weight. The relay images
    the ``reference`` mode to ``target_w_um`` half-widths on both axes, and
    the same mapping is applied to every mode; ``na`` is the collection pupil.
    """
    ref = modes[tuple(reference)]
    mag = relay_magnification(ref, target_w_um)
    off = facet_offset(ref)
    fields = {lab: facet_field(modes[lab], wavelength_nm, grid, magnification=mag, offset_um=off,
                               na=na, guard_tol=guard_tol) for lab in state.labels}
    weights, vecs = state.eigen()
    comps = []
    for p, v in zip(weights, vecs.T):
        if p < min_weight:
            continue
        f = sum(c * fields[lab].field for c, lab in zip(v, state.labels))
        comps.append((TransverseField(f, grid.pitch_um, 0.0, wavelength_nm).normalized(), p))
    return MixedBeam(tuple(comps))


# knife-edge measurement ---------------------------------------------------

def _seed_sequence(seed):
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


@dataclass(frozen=True)
class KnifeEdgeCurve:
    """Recorded transmission curve; ``counts`` are floats equal to T(p) when noiseless."""

    positions_um: np.ndarray
    counts: np.ndarray
    expected: np.ndarray
    budget: float
    axis: str
    z_mm: float
    seed: object = None
    floor: float = 0.0

    @property
    def noiseless(self):
        return math.isinf(self.budget)


def transmission(marginal, coords, positions_um):
    """T(p) = fraction of power beyond the edge at p (edge blocks coords < p)."""
    m = np.asarray(marginal, dtype=float)
    c = np.asarray(coords, dtype=float)
    h = c[1] - c[0]
    # cumulative power up to each cell boundary; cells are centred on coords
    edges = np.concatenate([[c[0] - h / 2], c + h / 2])
    cum = np.concatenate([[0.0], np.cumsum(m) * h])
    tot = cum[-1]
    if not tot > 0:
        raise DegenerateIntensityError("beam has zero power")
    blocked = np.interp(positions_um, edges, cum, left=0.0, right=tot)
    return 1.0 - blocked / tot


def knife_edge_scan(beam, axis, positions_um, budget=1e5, seed=0, *, floor=0.0,
                    efficiency=1.0) -> KnifeEdgeCurve:
    """Counts behind a knife edge swept along ``axis`` ('x' or 'y').

    Mean counts at edge position p are budget * efficiency * T(p) + floor,
    drawn Poisson with one seed-derived stream per position. ``budget = inf``
    switches noise off and records T(p) itself.
    """
    if isinstance(beam, TransverseField):
        beam = MixedBeam.pure(beam)
    if axis not in ("x", "y"):
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")
    return _scan_marginal(beam.marginal(axis), beam.coords(axis), beam.components[0][0].z_mm,
                          axis, positions_um, budget, seed, floor, efficiency)


def _scan_marginal(marg, coords, z_mm, axis, positions_um, budget, seed, floor, efficiency):
    pos = np.asarray(positions_um, dtype=float)
    if pos.ndim != 1 or pos.size < 3:
        raise ValueError("need at least three edge positions")
    T = transmission(marg, coords, pos)
    span = float(T.max() - T.min())
    if span < 0.99:
        raise CoverageError(f"edge positions cover only {span:.4f} of the beam power (need > 0.99)")
    if math.isinf(budget):
        return KnifeEdgeCurve(pos, T.copy(), T.copy(), math.inf, axis, z_mm, seed, 0.0)
    if budget <= 0 or not 0 < efficiency <= 1 or floor < 0:
        raise ValueError("budget must be positive, efficiency in (0, 1], floor non-negative")
    mean = budget * efficiency * T + floor
    streams = _seed_sequence(seed).spawn(pos.size)
    counts = np.array([np.random.default_rng(s).poisson(mu) for s, mu in zip(streams, mean)], dtype=float)
    return KnifeEdgeCurve(pos, counts, mean, float(budget * efficiency), axis, z_mm, seed, float(floor))


def _widths_from_counts(pos, counts, pedestal_fraction=0.1):
    """w = 2 sigma of the clipped, pedestal-subtracted derivative; counts may be stacked rows."""
    c = np.atleast_2d(counts)
    d = -np.gradient(c, pos, axis=1)
    d = np.clip(d, 0.0, None)
    n = pos.size
    k = max(1, int(round(pedestal_fraction * n / 2)))
    ped = 0.5 * (d[:, :k].mean(axis=1) + d[:, -k:].mean(axis=1))
    d = np.clip(d - ped[:, None], 0.0, None)
    return _moment_widths(pos, d)


def _moment_widths(pos, d, mask=None):
    if mask is not None:
        d = np.where(mask, d, 0.0)
    tot = d.sum(axis=1)
    ok = tot > 0
    mu = np.where(ok, (d * pos).sum(axis=1) / np.where(ok, tot, 1), 0.0)
    var = np.where(ok, (d * (pos - mu[:, None]) ** 2).sum(axis=1) / np.where(ok, tot, 1), 0.0)
    # central differences average the density over two steps: remove that box variance
    h = np.mean(np.diff(pos))
    var = np.clip(var - h * h / 3.0, 0.0, None)
    return 2.0 * np.sqrt(var), ok, mu


def _aperture_widths(pos, counts, aperture=3.0, iterations=20):
    """ISO-style estimate: raw derivative moments inside +/- ``aperture`` w, iterated."""
    c = np.atleast_2d(counts)
    d = -np.gradient(c, pos, axis=1)
    w, ok, mu = _moment_widths(pos, np.clip(d, 0.0, None))
    for _ in range(iterations):
        mask = np.abs(pos[None, :] - mu[:, None]) <= aperture * w[:, None]
        w_new, ok, mu = _moment_widths(pos, d, mask)
        if np.allclose(w_new, w, rtol=1e-9, atol=0):
            w = w_new
            break
        w = w_new
    return w, ok & (w > 0), mu


def _estimate(pos, counts, method, pedestal_fraction):
    if method == "derivative":
        w, ok, _ = _widths_from_counts(pos, counts, pedestal_fraction)
    elif method == "aperture":
        w, ok, _ = _aperture_widths(pos, counts)
    else:
        raise ValueError(f"unknown width method {method!r}; use 'derivative' or 'aperture'")
    return w, ok


def width_from_knife_edge(curve: KnifeEdgeCurve, *, resamples=200, seed=None,
                          pedestal_fraction=0.1, method="derivative"):
    """Half-width w and its bootstrap error from a knife-edge curve.

    ``method="derivative"`` differentiates the curve by central differences,
    clips negative lobes, removes a pedestal estimated from the outer
    ``pedestal_fraction`` of the positions and returns w = 2 sigma of what
    remains. ``method="aperture"`` keeps the raw derivative and restricts the
    moments to an iterated aperture of +/- 3 w instead. The error comes from
    ``resamples`` Poisson resamplings of the recorded counts (zero for a
    noiseless curve).
    """
    pos = curve.positions_um
    w, ok = _estimate(pos, curve.counts, method, pedestal_fraction)
    if not ok[0] or w[0] == 0:
        raise ReconstructionError("knife-edge derivative vanishes everywhere")
    if curve.noiseless or resamples == 0:
        return float(w[0]), 0.0
    if seed is None:
        seed = np.random.SeedSequence(_seed_sequence(curve.seed).entropy, spawn_key=(pos.size,))
    rng = np.random.default_rng(_seed_sequence(seed))
    boot = rng.poisson(np.clip(curve.counts, 0, None), size=(resamples, pos.size)).astype(float)
    wb, okb = _estimate(pos, boot, method, pedestal_fraction)
    return float(w[0]), float(np.std(wb[okb], ddof=1))


# caustic and M^2 fit ----------------------------------------------------

def iso_sampling_plan(z0_mm, z_r_mm, inside=5, outside=5):
    """z planes with ``inside`` points within the Rayleigh range and ``outside`` beyond 2 z_R.

    Inside points are evenly spaced strictly within (z0 - z_R, z0 + z_R);
    outside points alternate sides at 2.5, 3, 3.5, ... z_R from z0.
    """
    if not z_r_mm > 0:
        raise ValueError(f"Rayleigh range must be positive, got {z_r_mm}")
    if inside < 5 or outside < 5:
        raise PlanError(f"ISO sampling needs >= 5 points inside z_R and >= 5 beyond 2 z_R, "
                        f"got {inside} and {outside}")
    zin = z0_mm + np.linspace(-z_r_mm, z_r_mm, inside + 2)[1:-1]
    zout = [z0_mm + (1 if k % 2 == 0 else -1) * (2.5 + 0.5 * (k // 2)) * z_r_mm for k in range(outside)]
    plan = sorted([float(z) for z in zin] + zout)
    _check_iso(plan, z0_mm, z_r_mm, inside, outside)
    return plan


def _check_iso(zs, z0, zr, inside=5, outside=5):
    zs = np.asarray(zs, dtype=float)
    n_in = int(np.sum(np.abs(zs - z0) < zr))
    n_out = int(np.sum(np.abs(zs - z0) > 2 * zr))
    return n_in >= inside and n_out >= outside, n_in, n_out


@dataclass(frozen=True)
class CausticRecord:
    z_mm: float
    axis: str
    w_um: float
    sigma_w_um: float
    counts: float


@dataclass(frozen=True)
class CausticScan:
    records: tuple
    wavelength_nm: float
    plan: tuple = ()
    seed: object = None

    def axis(self, axis):
        rs = [r for r in self.records if r.axis == axis]
        return (np.array([r.z_mm for r in rs]), np.array([r.w_um for r in rs]),
                np.array([r.sigma_w_um for r in rs]))

    @property
    def axes(self):
        return sorted({r.axis for r in self.records})

    def iso_satisfied(self, axis, z0_mm, z_r_mm):
        z, _, _ = self.axis(axis)
        return _check_iso(z, z0_mm, z_r_mm)[0]


@dataclass(frozen=True)
class AxisFit:
    a: float
    b: float
    c: float
    m2: float
    sigma_m2: float
    w0_um: float
    z0_mm: float
    z_r_mm: float
    chi2_dof: float
    iso_ok: bool
    covariance: np.ndarray = field(repr=False, default=None)

    def as_dict(self):
        return {"a_um2": self.a, "b_um2_per_mm": self.b, "c_um2_per_mm2": self.c,
                "M2": self.m2, "sigma_M2": self.sigma_m2, "w0_um": self.w0_um,
                "z0_mm": self.z0_mm, "z_R_mm": self.z_r_mm, "chi2_dof": self.chi2_dof,
                "iso_satisfied": self.iso_ok}


@dataclass(frozen=True)
class M2Fit:
    axes: dict
    wavelength_nm: float

    def __getitem__(self, axis) -> AxisFit:
        return self.axes[axis]

    def as_dict(self):
        return {"wavelength_nm": self.wavelength_nm, **{k: v.as_dict() for k, v in self.axes.items()}}


def _fit_axis(z, w, sw, lam_um):
    if z.size < 6:
        raise PlanError(f"M^2 fit needs >= 6 planes per axis, got {z.size}")
    y = w * w
    A = np.vstack([np.ones_like(z), z, z * z]).T
    weighted = np.all(sw > 0)
    sy = 2 * w * sw if weighted else np.ones_like(w)
    Aw = A / sy[:, None]
    yw = y / sy
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    resid = yw - Aw @ coef
    dof = max(1, z.size - 3)
    chi2 = float(resid @ resid) / dof
    cov = np.linalg.inv(Aw.T @ Aw)
    if not weighted:
        cov = cov * chi2
    a, b, c = (float(v) for v in coef)
    disc = a * c - b * b / 4
    if c <= 0 or disc <= 0:
        raise UnphysicalFitError(f"unphysical caustic fit a={a:.4g} b={b:.4g} c={c:.4g}", (a, b, c))
    root = math.sqrt(disc)
    scale = math.pi / lam_um / 1e3  # sqrt(ac - b^2/4) is in um^2/mm
    m2 = scale * root
    grad = scale / (2 * root) * np.array([c, -b / 2, a])
    sigma = float(math.sqrt(max(grad @ cov @ grad, 0.0)))
    z0 = -b / (2 * c)
    w0 = math.sqrt(a - b * b / (4 * c))
    zr = w0 / math.sqrt(c)
    iso = _check_iso(z, z0, zr)[0]
    return AxisFit(a, b, c, m2, sigma, w0, z0, zr, chi2 if weighted else 0.0, iso, cov)


def fit_m2(scan: CausticScan, wavelength_nm=None) -> M2Fit:
    """Weighted quadratic fit of w^2(z) per axis and M^2 = (pi/lambda) sqrt(ac - b^2/4)."""
    lam = scan.wavelength_nm if wavelength_nm is None else wavelength_nm
    out = {}
    for ax in scan.axes:
        z, w, sw = scan.axis(ax)
        out[ax] = _fit_axis(z, w, sw, lam / 1e3)
    return M2Fit(out, lam)


@dataclass(frozen=True)
class CausticPlanes:
    """Mixture marginals at every plane, computed once and reused for noisy scans."""

    z_mm: tuple
    marginals: dict  # (z index, axis) -> array
    coords: dict     # axis -> coordinates
    wavelength_nm: float

    def width(self, i, axis):
        return second_moment_width(self.marginals[(i, axis)], self.coords[axis])


def caustic_planes(beam: MixedBeam, plan, axes=("x", "y")) -> CausticPlanes:
    """Propagate every component to each plane and keep the mixture marginals."""
    zs = tuple(float(z) for z in plan)
    marg = {}
    for fld, w in beam.components:
        for i, z in enumerate(zs):
            g = propagate(fld, z - fld.z_mm)
            for ax in axes:
                marg[(i, ax)] = marg.get((i, ax), 0.0) + w * g.marginal(ax)
    coords = {ax: beam.coords(ax) for ax in axes}
    return CausticPlanes(zs, marg, coords, beam.wavelength_nm)


def scan_planes(planes: CausticPlanes, *, budget=None, seed=0, positions=41, span_w=2.0,
                floor=0.0, efficiency=1.0, resamples=200, method="derivative") -> CausticScan:
    """Caustic widths at stored planes, from second moments or from noisy knife-edge curves.

    With ``budget`` set, each (plane, axis) gets its own seed-derived stream and
    the edge sweeps the centroid +/- ``span_w`` noiseless half-widths.
    """
    axes = sorted({ax for _, ax in planes.marginals})
    records = []
    children = _seed_sequence(seed).spawn(len(planes.z_mm) * len(axes))
    for i, z in enumerate(planes.z_mm):
        for j, ax in enumerate(axes):
            m = planes.marginals[(i, ax)]
            c = planes.coords[ax]
            w_true = second_moment_width(m, c)
            if budget is None:
                records.append(CausticRecord(z, ax, w_true, 0.0, math.inf))
                continue
            mu = float(np.sum(m * c) / np.sum(m))
            pos = np.linspace(mu - span_w * w_true, mu + span_w * w_true, positions)
            curve = _scan_marginal(m, c, z, ax, pos, budget, children[i * len(axes) + j],
                                   floor, efficiency)
            w, sw = width_from_knife_edge(curve, resamples=resamples, method=method)
            records.append(CausticRecord(z, ax, w, sw, float(curve.counts.max())))
    return CausticScan(tuple(records), planes.wavelength_nm, tuple(planes.z_mm), seed)


def mixture_caustic(beam: MixedBeam, plan, *, axes=("x", "y"), **noise) -> CausticScan:
    """Caustic of a mixture; widths come from summed component second moments.

    Keyword arguments (``budget``, ``seed``, ...) switch on noisy knife-edge
    measurement as in ``scan_planes``.
    """
    return scan_planes(caustic_planes(beam, plan, axes), **noise)


def estimate_waist(beam: MixedBeam, axis, *, probe_mm=(-30.0, 0.0, 30.0)):
    """(z0, z_R) from noiseless second moments at three planes, as an alignment pre-scan."""
    planes = caustic_planes(beam, probe_mm, (axis,))
    z = np.array(planes.z_mm)
    w2 = np.array([planes.width(i, axis) ** 2 for i in range(z.size)])
    c, b, a = np.polyfit(z, w2, 2)
    z0 = -b / (2 * c)
    w0 = math.sqrt(max(a - b * b / (4 * c), 1e-12))
    return float(z0), float(w0 / math.sqrt(c))
