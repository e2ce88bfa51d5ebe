"""
Joint spectral amplitude of the pair, spectral filtering, heralded spatial
state and coincidence-counting arithmetic.

Grids are uniform in 1/lambda; arrays are indexed [i_H, i_V].
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.integrate import trapezoid

from .modesolver import propagation_constant
from .phasematch import ModeSet, inverse_lambda_grid, label_str, pm_amplitude, pump_wavelength


class DegenerateStateError(ValueError):
    """The spectrum carries no intensity, so no state can be formed."""


@dataclass(frozen=True)
class PumpEnvelope:
    """Transform-limited pump spectrum, Gaussian in wavenumber."""

    center_nm: float = 399.9
    fwhm_nm: float = 1.0

    def __post_init__(self):
        if not self.fwhm_nm > 0:
            raise ValueError(f"pump FWHM must be positive, got {self.fwhm_nm}")
        if not self.center_nm > self.fwhm_nm / 2:
            raise ValueError(f"pump centre {self.center_nm} nm is not positive")

    @property
    def sigma0(self):
        """Centre wavenumber in 1/nm."""
        return 1.0 / self.center_nm

    @property
    def sigma_fwhm(self):
        """Intensity FWHM in 1/nm, the wavenumber span of centre -/+ FWHM/2."""
        return 1.0 / (self.center_nm - self.fwhm_nm / 2) - 1.0 / (self.center_nm + self.fwhm_nm / 2)


def pump_amplitude(env: PumpEnvelope, lam_h_nm, lam_v_nm):
    """Pump amplitude at the sum frequency of (lam_H, lam_V); peak 1, flat phase."""
    lh = np.asarray(lam_h_nm, dtype=float)
    lv = np.asarray(lam_v_nm, dtype=float)
    if np.any(lh <= 0) or np.any(lv <= 0):
        raise ValueError("wavelengths must be positive")
    s = 1.0 / lh + 1.0 / lv
    a = np.exp(-2.0 * math.log(2.0) * ((s - env.sigma0) / env.sigma_fwhm) ** 2).astype(complex)
    return complex(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class PumpExcitation:
    """Coherent superposition of pump modes, ``((label, c), ...)`` with sum |c|^2 = 1.

    ``normalized=False`` skips the norm check (used to probe linearity).
    """

    amplitudes: tuple
    normalized: bool = True

    def __post_init__(self):
        amps = tuple((tuple(int(v) for v in lab), complex(c)) for lab, c in self.amplitudes)
        object.__setattr__(self, "amplitudes", amps)
        labels = [lab for lab, _ in amps]
        if len(set(labels)) != len(labels):
            raise ValueError(f"repeated pump labels in excitation: {labels}")
        if self.normalized:
            norm = sum(abs(c) ** 2 for _, c in amps)
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"excitation norm {norm:.12g} differs from 1")

    @classmethod
    def single(cls, label=(0, 0)):
        return cls((((label), 1.0),))

    @classmethod
    def from_weights(cls, weights):
        """Normalise a {label: amplitude} mapping (or pairs) into an excitation."""
        items = list(weights.items()) if isinstance(weights, dict) else list(weights)
        norm = math.sqrt(sum(abs(complex(c)) ** 2 for _, c in items))
        if norm == 0:
            raise ValueError("excitation has zero norm")
        return cls(tuple((lab, complex(c) / norm) for lab, c in items))

    @property
    def labels(self):
        return [lab for lab, _ in self.amplitudes]

    def scaled(self, factor):
        return PumpExcitation(tuple((lab, c * factor) for lab, c in self.amplitudes), normalized=False)


def _freeze(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class JointSpectrum:
    """Per-channel complex amplitudes A_mn(lam_H, lam_V); channel key is (H label, V label)."""

    lam_h_nm: np.ndarray
    lam_v_nm: np.ndarray
    channels: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lh = _freeze(np.asarray(self.lam_h_nm, dtype=float))
        lv = _freeze(np.asarray(self.lam_v_nm, dtype=float))
        object.__setattr__(self, "lam_h_nm", lh)
        object.__setattr__(self, "lam_v_nm", lv)
        chans = {}
        for key, a in self.channels.items():
            a = np.asarray(a, dtype=complex)
            if a.shape != (lh.size, lv.size):
                raise ValueError(f"channel {key} has shape {a.shape}, grids are {(lh.size, lv.size)}")
            chans[(tuple(key[0]), tuple(key[1]))] = _freeze(a)
        object.__setattr__(self, "channels", chans)

    @property
    def sigma_h(self):
        """1/lam_H in 1/um."""
        return 1e3 / self.lam_h_nm

    @property
    def sigma_v(self):
        return 1e3 / self.lam_v_nm

    @property
    def h_labels(self):
        return sorted({k[0] for k in self.channels})

    @property
    def v_labels(self):
        return sorted({k[1] for k in self.channels})

    def replace_channels(self, channels, **meta):
        return JointSpectrum(self.lam_h_nm, self.lam_v_nm, channels, {**self.meta, **meta})

    def channel_intensity(self):
        """Integrated |A_mn|^2 per channel over the 1/lambda plane."""
        return {k: _integrate(np.abs(a) ** 2, self.sigma_h, self.sigma_v) for k, a in self.channels.items()}

    def total_intensity(self):
        return float(sum(self.channel_intensity().values()))


def _integrate(f, sh, sv):
    # grids descend in 1/lambda when wavelengths ascend; report positive areas
    return abs(float(trapezoid(trapezoid(f, sv, axis=1), sh)))


def _check_inverse_grid(lam_nm, name):
    lam = np.asarray(lam_nm, dtype=float)
    if lam.ndim != 1 or lam.size < 2:
        raise ValueError(f"{name} grid must be one-dimensional with at least 2 points")
    s = 1.0 / lam
    step = np.diff(s)
    if not np.allclose(step, step[0], rtol=1e-6, atol=0):
        raise ValueError(f"{name} grid must be uniform in 1/lambda")
    return lam


def build_jsa(excitation: PumpExcitation, env: PumpEnvelope, modes: ModeSet,
              lam_h_nm=None, lam_v_nm=None, *, h_labels=None, v_labels=None, threads=1):
    """Joint spectral amplitude of every (H mode, V mode) channel.

    A_mn = sum_p c_p Gamma_pmn alpha(lam_H, lam_V) sinc(dbeta_pmn L / 2), with
    the pump modes summed coherently and channels kept apart.

    Parameters
    ----------
    excitation : PumpExcitation
        Pump-mode amplitudes; labels must exist in ``modes.pump``.
    env : PumpEnvelope
    modes : ModeSet
        Solved modes carrying the poling period and length.
    lam_h_nm, lam_v_nm : array_like, optional
        Grids uniform in 1/lambda; default 512 points over 780-820 nm.
    h_labels, v_labels : list, optional
        Restrict the down-converted mode sets.

    Returns
    -------
    JointSpectrum
    """
    lam_h = _check_inverse_grid(inverse_lambda_grid(780.0, 820.0, 512) if lam_h_nm is None else lam_h_nm, "lambda_H")
    lam_v = _check_inverse_grid(inverse_lambda_grid(780.0, 820.0, 512) if lam_v_nm is None else lam_v_nm, "lambda_V")
    h_labels = list(modes.h) if h_labels is None else [tuple(v) for v in h_labels]
    v_labels = list(modes.v) if v_labels is None else [tuple(v) for v in v_labels]
    for lab in excitation.labels:
        modes.mode("P", lab)
    period = modes.geom.poling_period_um
    LH, LV = lam_h[:, None], lam_v[None, :]
    alpha = pump_amplitude(env, LH, LV)
    lam_p_um = pump_wavelength(LH, LV) / 1e3
    beta_p = {lab: propagation_constant(modes.mode("P", lab), lam_p_um) for lab, _ in excitation.amplitudes}
    beta_h = {m: propagation_constant(modes.mode("H", m), lam_h / 1e3)[:, None] for m in h_labels}
    beta_v = {n: propagation_constant(modes.mode("V", n), lam_v / 1e3)[None, :] for n in v_labels}
    K = 2 * np.pi / period

    def channel(key):
        m, n = key
        acc = np.zeros((lam_h.size, lam_v.size), dtype=complex)
        for lab, c in excitation.amplitudes:
            gamma = modes.overlap(lab, m, n)
            if c == 0 or gamma == 0:
                continue
            db = beta_p[lab] - beta_h[m] - beta_v[n] - K
            acc += c * gamma * pm_amplitude(db, modes.length_mm)
        return key, acc * alpha

    keys = [(m, n) for m in h_labels for n in v_labels]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        chans = dict(ex.map(channel, keys))
    meta = {
        "pump_center_nm": env.center_nm, "pump_fwhm_nm": env.fwhm_nm,
        "excitation": [[label_str(lab), c.real, c.imag] for lab, c in excitation.amplitudes],
        "poling_period_um": period, "length_mm": modes.length_mm,
    }
    return JointSpectrum(lam_h, lam_v, chans, meta)


def jsi_map(js: JointSpectrum):
    """Joint spectral intensity summed over channels."""
    out = np.zeros((js.lam_h_nm.size, js.lam_v_nm.size))
    for a in js.channels.values():
        out += a.real**2 + a.imag**2
    return out


@dataclass(frozen=True)
class Island:
    center_h_nm: float
    center_v_nm: float
    weight: float
    fraction: float
    # index bounds, inclusive: (iH0, iH1, iV0, iV1)
    bbox: tuple
    bbox_nm: tuple

    def as_dict(self):
        return {"center_h_nm": self.center_h_nm, "center_v_nm": self.center_v_nm,
                "weight": self.weight, "fraction": self.fraction,
                "bbox": list(self.bbox), "bbox_nm": list(self.bbox_nm)}


def detect_islands(jsi, threshold=0.05, lam_h_nm=None, lam_v_nm=None):
    """4-connected regions above ``threshold`` x max, heaviest first.

    ``jsi`` may be a JointSpectrum (grids taken from it) or an intensity
    array with explicit grids (index coordinates if omitted).
    """
    if isinstance(jsi, JointSpectrum):
        lam_h_nm, lam_v_nm = jsi.lam_h_nm, jsi.lam_v_nm
        jsi = jsi_map(jsi)
    jsi = np.asarray(jsi, dtype=float)
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    lh = np.arange(jsi.shape[0], dtype=float) if lam_h_nm is None else np.asarray(lam_h_nm, dtype=float)
    lv = np.arange(jsi.shape[1], dtype=float) if lam_v_nm is None else np.asarray(lam_v_nm, dtype=float)
    peak = jsi.max() if jsi.size else 0.0
    if not peak > 0:
        return []
    mask = jsi > threshold * peak
    labels, count = ndimage.label(mask)  # default structure is 4-connected in 2D
    total = float(jsi[mask].sum())
    islands = []
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        sub = np.where(labels[sl] == k, jsi[sl], 0.0)
        w = float(sub.sum())
        ih = lh[sl[0]]
        iv = lv[sl[1]]
        ch = float((sub.sum(axis=1) * ih).sum() / w)
        cv = float((sub.sum(axis=0) * iv).sum() / w)
        box = (sl[0].start, sl[0].stop - 1, sl[1].start, sl[1].stop - 1)
        box_nm = (float(lh[box[0]]), float(lh[box[1]]), float(lv[box[2]]), float(lv[box[3]]))
        islands.append(Island(ch, cv, w, w / total, box, box_nm))
    islands.sort(key=lambda i: -i.weight)
    return islands


@dataclass(frozen=True)
class SpectralFilter:
    """Band-pass filter on one arm; ``fwhm_nm = inf`` passes everything."""

    arm: str
    center_nm: float
    fwhm_nm: float
    shape: str = "top-hat"

    def __post_init__(self):
        if self.arm not in ("H", "V"):
            raise ValueError(f"filter arm must be 'H' or 'V', got {self.arm!r}")
        if not self.fwhm_nm > 0:
            raise ValueError(f"filter FWHM must be positive, got {self.fwhm_nm}")
        if self.shape not in ("top-hat", "gaussian"):
            raise ValueError(f"filter shape must be 'top-hat' or 'gaussian', got {self.shape!r}")

    def transmission(self, lam_nm):
        """Intensity transmission."""
        lam = np.asarray(lam_nm, dtype=float)
        if math.isinf(self.fwhm_nm):
            return np.ones_like(lam)
        u = (lam - self.center_nm) / self.fwhm_nm
        if self.shape == "top-hat":
            return (np.abs(u) <= 0.5).astype(float)
        return np.exp(-4.0 * math.log(2.0) * u * u)


def apply_filter(js: JointSpectrum, filt: SpectralFilter) -> JointSpectrum:
    """Multiply every channel by the filter's amplitude transmission along its arm."""
    if filt.arm == "H":
        t = np.sqrt(filt.transmission(js.lam_h_nm))[:, None]
    else:
        t = np.sqrt(filt.transmission(js.lam_v_nm))[None, :]
    filters = list(js.meta.get("filters", [])) + [
        {"arm": filt.arm, "center_nm": filt.center_nm, "fwhm_nm": filt.fwhm_nm, "shape": filt.shape}]
    return js.replace_channels({k: a * t for k, a in js.channels.items()}, filters=filters)


@dataclass(frozen=True)
class HeraldedState:
    arm: str
    labels: list
    rho: np.ndarray
    purity: float

    def population(self, label):
        return float(self.rho[self.labels.index(tuple(label)), self.labels.index(tuple(label))].real)

    @property
    def dominant(self):
        i = int(np.argmax(np.diag(self.rho).real))
        return self.labels[i]

    def eigen(self):
        """Eigen-decomposition (weights descending, vectors as columns)."""
        w, v = np.linalg.eigh(self.rho)
        order = np.argsort(w)[::-1]
        return np.clip(w[order], 0.0, None), v[:, order]

    def as_dict(self):
        return {
            "arm": self.arm, "labels": [label_str(l) for l in self.labels],
            "rho_real": self.rho.real.tolist(), "rho_imag": self.rho.imag.tolist(),
            "purity": self.purity, "dominant": label_str(self.dominant),
            "populations": {label_str(l): self.population(l) for l in self.labels},
        }


def heralded_spatial_state(js: JointSpectrum, arm="H") -> HeraldedState:
    """Reduced spatial density matrix of the heralded arm.

    The conjugate arm's mode index and both spectral variables are traced out;
    the spectral integrals use the trapezoid rule in 1/lambda.
    """
    if arm not in ("H", "V"):
        raise ValueError(f"heralded arm must be 'H' or 'V', got {arm!r}")
    hl, vl = js.h_labels, js.v_labels
    # trapezoid weights on a uniform grid: half weight at the ends
    wh = np.full(js.sigma_h.size, abs(js.sigma_h[1] - js.sigma_h[0]))
    wh[[0, -1]] *= 0.5
    wv = np.full(js.sigma_v.size, abs(js.sigma_v[1] - js.sigma_v[0]))
    wv[[0, -1]] *= 0.5
    W = np.sqrt(wh[:, None] * wv[None, :])
    zero = np.zeros((js.lam_h_nm.size, js.lam_v_nm.size), dtype=complex)
    if arm == "H":
        labels, others = hl, vl
        get = lambda a, b: js.channels.get((a, b), zero)
    else:
        labels, others = vl, hl
        get = lambda a, b: js.channels.get((b, a), zero)
    flat = np.array([[(get(a, b) * W).ravel() for a in labels] for b in others])  # [other, mode, cell]
    rho = np.zeros((len(labels), len(labels)), dtype=complex)
    for block in flat:
        rho += block @ block.conj().T
    tr = float(np.trace(rho).real)
    if not tr > 0:
        raise DegenerateStateError("spectrum has zero total intensity; no heralded state")
    rho = rho / tr
    rho = 0.5 * (rho + rho.conj().T)
    purity = float(np.real(np.trace(rho @ rho)))
    return HeraldedState(arm, list(labels), rho, min(purity, 1.0))


@dataclass(frozen=True)
class CountingStats:
    singles_h_hz: float
    singles_v_hz: float
    true_coincidences_hz: float
    accidentals_hz: float
    ratio: float

    @property
    def coincidences_hz(self):
        return self.true_coincidences_hz + self.accidentals_hz

    def as_dict(self):
        return {"singles_h_hz": self.singles_h_hz, "singles_v_hz": self.singles_v_hz,
                "true_coincidences_hz": self.true_coincidences_hz,
                "accidentals_hz": self.accidentals_hz, "coincidences_hz": self.coincidences_hz,
                "ratio": self.ratio}


def counting_statistics(pair_rate_hz, eta_h, eta_v, dark_h_hz=0.0, dark_v_hz=0.0,
                        window_s=6e-9, filtered_arm="V") -> CountingStats:
    """Singles, true and accidental coincidences, and the coincidence-to-singles ratio.

    The ratio is taken against the singles of ``filtered_arm``.
    """
    for name, eta in (("eta_h", eta_h), ("eta_v", eta_v)):
        if not 0.0 <= eta <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {eta}")
    for name, r in (("pair rate", pair_rate_hz), ("dark_h", dark_h_hz), ("dark_v", dark_v_hz),
                    ("window", window_s)):
        if r < 0:
            raise ValueError(f"{name} must be non-negative, got {r}")
    sh = pair_rate_hz * eta_h + dark_h_hz
    sv = pair_rate_hz * eta_v + dark_v_hz
    c_true = pair_rate_hz * eta_h * eta_v
    c_acc = sh * sv * window_s
    ref = sv if filtered_arm == "V" else sh
    ratio = (c_true + c_acc) / ref if ref > 0 else 0.0
    return CountingStats(sh, sv, c_true, c_acc, ratio)


def solve_pair_rate(coincidences_hz, ratio, window_s=6e-9, dark_hz=0.0):
    """Pair rate and common efficiency reproducing observed coincidences and ratio.

    Assumes equal efficiencies and equal dark rates in both arms, so both
    singles rates equal coincidences / ratio. Returns (pair_rate_hz, eta).
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    singles = coincidences_hz / ratio
    c_acc = singles * singles * window_s
    if c_acc >= coincidences_hz or singles <= dark_hz:
        raise ValueError("observations leave no room for true coincidences")
    eta = (coincidences_hz - c_acc) / (singles - dark_hz)
    if eta > 1:
        raise ValueError(f"observations imply efficiency {eta:.3g} > 1")
    return (singles - dark_hz) / eta, eta
