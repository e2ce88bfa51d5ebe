"""
Bulk crystal dispersion from Sellmeier coefficient sets.

Wavelengths are vacuum wavelengths in micrometres. Three formula families
are supported:

``single_pole_ir``
    n^2 = A + B / (1 - (C/lam)^2) - D lam^2, coefficients [A, B, C, D]
``double_pole``
    n^2 = A + B / (lam^2 - C) + D / (lam^2 - E), coefficients [A, B, C, D, E]
``constant``
    n^2 = A, coefficients [A]
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FORMULAS = ("single_pole_ir", "double_pole", "constant")
_NCOEF = {"single_pole_ir": 4, "double_pole": 5, "constant": 1}


class WavelengthRangeError(ValueError):
    """Wavelength outside the validity interval of a dispersion model."""


@dataclass(frozen=True)
class SellmeierSet:
    axis: str
    coefficients: tuple
    formula: str = "single_pole_ir"
    valid_min_um: float = 0.35
    valid_max_um: float = 1.1
    citation: str = ""

    def __post_init__(self):
        if self.formula not in FORMULAS:
            raise ValueError(f"unknown Sellmeier formula {self.formula!r}")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if len(self.coefficients) != _NCOEF[self.formula]:
            raise ValueError(
                f"formula {self.formula!r} takes {_NCOEF[self.formula]} coefficients, "
                f"got {len(self.coefficients)}"
            )
        if not self.valid_min_um < self.valid_max_um:
            raise ValueError("validity range must satisfy min < max")

    def check_range(self, lam_um):
        lam = np.asarray(lam_um, dtype=float)
        bad = (lam < self.valid_min_um) | (lam > self.valid_max_um) | ~np.isfinite(lam)
        if np.any(bad):
            offender = float(lam[bad].flat[0]) if lam.ndim else float(lam)
            raise WavelengthRangeError(
                f"wavelength {offender:.6g} um outside [{self.valid_min_um}, "
                f"{self.valid_max_um}] um of the {self.axis}-axis set"
            )
        return lam

    def _eps(self, lam):
        c = self.coefficients
        if self.formula == "constant":
            return np.full_like(lam, c[0]), np.zeros_like(lam)
        l2 = lam * lam
        if self.formula == "single_pole_ir":
            A, B, C, D = c
            u = 1.0 - C * C / l2
            eps = A + B / u - D * l2
            deps = -2.0 * B * C * C / (lam**3 * u * u) - 2.0 * D * lam
        else:
            A, B, C, D, E = c
            eps = A + B / (l2 - C) + D / (l2 - E)
            deps = -2.0 * lam * (B / (l2 - C) ** 2 + D / (l2 - E) ** 2)
        return eps, deps


def refractive_index(sset: SellmeierSet, lam_um):
    """Phase index of one crystal axis at vacuum wavelength ``lam_um``."""
    lam = sset.check_range(lam_um)
    eps, _ = sset._eps(lam)
    n = np.sqrt(eps)
    return float(n) if n.ndim == 0 else n


def index_derivative(sset: SellmeierSet, lam_um):
    """Analytic dn/dlambda in 1/um."""
    lam = sset.check_range(lam_um)
    eps, deps = sset._eps(lam)
    d = deps / (2.0 * np.sqrt(eps))
    return float(d) if d.ndim == 0 else d


def group_index(sset: SellmeierSet, lam_um):
    """Group index n - lambda dn/dlambda."""
    lam = sset.check_range(lam_um)
    eps, deps = sset._eps(lam)
    n = np.sqrt(eps)
    ng = n - lam * deps / (2.0 * n)
    return float(ng) if ng.ndim == 0 else ng


# Flux-grown KTP, room temperature. Used as fixed coefficients for the
# stabilised operating point; no thermo-optic correction.
FAN_1987 = "T. Y. Fan et al., Appl. Opt. 26, 2390 (1987), flux-grown KTP"
KATO_2002 = "K. Kato and E. Takaoka, Appl. Opt. 41, 5040 (2002)"

KTP_FAN = {
    "x": SellmeierSet("x", (2.1146, 0.89188, 0.20861, 0.01320), "single_pole_ir", 0.35, 1.1, FAN_1987),
    "y": SellmeierSet("y", (2.1518, 0.87862, 0.21801, 0.01327), "single_pole_ir", 0.35, 1.1, FAN_1987),
    "z": SellmeierSet("z", (2.3136, 1.00012, 0.23831, 0.01679), "single_pole_ir", 0.35, 1.1, FAN_1987),
}

KTP_KATO = {
    "x": SellmeierSet("x", (3.29100, 0.04140, 0.03978, 9.35522, 31.45571), "double_pole", 0.43, 3.54, KATO_2002),
    "y": SellmeierSet("y", (3.45018, 0.04341, 0.04597, 16.98825, 39.43799), "double_pole", 0.43, 3.54, KATO_2002),
    "z": SellmeierSet("z", (4.59423, 0.06206, 0.04763, 110.80672, 86.12171), "double_pole", 0.43, 3.54, KATO_2002),
}
