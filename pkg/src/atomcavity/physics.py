"""Physical parameters of the caesium atom / high-finesse cavity system.

Every frequency in this module is an angular frequency (rad/s). Conversion
to MHz happens only at the config and CSV boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Mapping, Tuple

import numpy as np
from scipy import constants as sc
from sympy import Rational, S
from sympy.physics.wigner import clebsch_gordan, wigner_6j

from .errors import ValidationError

TWO_PI = 2.0 * np.pi
MHZ = TWO_PI * 1e6  # angular frequency of 1 MHz
KB = sc.k
H = sc.h
CS133_MASS = 132.905451933 * sc.atomic_mass

# Cs D2 quantum numbers: 6S1/2 (J=1/2) -> 6P3/2 (J'=3/2), I = 7/2
NUCLEAR_SPIN = Rational(7, 2)
J_GROUND = Rational(1, 2)
J_EXCITED = Rational(3, 2)
GROUND_F = 4
EXCITED_LEVELS = (3, 4, 5)


@dataclass(frozen=True)
class CavityParams:
    mirror_transmission: float = 1.3e-6
    mirror_loss: float = 1.8e-6
    length: float = 159e-6
    radius_of_curvature: float = 0.05
    probe_wavelength: float = 852e-9
    lock_wavelength: float = 840e-9

    def __post_init__(self):
        for name in ("mirror_transmission", "mirror_loss", "length",
                     "radius_of_curvature", "probe_wavelength", "lock_wavelength"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ValidationError(f"cavity.{name} must be positive, got {value!r}")
        if self.mirror_transmission + self.mirror_loss >= 1:
            raise ValidationError("mirror transmission + loss must be below 1")
        if self.probe_wavelength == self.lock_wavelength:
            raise ValidationError("probe and lock wavelengths must differ (no beat otherwise)")


@dataclass(frozen=True)
class DerivedCavity:
    finesse: float
    fsr: float             # Hz
    kappa: float           # field decay rate, rad/s
    waist: float           # m
    mode_volume: float     # m^3
    beat_half_length: float  # m
    probe_wavelength: float
    lock_wavelength: float
    mirror_fraction: float  # T / [2 (T + A)]


def derive_cavity(params: CavityParams) -> DerivedCavity:
    """Finesse, linewidth and Gaussian-mode geometry of a symmetric two-mirror cavity."""
    L, R = params.length, params.radius_of_curvature
    if not L < 2 * R:
        raise ValidationError(
            f"unstable resonator: length {L:g} m must be shorter than twice the "
            f"radius of curvature ({2 * R:g} m); the g-parameter 1-L/R = {1 - L / R:.3f} "
            "lies outside (-1, 1)"
        )
    losses = params.mirror_transmission + params.mirror_loss
    finesse = np.pi / losses
    fsr = sc.c / (2 * L)
    kappa = TWO_PI * fsr / (2 * finesse)
    lam = params.probe_wavelength
    waist = np.sqrt(lam / np.pi * np.sqrt(L * (2 * R - L)) / 2)
    lp, ll = params.probe_wavelength, params.lock_wavelength
    return DerivedCavity(
        finesse=finesse,
        fsr=fsr,
        kappa=kappa,
        waist=waist,
        mode_volume=np.pi * waist**2 * L / 4,
        beat_half_length=abs(ll * lp / (4 * (lp - ll))),
        probe_wavelength=lp,
        lock_wavelength=ll,
        mirror_fraction=params.mirror_transmission / (2 * losses),
    )


def cooperativity(g: float, kappa: float, gamma: float) -> float:
    """Single-atom cooperativity C1 = g^2 / (2 kappa gamma)."""
    if kappa <= 0 or gamma <= 0:
        raise ValidationError("kappa and gamma must be positive")
    return g**2 / (2 * kappa * gamma)


def coupling_for_mF(g_max, mF):
    """Coupling on the F=4, m_F -> F'=5, m_F pi line.

    Relative line strength sqrt(25 - m_F^2)/5, normalised so m_F=0 gives g_max.
    Works elementwise on arrays of m_F.
    """
    m = np.asarray(mF)
    if np.any(np.abs(m) > GROUND_F) or np.any(m != np.round(m)):
        raise ValidationError(f"m_F must be an integer with |m_F| <= 4, got {mF!r}")
    out = g_max * np.sqrt(25.0 - m.astype(float) ** 2) / 5.0
    return float(out) if out.ndim == 0 else out


# --- angular momentum algebra ------------------------------------------------


@lru_cache(maxsize=None)
def _reduced_factor(F: int, Fp: int) -> float:
    """|<F||er||F'>|^2 / |<J||er||J'>|^2 for the D2 line."""
    six_j = wigner_6j(J_GROUND, J_EXCITED, 1, Fp, F, NUCLEAR_SPIN)
    return float((2 * Fp + 1) * (2 * J_GROUND + 1) * six_j**2)


@lru_cache(maxsize=None)
def dipole_strength(F: int, m: int, Fp: int, mp: int) -> float:
    """Squared dipole matrix element |<F m| e r_q |F' m'>|^2, q = m - m'.

    In units of the squared reduced J matrix element.
    """
    q = m - mp
    if abs(q) > 1 or abs(m) > F or abs(mp) > Fp:
        return 0.0
    cg = clebsch_gordan(S(Fp), S(1), S(F), S(mp), S(q), S(m))
    return _reduced_factor(F, Fp) * float(cg) ** 2


def relative_pi_coupling(Fp: int, mF: int) -> float:
    """g(F=4,m_F -> F',m_F) relative to the strongest pi line (F'=5, m_F=0)."""
    if abs(mF) > GROUND_F:
        raise ValidationError(f"|m_F| must be <= 4, got {mF}")
    ref = dipole_strength(GROUND_F, 0, 5, 0)
    return float(np.sqrt(dipole_strength(GROUND_F, mF, Fp, mF) / ref))


def branching_ratios(excited_level: int, mF_weights=None) -> Tuple[float, float]:
    """Decay probabilities (to F=3, to F=4) of the excited hyperfine level F'.

    Sums |<F m| d_q |F' m'>|^2 over every Zeeman decay channel, for each excited
    sublevel m' reached by pi excitation out of F=4, and averages over those
    sublevels weighted by their excitation strength.
    """
    if excited_level not in EXCITED_LEVELS:
        raise ValidationError(f"excited level must be one of {EXCITED_LEVELS}, got {excited_level!r}")
    Fp = excited_level
    weights = np.full(9, 1 / 9) if mF_weights is None else np.asarray(mF_weights, float)
    pop = {}
    for w, m in zip(weights, range(-4, 5)):
        if abs(m) <= Fp:
            pop[m] = pop.get(m, 0.0) + w * dipole_strength(GROUND_F, m, Fp, m)
    if sum(pop.values()) == 0:
        pop = {m: 1.0 for m in range(-Fp, Fp + 1)}
    to_f3 = to_f4 = 0.0
    for mp, w in pop.items():
        per_F = {
            F: sum(dipole_strength(F, m, Fp, mp) for m in range(-F, F + 1))
            for F in (3, 4)
        }
        total = per_F[3] + per_F[4]
        to_f3 += w * per_F[3] / total
        to_f4 += w * per_F[4] / total
    norm = to_f3 + to_f4
    p3 = to_f3 / norm
    return float(p3), float(1.0 - p3)


@dataclass(frozen=True)
class AtomStructure:
    gamma: float = TWO_PI * 2.6e6
    g_max: float = TWO_PI * 13e6
    mass: float = CS133_MASS
    # transition offsets of F'=3,4,5 relative to F=4 -> F'=5 (rad/s)
    excited_hyperfine_detunings: Mapping[int, float] = field(
        default_factory=lambda: {5: 0.0, 4: -TWO_PI * 251e6, 3: -TWO_PI * 451e6}
    )
    per_mF_coupling: Mapping[int, float] = field(default_factory=dict)
    branching: Mapping[int, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.gamma <= 0 or self.g_max < 0 or self.mass <= 0:
            raise ValidationError("gamma, mass must be positive and g_max non-negative")
        if not self.per_mF_coupling:
            object.__setattr__(
                self, "per_mF_coupling",
                {m: coupling_for_mF(self.g_max, m) for m in range(-4, 5)},
            )
        if not self.branching:
            object.__setattr__(
                self, "branching", {Fp: branching_ratios(Fp) for Fp in EXCITED_LEVELS}
            )

    def level_coupling(self, Fp: int, mF: int) -> float:
        """pi-transition coupling F=4,m_F -> F',m_F at the mode maximum."""
        return self.g_max * relative_pi_coupling(Fp, mF)


def cesium_d2(g_max_MHz=13.0, gamma_MHz=2.6, f4_f5_splitting_MHz=251.0,
              f3_f4_splitting_MHz=200.0) -> AtomStructure:
    offsets: Dict[int, float] = {
        5: 0.0,
        4: -TWO_PI * f4_f5_splitting_MHz * 1e6,
        3: -TWO_PI * (f4_f5_splitting_MHz + f3_f4_splitting_MHz) * 1e6,
    }
    return AtomStructure(
        gamma=TWO_PI * gamma_MHz * 1e6,
        g_max=TWO_PI * g_max_MHz * 1e6,
        excited_hyperfine_detunings=offsets,
    )


@dataclass(frozen=True)
class TrapParams:
    dipole_wavelength: float = 1030e-9
    dipole_waist: float = 34e-6
    dipole_depth: float = KB * 0.58e-3
    lock_potential_height: float = KB * 0.3e-3

    def __post_init__(self):
        for name in ("dipole_wavelength", "dipole_waist", "dipole_depth"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"trap.{name} must be positive")
        if self.lock_potential_height < 0:
            raise ValidationError("trap.lock_potential_height must be non-negative")


def trap_frequencies(trap: TrapParams, mass: float = CS133_MASS) -> Tuple[float, float]:
    """(radial, axial) angular oscillation frequencies of an ideal Gaussian standing-wave trap."""
    k = TWO_PI / trap.dipole_wavelength
    axial = k * np.sqrt(2 * trap.dipole_depth / mass)
    radial = np.sqrt(4 * trap.dipole_depth / (mass * trap.dipole_waist**2))
    return radial, axial
