"""Spatial structure of the cavity mode, dipole trap and lock-laser lattice.

Axes: y is the dipole-trap (transport) axis, z the cavity axis, x the axis
transverse to both. Positions are in metres; every function accepts either
scalars or broadcastable numpy arrays for x, y, z.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np

from .physics import (H, TWO_PI, AtomStructure, DerivedCavity, TrapParams,
                      coupling_for_mF)


class Position(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class FieldGeometry:
    derived_cavity: DerivedCavity
    trap: TrapParams
    stark_coeff_dipole: float = 1.0 / H   # Hz per J of potential
    stark_coeff_lock: float = 1.0 / H
    node_origin: float = 0.0

    @property
    def k_probe(self):
        return TWO_PI / self.derived_cavity.probe_wavelength

    @property
    def k_lock(self):
        return TWO_PI / self.derived_cavity.lock_wavelength

    @property
    def k_dipole(self):
        return TWO_PI / self.trap.dipole_wavelength

    @property
    def w_cav(self):
        return self.derived_cavity.waist

    @property
    def node_spacing(self):
        return self.derived_cavity.lock_wavelength / 2

    @property
    def beat_period(self):
        return 2 * self.derived_cavity.beat_half_length


def _xyz(pos):
    x, y, z = pos
    return np.asarray(x, float), np.asarray(y, float), np.asarray(z, float)


def mode_amplitude(geom: FieldGeometry, pos):
    """TEM00 field amplitude, 1 at the beam centre on the probe antinode at node_origin."""
    x, y, z = _xyz(pos)
    return np.cos(geom.k_probe * (z - geom.node_origin)) * np.exp(-(x**2 + y**2) / geom.w_cav**2)


def coupling_at(geom: FieldGeometry, atom: AtomStructure, pos, mF):
    return coupling_for_mF(atom.g_max, mF) * np.abs(mode_amplitude(geom, pos))


def lock_node_positions(geom: FieldGeometry, z_range: Tuple[float, float]) -> List[Tuple[int, float, float]]:
    """Lock-lattice nodes inside z_range as (index, z, |probe amplitude| at the node).

    Index 0 is the node at node_origin.
    """
    lo, hi = z_range
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        return []
    d = geom.node_spacing
    first = int(np.ceil((lo - geom.node_origin) / d - 1e-9))
    last = int(np.floor((hi - geom.node_origin) / d + 1e-9))
    nodes = []
    for k in range(first, last + 1):
        z = geom.node_origin + k * d
        nodes.append((k, z, float(abs(np.cos(geom.k_probe * (z - geom.node_origin))))))
    return nodes


def node_z(geom: FieldGeometry, index):
    return geom.node_origin + np.asarray(index) * geom.node_spacing


def nearest_node_index(geom: FieldGeometry, z):
    return np.rint((np.asarray(z) - geom.node_origin) / geom.node_spacing).astype(int)


def dipole_potential(geom: FieldGeometry, pos):
    """Standing-wave dipole trap along y; attractive, -U0 at the origin."""
    x, y, _ = _xyz(pos)
    t = geom.trap
    return -t.dipole_depth * np.exp(-2 * x**2 / t.dipole_waist**2) * np.cos(geom.k_dipole * y) ** 2


def lock_potential(geom: FieldGeometry, pos):
    """Repulsive lock-laser lattice along z, zero at its nodes."""
    x, y, z = _xyz(pos)
    return (geom.trap.lock_potential_height
            * np.sin(geom.k_lock * (z - geom.node_origin)) ** 2
            * np.exp(-2 * (x**2 + y**2) / geom.w_cav**2))


def stark_shift(geom: FieldGeometry, pos):
    """Shift (Hz) of the probe-atom detuning relative to an atom at (0, 0, node_origin).

    Added to delta_pa / 2 pi. With positive coefficients an atom climbing out
    of either potential sees a larger probe-atom detuning.
    """
    ref = (0.0, 0.0, geom.node_origin)
    d_dip = dipole_potential(geom, pos) - dipole_potential(geom, ref)
    d_lock = lock_potential(geom, pos) - lock_potential(geom, ref)
    return geom.stark_coeff_dipole * d_dip + geom.stark_coeff_lock * d_lock


def nearest_dipole_antinode(geom: FieldGeometry, y):
    """Snap a transport position to the closest dipole-lattice antinode (conveyor-belt site)."""
    period = geom.trap.dipole_wavelength / 2
    return np.rint(np.asarray(y, float) / period) * period
