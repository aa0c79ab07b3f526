import numpy as np
import pytest

from atomcavity.geometry import (coupling_at, dipole_potential, lock_node_positions, lock_potential,
                                 mode_amplitude, nearest_dipole_antinode, nearest_node_index,
                                 node_z, stark_shift)
from atomcavity.physics import KB, MHZ


def test_mode_amplitude(geom):
    assert mode_amplitude(geom, (0, 0, 0)) == pytest.approx(1.0)
    assert mode_amplitude(geom, (geom.w_cav, 0, 0)) == pytest.approx(np.exp(-1))
    lam = geom.derived_cavity.probe_wavelength
    assert mode_amplitude(geom, (0, 0, lam / 4)) == pytest.approx(0.0, abs=1e-12)


def test_coupling_map(geom, atom):
    assert coupling_at(geom, atom, (0, 0, 0), 0) == pytest.approx(atom.g_max)
    assert coupling_at(geom, atom, (0, 0, 0), 4) / MHZ == pytest.approx(7.8)


def test_potentials(geom):
    assert dipole_potential(geom, (0, 0, 0)) == pytest.approx(-KB * 0.58e-3)
    assert lock_potential(geom, (0, 0, 0)) == 0.0
    z_anti = geom.derived_cavity.lock_wavelength / 4
    assert lock_potential(geom, (0, 0, z_anti)) == pytest.approx(KB * 0.3e-3)
    assert stark_shift(geom, (0, 0, 0)) == 0.0
    # climbing out of either well raises the detuning with positive coefficients
    assert stark_shift(geom, (20e-6, 0, 0)) > 0
    assert stark_shift(geom, (0, 0, 50e-9)) > 0


def test_lock_nodes_sweep_the_coupling_over_the_beat(geom):
    nodes = lock_node_positions(geom, (0.0, geom.beat_period))
    env = np.array([n[2] for n in nodes])
    assert env[0] == pytest.approx(1.0)
    assert env.min() < 0.05
    half = geom.derived_cavity.beat_half_length
    k = int(round(half / geom.node_spacing))
    assert env[k] < 0.1


def test_node_indexing(geom):
    z = node_z(geom, np.arange(-3, 4))
    np.testing.assert_array_equal(nearest_node_index(geom, z + 1e-9), np.arange(-3, 4))
    assert lock_node_positions(geom, (1.0, 0.0)) == []


def test_nearest_dipole_antinode(geom):
    period = geom.trap.dipole_wavelength / 2
    assert nearest_dipole_antinode(geom, 0.4 * period) == 0.0
    assert nearest_dipole_antinode(geom, 1.6 * period) == pytest.approx(2 * period)
    assert dipole_potential(geom, (0, nearest_dipole_antinode(geom, 7.3e-6), 0)) == pytest.approx(-KB * 0.58e-3)


def test_stark_shift_continuous(geom):
    x = np.linspace(-40e-6, 40e-6, 4001)
    z = np.linspace(-2e-6, 2e-6, 4001)
    sx = stark_shift(geom, (x, 0.0, 0.0))
    sz = stark_shift(geom, (0.0, 0.0, z))
    # steps between neighbouring grid points stay a tiny fraction of the full range
    assert np.abs(np.diff(sx)).max() < 1e-2 * np.ptp(sx)
    assert np.abs(np.diff(sz)).max() < 1e-2 * np.ptp(sz)
