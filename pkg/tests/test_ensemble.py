from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from atomcavity.ensemble import (EnsembleSpec, TransmissionTable, averaged_transmission,
                                 ensemble_transmission, fit_temperature, radial_truncation,
                                 sample_positions)
from atomcavity.errors import BracketError, UntrappedError, ValidationError
from atomcavity.geometry import node_z
from atomcavity.physics import KB, MHZ, cesium_d2
from atomcavity.steady_state import transmission

PIN0 = tuple(np.eye(9)[4])


def test_spec_validation():
    with pytest.raises(ValidationError):
        EnsembleSpec(temperature=0.0)
    with pytest.raises(ValidationError):
        EnsembleSpec(1e-4, mF_weights=(0.5,) * 9)
    with pytest.raises(ValidationError):
        EnsembleSpec(1e-4, n_samples=0)


def test_samples_deterministic(geom):
    spec = EnsembleSpec(1.7e-4, n_samples=1500, master_seed=3)
    a, b = sample_positions(spec, geom), sample_positions(spec, geom)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.z, b.z)
    c = sample_positions(replace(spec, master_seed=4), geom)
    assert not np.array_equal(a.x, c.x)


def test_prefix_stability(geom):
    # chunked substreams: a longer run extends a shorter one
    a = sample_positions(EnsembleSpec(1.7e-4, n_samples=700), geom)
    b = sample_positions(EnsembleSpec(1.7e-4, n_samples=1400), geom)
    np.testing.assert_array_equal(a.y, b.y[:700])


def test_zero_temperature_collapse(geom):
    s = sample_positions(EnsembleSpec(1e-9), geom)
    assert np.abs(s.y).max() < 10e-9
    assert np.abs(s.z).max() < 10e-9
    # the radial well is soft; its thermal width at 1 nK is ~22 nm, so test at 10 pK
    s = sample_positions(EnsembleSpec(1e-11), geom)
    assert np.abs(s.x).max() < 10e-9


def test_radial_rms_matches_quadrature(geom):
    T = 1.7e-4
    kT = KB * T
    L = radial_truncation(geom)
    x = np.linspace(-L, L, 20001)
    U = geom.trap.dipole_depth * (1 - np.exp(-2 * x**2 / geom.trap.dipole_waist**2))
    p = np.exp(-U / kT)
    rms_ref = np.sqrt(trapezoid(x**2 * p, x) / trapezoid(p, x))
    s = sample_positions(EnsembleSpec(T, n_samples=20000), geom)
    assert np.sqrt(np.mean(s.x**2)) == pytest.approx(rms_ref, rel=0.03)
    # anharmonic truncated well is wider than the harmonic estimate
    sigma_h = 0.5 * geom.trap.dipole_waist * np.sqrt(kT / geom.trap.dipole_depth)
    assert rms_ref > sigma_h


def test_untrapped_error(geom):
    with pytest.raises(UntrappedError):
        sample_positions(EnsembleSpec(20e-3), geom)


def test_node_offset_and_averaging(geom):
    spec = EnsembleSpec(1e-9, n_samples=2000, node_offset=float(node_z(geom, 5)))
    s = sample_positions(spec, geom)
    assert np.median(s.z) == pytest.approx(node_z(geom, 5), abs=1e-9)
    s = sample_positions(replace(spec, node_average=True), geom)
    nodes = np.unique(np.rint(s.z / geom.node_spacing))
    assert len(nodes) == round(geom.beat_period / geom.node_spacing)


def test_zero_temperature_equals_single_point(geom, atom, drive, kappa, table):
    spec = EnsembleSpec(1e-9, n_samples=200, mF_weights=PIN0)
    avg = averaged_transmission(spec, geom, atom, drive, kappa, atom.gamma, table=table)
    single = transmission(atom.g_max, drive, kappa, atom.gamma).transmission_rel
    assert avg == pytest.approx(single, rel=0.02)
    assert avg == pytest.approx(0.003, abs=0.001)


def test_mF_average_is_linear(geom, atom, drive, kappa, table):
    base = EnsembleSpec(1.7e-4, n_samples=1000)
    full = averaged_transmission(base, geom, atom, drive, kappa, atom.gamma, table=table)
    pinned = [averaged_transmission(replace(base, mF_weights=tuple(np.eye(9)[i])), geom, atom,
                                    drive, kappa, atom.gamma, table=table) for i in range(9)]
    assert full == pytest.approx(np.mean(pinned), rel=1e-12)


def test_monotone_in_temperature(geom, atom, drive, kappa, table):
    Ts = np.array([0.01, 0.03, 0.06, 0.1, 0.17, 0.25, 0.35, 0.5]) * 1e-3
    vals = [averaged_transmission(EnsembleSpec(T, n_samples=2000), geom, atom, drive, kappa,
                                  atom.gamma, table=table) for T in Ts]
    assert np.all(np.diff(vals) >= 0)


def test_monotone_in_coupling(geom, drive, kappa, table):
    spec = EnsembleSpec(1.7e-4, n_samples=2000)
    vals = [averaged_transmission(spec, geom, cesium_d2(g_max_MHz=g), drive, kappa,
                                  2.6 * MHZ, table=table) for g in (6, 9, 11, 13, 15)]
    assert np.all(np.diff(vals) <= 0)


def test_table_interpolation_close_to_direct_solve(drive, kappa, atom, table):
    g = np.array([3.33, 7.77, 12.04]) * MHZ
    d = np.array([21.3, 24.0, 30.7]) * MHZ
    ref = np.array([transmission(gi, replace(drive, delta_pa=di), kappa, atom.gamma,
                                 check_convergence=False).transmission_rel for gi, di in zip(g, d)])
    np.testing.assert_allclose(table(g, d), ref, rtol=0.01)


def test_worker_count_does_not_change_results(geom, atom, drive, kappa):
    spec = EnsembleSpec(1.7e-4, n_samples=1200)
    r1 = ensemble_transmission(spec, geom, atom, drive, kappa, atom.gamma,
                               table=TransmissionTable(drive, kappa, atom.gamma, workers=1))
    r2 = ensemble_transmission(spec, geom, atom, drive, kappa, atom.gamma,
                               table=TransmissionTable(drive, kappa, atom.gamma, workers=2))
    assert r1.mean == r2.mean
    np.testing.assert_array_equal(r1.per_sample, r2.per_sample)


def test_fit_temperature_round_trip(geom, atom, drive, kappa, table):
    template = EnsembleSpec(1e-4, n_samples=2000)
    T_true = 0.11e-3
    target = averaged_transmission(replace(template, temperature=T_true), geom, atom, drive,
                                   kappa, atom.gamma, table=table)
    T_fit = fit_temperature(target, template, geom, atom, drive, kappa, atom.gamma, table=table)
    assert abs(T_fit - T_true) <= 5e-6


def test_fit_temperature_out_of_range(geom, atom, drive, kappa, table):
    with pytest.raises(BracketError) as err:
        fit_temperature(0.95, EnsembleSpec(1e-4, n_samples=500), geom, atom, drive, kappa,
                        atom.gamma, table=table)
    lo, hi = err.value.bounds
    assert lo < 0.95 and hi < 0.95
    with pytest.raises(ValidationError):
        fit_temperature(1.5, EnsembleSpec(1e-4), geom, atom, drive, kappa, atom.gamma, table=table)
