"""Experiment protocols: transport sweeps through the mode and the
hyperfine-pumping state-detection map."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import optimize

from .ensemble import (EnsembleSpec, M_F, Samples, TransmissionTable, sample_positions,
                       sample_transmissions)
from .errors import FitError, ValidationError
from .geometry import FieldGeometry, mode_amplitude, nearest_dipole_antinode, stark_shift
from .physics import EXCITED_LEVELS, TWO_PI, AtomStructure, relative_pi_coupling
from .steady_state import DriveParams, scattering_rate

log = logging.getLogger(__name__)


def effective_g(g, n_atoms):
    """Collective coupling of N co-located atoms in the weak-excitation limit."""
    if n_atoms < 1:
        raise ValidationError("n_atoms must be >= 1")
    return g * np.sqrt(n_atoms)


# --- transport sweeps ---------------------------------------------------------


@dataclass(frozen=True)
class SweepProtocol:
    start_y: float = -50e-6
    end_y: float = 50e-6
    duration: float = 150e-3
    n_atoms: int = 1
    dwell: float = 20e-3
    time_step: float = 1e-3

    def __post_init__(self):
        if not self.duration > 0 or not self.time_step > 0 or self.dwell < 0:
            raise ValidationError("sweep duration and time_step must be positive, dwell >= 0")
        if self.n_atoms not in (1, 2):
            raise ValidationError("sweep supports n_atoms of 1 or 2")


@dataclass
class SweepSeries:
    t: np.ndarray
    y: np.ndarray
    T_rel: np.ndarray
    stderr: np.ndarray
    n_forth: int   # points belonging to the forward pass

    def forth(self):
        return self.y[:self.n_forth], self.T_rel[:self.n_forth]


def sweep_times(protocol: SweepProtocol):
    """Time grid and positions for forth, dwell and back passes."""
    n = int(round(protocol.duration / protocol.time_step))
    tf = np.linspace(0.0, protocol.duration, n + 1)
    yf = protocol.start_y + (protocol.end_y - protocol.start_y) * tf / protocol.duration
    nd = int(round(protocol.dwell / protocol.time_step))
    # dwell samples strictly between the end of the forward pass and the start of the return
    td = protocol.duration + protocol.time_step * np.arange(1, nd)
    yd = np.full(len(td), protocol.end_y)
    tb = protocol.duration + protocol.dwell + tf
    yb = yf[::-1]
    return np.concatenate([tf, td, tb]), np.concatenate([yf, yd, yb]), n + 1


def sweep_transmission(protocol: SweepProtocol, spec: EnsembleSpec, geom: FieldGeometry,
                       atom: AtomStructure, drive: DriveParams, kappa, gamma,
                       table: Optional[TransmissionTable] = None) -> SweepSeries:
    """Averaged transmission while the atom is carried through the mode along y.

    One set of thermal displacements is reused at every position, so identical
    positions on the forward and backward pass give identical values.
    """
    if table is None:
        table = TransmissionTable(drive, kappa, gamma)
    t, y, n_forth = sweep_times(protocol)
    base = sample_positions(spec, geom, y_center=0.0)
    uniq, inv = np.unique(nearest_dipole_antinode(geom, y), return_inverse=True)
    means = np.empty(len(uniq))
    errs = np.empty(len(uniq))
    for i, yc in enumerate(uniq):
        s = Samples(base.x, base.y + yc, base.z, base.weight)
        vals = sample_transmissions(s, geom, atom, drive, table, spec.mF_weights, protocol.n_atoms)
        means[i] = vals.mean()
        errs[i] = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else np.nan
    return SweepSeries(t, y, means[inv], errs[inv], n_forth)


def dip_width(y, T_rel, level=0.5):
    """Full width of the region around the minimum where T_rel < level."""
    y = np.asarray(y, float)
    T = np.asarray(T_rel, float)
    order = np.argsort(y)
    y, T = y[order], T[order]
    i0 = int(np.argmin(T))
    if T[i0] >= level:
        raise ValidationError(f"transmission never drops below {level}; width undefined")
    left = i0
    while left > 0 and T[left - 1] < level:
        left -= 1
    right = i0
    while right < len(T) - 1 and T[right + 1] < level:
        right += 1
    if left == 0 or right == len(T) - 1:
        raise ValidationError(f"dip does not recover to {level} inside the series; width undefined")

    def cross(i_out, i_in):
        return y[i_out] + (level - T[i_out]) * (y[i_in] - y[i_out]) / (T[i_in] - T[i_out])

    return float(cross(right + 1, right) - cross(left - 1, left))


# --- state-detection (hyperfine pumping) ------------------------------------------


@dataclass(frozen=True)
class PumpProtocol:
    hold_time: float = 1e-3
    step: float = 10e-6
    n_empty: float = 0.02
    detuning_F3: float = TWO_PI * 40e6     # probe minus transition frequency
    detuning_F4: float = -TWO_PI * 160e6
    detuning_F5: float = -TWO_PI * 411e6
    survival: float = 0.77
    n_trajectories: int = 200

    def __post_init__(self):
        if not self.hold_time > 0 or not self.step > 0:
            raise ValidationError("hold_time and step must be positive")
        ratio = self.hold_time / self.step
        if abs(ratio - round(ratio)) > 1e-6 * ratio:
            raise ValidationError("step must divide hold_time")
        if not 0 < self.survival <= 1:
            raise ValidationError("survival must lie in (0, 1]")
        if self.n_empty < 0:
            raise ValidationError("n_empty must be non-negative")
        if self.n_trajectories < 1:
            raise ValidationError("n_trajectories must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.hold_time / self.step))

    @property
    def detunings(self):
        return {3: self.detuning_F3, 4: self.detuning_F4, 5: self.detuning_F5}


@dataclass
class TransferCurve:
    positions: np.ndarray
    transfer_probability: np.ndarray
    stderr: np.ndarray


def _level_couplings(atom, psi, mF):
    return {Fp: atom.g_max * relative_pi_coupling(Fp, mF) * np.abs(psi) for Fp in EXCITED_LEVELS}


def dispersive_photon_number(geom: FieldGeometry, atom: AtomStructure, pos, mF,
                             pump: PumpProtocol, kappa, stark=True):
    """Intra-cavity photon number with a multi-level atom at ``pos`` (cavity on probe resonance)."""
    psi = mode_amplitude(geom, pos)
    shift = TWO_PI * stark_shift(geom, pos) if stark else 0.0
    g = _level_couplings(atom, psi, mF)
    chi = sum(g[Fp] ** 2 / (atom.gamma - 1j * (pump.detunings[Fp] + shift)) for Fp in EXCITED_LEVELS)
    return pump.n_empty * kappa**2 / np.abs(kappa + chi) ** 2


def local_intensity(geom, atom, pos, mF, pump, kappa, stark=True):
    """Photon number seen by the atom: n(r) |psi(r)|^2."""
    return dispersive_photon_number(geom, atom, pos, mF, pump, kappa, stark) * mode_amplitude(geom, pos) ** 2


def pump_rates(geom, atom, pos, mF, pump, kappa):
    """Scattering rate via each excited level, shape (3, ...) ordered as F'=3, 4, 5."""
    psi = mode_amplitude(geom, pos)
    shift = TWO_PI * stark_shift(geom, pos)
    n = dispersive_photon_number(geom, atom, pos, mF, pump, kappa)
    g = _level_couplings(atom, psi, mF)
    return np.stack([scattering_rate(g[Fp], pump.detunings[Fp] + shift, n, atom.gamma)
                     for Fp in EXCITED_LEVELS])


def run_chain(rates, step, n_steps, branch_f3, rng):
    """Monte-Carlo the per-step excite/decay chain; returns final F (3 or 4) per trajectory.

    ``rates`` has shape (3, n_traj) for F'=3, 4, 5. F=3 is absorbing.
    """
    rates = np.asarray(rates, float)
    n_traj = rates.shape[1]
    total = rates.sum(axis=0)
    p_exc = total * step
    if np.any(p_exc > 0.1):
        warnings.warn(f"excitation probability per step up to {p_exc.max():.2f}; "
                      "reduce the step", RuntimeWarning, stacklevel=2)
    cum = np.cumsum(rates, axis=0) / np.where(total > 0, total, 1.0)
    state = np.full(n_traj, 4)
    for _ in range(n_steps):
        u = rng.random((3, n_traj))
        excited = (state == 4) & (u[0] < p_exc)
        level = (u[1][None, :] > cum).sum(axis=0).clip(0, 2)
        to_f3 = u[2] < branch_f3[level]
        state[excited & to_f3] = 3
    return state


def absorption_probability(rates, step, n_steps, branch_f3):
    """Closed form of the chain: 1 - (1 - p_exc * p_F3)^n_steps."""
    rates = np.asarray(rates, float)
    p_exc = np.clip(rates.sum(axis=0) * step, 0, 1)
    total = rates.sum(axis=0)
    p_f3 = np.divide((branch_f3[:, None] * rates).sum(axis=0), total,
                     out=np.zeros_like(total), where=total > 0)
    return 1.0 - (1.0 - p_exc * p_f3) ** n_steps


def _branch_f3(atom, branching=None):
    b = atom.branching if branching is None else branching
    return np.array([b[Fp][0] for Fp in EXCITED_LEVELS])


def pump_trajectory(geom, atom, pos, mF, pump: PumpProtocol, kappa, seed, branching=None) -> int:
    """Final hyperfine state (3 or 4) of one atom held at ``pos``."""
    rates = pump_rates(geom, atom, tuple(np.atleast_1d(c) for c in pos), mF, pump, kappa)
    rng = np.random.default_rng(seed)
    return int(run_chain(rates.reshape(3, 1), pump.step, pump.n_steps,
                         _branch_f3(atom, branching), rng)[0])


def transfer_map(positions, pump: PumpProtocol, spec: EnsembleSpec, geom: FieldGeometry,
                 atom: AtomStructure, kappa, method="mc", branching=None) -> TransferCurve:
    """Survival-scaled probability of ending in F=3 versus transport position y.

    Each position gets ``pump.n_trajectories`` thermal positions (from the
    ensemble sampler) per Zeeman sublevel. ``method="expected"`` replaces the
    sampled chain by its closed-form absorption probability.
    """
    positions = np.atleast_1d(np.asarray(positions, float))
    b3 = _branch_f3(atom, branching)
    w = np.asarray(spec.mF_weights)
    traj_spec = replace(spec, n_samples=pump.n_trajectories)
    probs = np.empty(len(positions))
    errs = np.empty(len(positions))
    for i, y in enumerate(positions):
        ss = np.random.SeedSequence(spec.master_seed, spawn_key=(1, i))
        pos_seed, chain_seed = (int(s.generate_state(1, np.uint64)[0]) for s in ss.spawn(2))
        samples = sample_positions(traj_spec, geom, y_center=y, seed=pos_seed)
        rng = np.random.default_rng(chain_seed)
        per_traj = np.zeros(len(samples))
        for m, wm in zip(M_F, w):
            if wm == 0:
                continue
            rates = pump_rates(geom, atom, samples.position, int(m), pump, kappa)
            if method == "mc":
                out = (run_chain(rates, pump.step, pump.n_steps, b3, rng) == 3).astype(float)
            elif method == "expected":
                out = absorption_probability(rates, pump.step, pump.n_steps, b3)
            else:
                raise ValidationError(f"unknown transfer method {method!r}")
            per_traj += wm * out
        probs[i] = pump.survival * per_traj.mean()
        errs[i] = pump.survival * per_traj.std(ddof=1) / np.sqrt(len(per_traj)) if len(per_traj) > 1 else np.nan
    return TransferCurve(positions, probs, errs)


def fit_photon_number(measured: TransferCurve, pump_template: PumpProtocol, spec, geom, atom,
                      kappa, bounds=(0.001, 0.2), method="mc", xatol=1e-4) -> float:
    """Least-squares n_empty reproducing a measured transfer curve."""
    if len(measured.positions) == 0:
        raise ValidationError("measured curve is empty")
    target = np.asarray(measured.transfer_probability, float)

    def sse(n):
        model = transfer_map(measured.positions, replace(pump_template, n_empty=n), spec,
                             geom, atom, kappa, method=method)
        return float(np.sum((model.transfer_probability - target) ** 2))

    lo, hi = bounds
    probe = [sse(n) for n in np.geomspace(lo, hi, 5)]
    if max(probe) - min(probe) <= 1e-12 * max(1.0, max(probe)):
        raise FitError("objective is flat over the photon-number range; n is not identifiable")
    res = optimize.minimize_scalar(sse, bounds=bounds, method="bounded", options={"xatol": xatol})
    n_fit = float(res.x)
    if min(n_fit - lo, hi - n_fit) < 0.01 * (hi - lo):
        raise FitError(f"best photon number {n_fit:.4g} sits on the search bound {bounds}; "
                       "data not reproducible within range")
    return n_fit
