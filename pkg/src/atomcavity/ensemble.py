"""Thermal and Zeeman averaging of the cavity transmission.

An atom at temperature T is described by Boltzmann-distributed positions
in three separable 1-D wells: the radial Gaussian profile of the dipole
trap (x), one antinode of the dipole standing wave (y) and one node of the
lock-laser lattice (z). Transmission is averaged over these positions and
over the nine F=4 Zeeman sublevels.

Random numbers come in fixed chunks of samples, each chunk from its own
substream of the master seed, so results do not depend on how many worker
processes evaluate them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Optional

import numpy as np
from scipy import optimize, special
from scipy.integrate import cumulative_trapezoid

from .errors import BracketError, ConvergenceError, UntrappedError, ValidationError
from .geometry import (FieldGeometry, Position, mode_amplitude, nearest_dipole_antinode,
                       nearest_node_index, node_z, stark_shift)
from .physics import KB, MHZ, TWO_PI, AtomStructure, coupling_for_mF
from .steady_state import DriveParams, transmission, transmission_batch

log = logging.getLogger(__name__)

CHUNK = 512
M_F = np.arange(-4, 5)
# Boltzmann factors below exp(-WINDOW_KT) are dropped from the sampling window
WINDOW_KT = 40.0


@dataclass(frozen=True)
class EnsembleSpec:
    temperature: float
    n_samples: int = 4000
    master_seed: int = 20080101
    node_offset: float = 0.0
    mF_weights: tuple = tuple(np.full(9, 1 / 9))
    node_average: bool = False   # uniform over the nodes of one beat period

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be positive, got {self.temperature}")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValidationError("n_samples must be a positive integer")
        w = np.asarray(self.mF_weights, float)
        if w.shape != (9,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValidationError("mF_weights must be 9 non-negative numbers summing to 1")
        object.__setattr__(self, "mF_weights", tuple(float(v) for v in w))


class MotionalSample(NamedTuple):
    position: Position
    weight: float


@dataclass
class Samples:
    """Column storage of MotionalSamples."""
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return len(self.x)

    def __iter__(self) -> Iterator[MotionalSample]:
        for x, y, z, w in zip(self.x, self.y, self.z, self.weight):
            yield MotionalSample(Position(float(x), float(y), float(z)), float(w))

    @property
    def position(self):
        return (self.x, self.y, self.z)


# --- 1-D Boltzmann wells ---------------------------------------------------


def _window(potential, half_width, kT):
    """Largest |q| <= half_width with U(q) <= WINDOW_KT kT (U increasing in |q|)."""
    cutoff = WINDOW_KT * kT
    if potential(half_width) <= cutoff:
        return half_width
    return optimize.brentq(lambda q: potential(q) - cutoff, 0.0, half_width, xtol=half_width * 1e-12)


def well_quantile(potential, half_width, kT, u, n_grid=4001):
    """Inverse-CDF sampling of exp(-U/kT) on [-half_width, half_width]."""
    w = _window(potential, half_width, kT)
    q = np.linspace(-w, w, n_grid)
    dens = np.exp(-potential(q) / kT)
    cdf = cumulative_trapezoid(dens, q, initial=0.0)
    cdf /= cdf[-1]
    return np.interp(u, cdf, q)


def _radial_potential(geom):
    t = geom.trap
    return lambda x: t.dipole_depth * (1 - np.exp(-2 * np.asarray(x) ** 2 / t.dipole_waist**2))


def radial_truncation(geom):
    """|x| beyond which the radial dipole potential is shallower than 1% of U0."""
    return geom.trap.dipole_waist * np.sqrt(np.log(100.0) / 2)


def untrapped_fraction(geom, temperature):
    """Share of harmonic-approximation proposals for x that land beyond the truncation radius.

    The proposal is the Gaussian position distribution of the harmonic
    expansion of the radial well, sigma = (w0 / 2) sqrt(kT / U0).
    """
    t = geom.trap
    sigma = 0.5 * t.dipole_waist * np.sqrt(KB * temperature / t.dipole_depth)
    return float(special.erfc(radial_truncation(geom) / (sigma * np.sqrt(2))))


def _chunk_uniforms(seed, n_samples):
    """(n_samples, 4) uniforms built from per-chunk substreams of ``seed``."""
    out = np.empty((n_samples, 4))
    for c, start in enumerate(range(0, n_samples, CHUNK)):
        stop = min(start + CHUNK, n_samples)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(c,)))
        out[start:stop] = rng.random((CHUNK, 4))[: stop - start]
    return out


def sample_positions(spec: EnsembleSpec, geom: FieldGeometry, y_center=0.0, seed=None) -> Samples:
    """Thermal positions around the trap site at transport coordinate ``y_center``.

    The trap site sits at the dipole-lattice antinode nearest ``y_center`` and at
    the lock node nearest ``spec.node_offset`` (or, with ``node_average``, a
    node drawn uniformly from one beat period).
    """
    kT = KB * spec.temperature
    frac = untrapped_fraction(geom, spec.temperature)
    if frac > 0.5:
        raise UntrappedError(
            f"T = {spec.temperature * 1e3:.3g} mK: {frac:.0%} of radial samples fall outside "
            "the truncated dipole well; the atom is not trapped"
        )
    u = _chunk_uniforms(spec.master_seed if seed is None else seed, spec.n_samples)
    t = geom.trap
    x = well_quantile(_radial_potential(geom), radial_truncation(geom), kT, u[:, 0])
    k_dt, k_l = geom.k_dipole, geom.k_lock
    y = well_quantile(lambda q: t.dipole_depth * np.sin(k_dt * np.asarray(q)) ** 2,
                      t.dipole_wavelength / 4, kT, u[:, 1])
    if t.lock_potential_height > 0:
        z = well_quantile(lambda q: t.lock_potential_height * np.sin(k_l * np.asarray(q)) ** 2,
                          geom.derived_cavity.lock_wavelength / 4, kT, u[:, 2])
    else:
        z = (u[:, 2] - 0.5) * geom.node_spacing
    if spec.node_average:
        n_nodes = max(1, int(round(geom.beat_period / geom.node_spacing)))
        node = np.minimum((u[:, 3] * n_nodes).astype(int), n_nodes - 1)
    else:
        node = nearest_node_index(geom, spec.node_offset)
    z = z + node_z(geom, node)
    y = y + nearest_dipole_antinode(geom, y_center)
    return Samples(x, y, z, np.ones(len(x)))


# --- memoised transmission lookup ------------------------------------------


def _solve_bins(args):
    g, d, drive, kappa, gamma = args
    n, _ = transmission_batch(g, d, drive, kappa, gamma)
    return n / drive.n_empty


class TransmissionTable:
    """Relative transmission on a (g, delta_pa) grid, filled on demand.

    Lookups interpolate bilinearly between grid nodes. Grid nodes are solved
    with the master equation; ``workers`` > 1 spreads new nodes over
    processes (values are identical either way).
    """

    def __init__(self, drive: DriveParams, kappa, gamma, g_bin=0.1 * MHZ,
                 delta_bin=0.5 * MHZ, workers=1):
        if g_bin <= 0 or delta_bin <= 0:
            raise ValidationError("table bins must be positive")
        self.drive = replace(drive, delta_pa=0.0)
        self.kappa, self.gamma = kappa, gamma
        self.g_bin, self.delta_bin = g_bin, delta_bin
        self.workers = workers
        self._values = {}
        self._check_truncation()

    def _check_truncation(self):
        # g = 0 holds the most photons, so it bounds the truncation error
        probe = transmission(0.0, replace(self.drive, delta_pa=0.0), self.kappa, self.gamma)
        if not probe.converged:
            raise ConvergenceError(
                f"photon basis n_max={self.drive.n_max} not converged for n_empty={self.drive.n_empty}")

    def __len__(self):
        return len(self._values)

    def _fill(self, keys):
        missing = [k for k in keys if k not in self._values]
        if not missing:
            return
        arr = np.array(missing, dtype=float)
        g = arr[:, 0] * self.g_bin
        d = arr[:, 1] * self.delta_bin
        if self.workers > 1 and len(missing) > 512:
            parts = np.array_split(np.arange(len(missing)), self.workers * 4)
            jobs = [(g[p], d[p], self.drive, self.kappa, self.gamma) for p in parts]
            with ProcessPoolExecutor(self.workers) as pool:
                vals = np.concatenate(list(pool.map(_solve_bins, jobs)))
        else:
            vals = _solve_bins((g, d, self.drive, self.kappa, self.gamma))
        self._values.update(zip(missing, vals.tolist()))

    def __call__(self, g, delta_pa):
        g = np.abs(np.asarray(g, float))
        delta_pa = np.asarray(delta_pa, float)
        g, delta_pa = np.broadcast_arrays(g, delta_pa)
        fg = g / self.g_bin
        fd = delta_pa / self.delta_bin
        ig = np.floor(fg).astype(np.int64)
        idd = np.floor(fd).astype(np.int64)
        tg, td = fg - ig, fd - idd
        corners = np.stack([ig, idd], axis=-1).reshape(-1, 2)
        uniq = np.unique(np.concatenate(
            [corners, corners + [1, 0], corners + [0, 1], corners + [1, 1]]), axis=0)
        keys = [tuple(k) for k in uniq.tolist()]
        self._fill(keys)
        lut = np.array([self._values[k] for k in keys])
        # map every corner to its position in uniq
        def at(dg, dd):
            c = corners + [dg, dd]
            idx = np.searchsorted(_row_keys(uniq), _row_keys(c))
            return lut[idx].reshape(g.shape)
        return ((1 - tg) * (1 - td) * at(0, 0) + tg * (1 - td) * at(1, 0)
                + (1 - tg) * td * at(0, 1) + tg * td * at(1, 1))


def _row_keys(a):
    # order-preserving scalar key for lexicographically sorted int pairs
    a = np.asarray(a, np.int64)
    return (a[:, 0] << 32) + (a[:, 1] + (1 << 31))


# --- averaging ----------------------------------------------------------------


@dataclass
class EnsembleResult:
    mean: float
    stderr: float
    n_samples: int
    per_sample: np.ndarray = field(repr=False)


def sample_transmissions(samples: Samples, geom, atom, drive, table, mF_weights, n_atoms=1):
    """Zeeman-averaged relative transmission for each motional sample."""
    psi = np.abs(mode_amplitude(geom, samples.position))
    delta = drive.delta_pa + TWO_PI * stark_shift(geom, samples.position)
    g_m = coupling_for_mF(atom.g_max, M_F) * np.sqrt(n_atoms)
    w = np.asarray(mF_weights)
    active = w > 0
    T = table(psi[:, None] * g_m[None, active], delta[:, None])
    return T @ (w[active] / w[active].sum())


def ensemble_transmission(spec: EnsembleSpec, geom: FieldGeometry, atom: AtomStructure,
                          drive: DriveParams, kappa, gamma, y_center=0.0, n_atoms=1,
                          table: Optional[TransmissionTable] = None, samples=None) -> EnsembleResult:
    if table is None:
        table = TransmissionTable(drive, kappa, gamma)
    if samples is None:
        samples = sample_positions(spec, geom, y_center)
    vals = sample_transmissions(samples, geom, atom, drive, table, spec.mF_weights, n_atoms)
    n = len(vals)
    stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return EnsembleResult(float(vals.mean()), stderr, n, vals)


def averaged_transmission(spec, geom, atom, drive, kappa, gamma, **kw) -> float:
    """Mean relative transmission over thermal positions and Zeeman sublevels."""
    return ensemble_transmission(spec, geom, atom, drive, kappa, gamma, **kw).mean


def fit_temperature(target, spec_template: EnsembleSpec, geom, atom, drive, kappa, gamma,
                    bracket=(1e-6, 1e-3), xtol=5e-6, table=None, **kw) -> float:
    """Temperature at which the averaged transmission equals ``target`` (bisection)."""
    if not 0 < target < 1:
        raise ValidationError(f"target transmission must lie in (0, 1), got {target}")
    if table is None:
        table = TransmissionTable(drive, kappa, gamma)

    def resid(T):
        s = replace(spec_template, temperature=T)
        return averaged_transmission(s, geom, atom, drive, kappa, gamma, table=table, **kw) - target

    lo, hi = bracket
    f_lo, f_hi = resid(lo), resid(hi)
    if f_lo * f_hi > 0:
        bounds = (f_lo + target, f_hi + target)
        raise BracketError(
            f"target {target:.4g} outside attainable range [{min(bounds):.4g}, {max(bounds):.4g}] "
            f"for T in [{lo * 1e3:.3g}, {hi * 1e3:.3g}] mK", bounds=bounds)
    # bisect stops once the bracket is below 2*xtol, so the midpoint is within xtol
    return optimize.bisect(resid, lo, hi, xtol=xtol / 2, maxiter=200)
