"""Photon-counting model of the transmitted probe light."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import FieldGeometry, lock_node_positions, node_z


@dataclass(frozen=True)
class DetectionChain:
    mirror_fraction: float            # T / [2 (T + A)]
    path_efficiency: float = 0.09     # grating, filter, optics and SPCM quantum efficiency
    background_rate: float = 1000.0   # dark counts plus stray light, counts/s
    calibration: float = 1.0

    def __post_init__(self):
        for name in ("mirror_fraction", "path_efficiency"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValidationError(f"{name} must lie in (0, 1], got {v}")
        if self.background_rate < 0 or self.calibration <= 0:
            raise ValidationError("background_rate must be >= 0 and calibration > 0")

    @property
    def total_efficiency(self):
        """Probability that an intra-cavity photon is counted."""
        return self.mirror_fraction * self.path_efficiency


def expected_count_rate(n_photon, chain: DetectionChain, kappa):
    """Counts/s for an intra-cavity photon number; photons leave the mode at 2 kappa."""
    n = np.asarray(n_photon, float)
    if np.any(n < 0):
        raise ValidationError("photon number must be non-negative")
    return chain.calibration * 2 * kappa * n * chain.total_efficiency + chain.background_rate


class TraceEvent(NamedTuple):
    time: float
    kind: str            # "insertion", "removal" or "hop"
    node_index: Optional[int] = None


def hopping_process(rate, geom: FieldGeometry, duration, seed, start_time=0.0, start_node=0,
                    z_limit=None, reach=3.0) -> List[TraceEvent]:
    """Poissonian hops between lock-lattice nodes.

    The destination is drawn among the other nodes within ``reach`` cavity
    waists, weighted by exp(-dz^2 / w_cav^2). Nodes farther than ``z_limit``
    from node_origin (default: the dipole-trap waist) are not reachable.
    """
    if rate < 0:
        raise ValidationError("hop rate must be non-negative")
    rng = np.random.default_rng(seed)
    if z_limit is None:
        z_limit = geom.trap.dipole_waist
    events = []
    if rate == 0:
        return events
    t = start_time
    node = start_node
    w = geom.w_cav
    while True:
        t += rng.exponential(1.0 / rate)
        if t >= start_time + duration:
            break
        z0 = float(node_z(geom, node))
        lo = max(z0 - reach * w, geom.node_origin - z_limit)
        hi = min(z0 + reach * w, geom.node_origin + z_limit)
        cand = [k for k, _, _ in lock_node_positions(geom, (lo, hi)) if k != node]
        if not cand:
            continue
        dz = node_z(geom, np.array(cand)) - z0
        p = np.exp(-dz**2 / w**2)
        node = int(rng.choice(cand, p=p / p.sum()))
        events.append(TraceEvent(float(t), "hop", node))
    return events


def node_envelopes(geom, events):
    """Beat-envelope coupling |cos(k_p z)| of every node visited by hop events."""
    nodes = [e.node_index for e in events if e.kind == "hop"]
    return np.abs(np.cos(geom.k_probe * (node_z(geom, np.array(nodes, dtype=float)) - geom.node_origin)))


@dataclass
class Trace:
    t: np.ndarray          # bin start times, s
    counts: np.ndarray
    true_rate: np.ndarray  # expected counts/s averaged over the bin
    node_index: np.ndarray  # occupied node at bin start, -1 without atom


def _state_segments(events, duration, probe_on):
    """Piecewise-constant (start, stop, atom_present, node, probe) segments."""
    t_on, t_off = probe_on
    cuts = {0.0, duration, min(max(t_on, 0), duration), min(max(t_off, 0), duration)}
    cuts.update(e.time for e in events if 0 <= e.time <= duration)
    cuts = sorted(cuts)
    evs = sorted(events, key=lambda e: e.time)
    segs = []
    present, node = False, 0
    i = 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        while i < len(evs) and evs[i].time <= a:
            e = evs[i]
            if e.kind == "insertion":
                present = True
                if e.node_index is not None:
                    node = e.node_index
            elif e.kind == "removal":
                present = False
            elif e.kind == "hop":
                node = e.node_index
            else:
                raise ValidationError(f"unknown event kind {e.kind!r}")
            i += 1
        probe = t_on <= a < t_off
        segs.append((a, b, present, node, probe))
    return segs


def synth_trace(events: Sequence[TraceEvent], bin_width, chain: DetectionChain, duration,
                n_empty, kappa, node_transmission: Callable[[int], float], seed,
                probe_on=(0.0, np.inf), bin_offset=0.0) -> Trace:
    """Binned Poisson photon counts for a scripted sequence of events.

    Without an atom the cavity holds ``n_empty`` photons; with an atom at node k
    it holds ``n_empty * node_transmission(k)``. Outside ``probe_on`` only the
    background is counted.
    """
    if bin_width <= 0 or duration <= 0:
        raise ValidationError("bin width and duration must be positive")
    times = [e.time for e in events]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValidationError("trace events must be ordered in time")
    segs = _state_segments(list(events), duration, probe_on)
    cache = {}
    knots = [0.0]
    cum = [0.0]
    for a, b, present, node, probe in segs:
        if probe:
            if present:
                if node not in cache:
                    cache[node] = float(node_transmission(node))
                n = n_empty * cache[node]
            else:
                n = n_empty
        else:
            n = 0.0
        rate = float(expected_count_rate(n, chain, kappa))
        knots.append(b)
        cum.append(cum[-1] + rate * (b - a))
    edges = np.arange(bin_offset, duration + 1e-12 * duration, bin_width)
    edges = edges[edges + bin_width <= duration * (1 + 1e-12)]
    lo, hi = edges, edges + bin_width
    expected = np.interp(hi, knots, cum) - np.interp(lo, knots, cum)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(expected)
    node_idx = np.full(len(lo), -1)
    for j, t0 in enumerate(lo):
        for a, b, present, node, _ in segs:
            if a <= t0 < b:
                node_idx[j] = node if present else -1
                break
    return Trace(lo, counts, expected / bin_width, node_idx)
