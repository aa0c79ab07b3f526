"""Command-line entry point.

Every run resolves a configuration, computes, and only then writes its CSV
files plus a JSON summary into ``--out``. Exit codes: 0 success,
2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import PRESETS, RunConfig, defaults_hash, parse_range
from .detection import TraceEvent, expected_count_rate, hopping_process, synth_trace
from .ensemble import TransmissionTable, ensemble_transmission, fit_temperature
from .errors import NumericalError, ValidationError
from .experiments import (TransferCurve, dip_width, fit_photon_number, sweep_transmission,
                          transfer_map)
from .geometry import dipole_potential, lock_potential, mode_amplitude, node_z, stark_shift
from .physics import KB, MHZ, TWO_PI, cooperativity, trap_frequencies
from .steady_state import transmission

log = logging.getLogger("atomcavity")

# what `preset NAME` runs
PRESET_PLAN = {
    "fig3": ["average", "fit-temp", "trace"],
    "fig5": ["sweep"],
    "fig6": ["sweep_n1", "sweep_n2"],
    "fig7": ["pump-map"],
    "operating_point": ["trace"],
}


class Run:
    """Collects tables and scalars for one invocation; nothing touches disk until ``write``."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.tables = {}
        self.scalars = {}
        self._table = None

    def table(self):
        if self._table is None:
            c = self.cfg
            gb, db = c.table_bins()
            self._table = TransmissionTable(c.drive(), c.kappa(), c.atom().gamma, gb, db, c.workers())
        return self._table

    def add(self, name, header, rows):
        self.tables[name] = (header, rows)

    def write(self, out_dir, command):
        os.makedirs(out_dir, exist_ok=True)
        files = []
        for name, (header, rows) in self.tables.items():
            path = os.path.join(out_dir, f"{name}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
            files.append(os.path.basename(path))
        summary = {
            "command": command,
            "version": __version__,
            "defaults_hash": defaults_hash(),
            "numpy": np.__version__,
            "seed": self.cfg.i("ensemble", "seed"),
            "config_sources": self.cfg.sources,
            "config": self.cfg.as_dict(),
            "outputs": files,
            "results": self.scalars,
        }
        name = command.replace(" ", "_")
        with open(os.path.join(out_dir, f"{name}_summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        return files


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _rows(*cols):
    return [[_fmt(v) for v in row] for row in zip(*cols)]


# --- subcommands -----------------------------------------------------------


def cmd_derive(run: Run):
    c = run.cfg
    d = c.derived()
    atom = c.atom()
    kappa = c.kappa()
    radial, axial = trap_frequencies(c.trap(), atom.mass)
    chain = c.detection_chain()
    vals = [
        ("finesse", d.finesse, ""),
        ("fsr", d.fsr, "Hz"),
        ("kappa_derived_over_2pi", d.kappa / MHZ, "MHz"),
        ("kappa_used_over_2pi", kappa / MHZ, "MHz"),
        ("waist", d.waist * 1e6, "um"),
        ("mode_volume", d.mode_volume * 1e18, "um^3"),
        ("beat_half_length", d.beat_half_length * 1e6, "um"),
        ("cooperativity_gmax", cooperativity(atom.g_max, kappa, atom.gamma), ""),
        ("g_min_over_2pi", atom.per_mF_coupling[4] / MHZ, "MHz"),
        ("g_max_over_2pi", atom.g_max / MHZ, "MHz"),
        ("radial_trap_freq", radial / TWO_PI, "Hz"),
        ("axial_trap_freq", axial / TWO_PI, "Hz"),
        ("mirror_fraction", d.mirror_fraction, ""),
        ("detection_efficiency", chain.total_efficiency, ""),
    ]
    run.add("derive", ["quantity", "value", "unit"], [[k, _fmt(v), u] for k, v, u in vals])
    run.scalars.update({k: float(v) for k, v, _ in vals})
    for k, v, u in vals:
        print(f"{k:26s} {v:.6g} {u}")


def cmd_transmission(run: Run):
    c = run.cfg
    drive, kappa, gamma = c.drive(), c.kappa(), c.atom().gamma
    gs = parse_range(c.s("transmission", "g_MHz"), "transmission.g_MHz")
    ds = parse_range(c.s("transmission", "delta_MHz"), "transmission.delta_MHz")
    rows = []
    for g in gs:
        for d in ds:
            r = transmission(g * MHZ, replace(drive, delta_pa=d * MHZ), kappa, gamma)
            rows.append([_fmt(g), _fmt(d), _fmt(r.transmission_rel), _fmt(r.photon_number),
                         _fmt(r.atomic_excitation), int(r.converged)])
    run.add("transmission", ["g_over_2pi", "delta_pa_over_2pi", "T_rel", "n_photon",
                             "atomic_excitation", "converged"], rows)
    run.scalars["n_points"] = len(rows)
    run.scalars["all_converged"] = all(r[-1] for r in rows)


AVERAGE_HEADER = ["temperature_mK", "delta_MHz", "T_rel_mean", "T_rel_stderr", "n_samples", "seed"]


def _average_row(run, spec):
    c = run.cfg
    atom = c.atom()
    res = ensemble_transmission(spec, c.geometry(), atom, c.drive(), c.kappa(), atom.gamma,
                                table=run.table())
    row = [_fmt(spec.temperature * 1e3), _fmt(c.f("drive", "delta_MHz")), _fmt(res.mean),
           _fmt(res.stderr), res.n_samples, spec.master_seed]
    return res, row


def cmd_average(run: Run):
    res, row = _average_row(run, run.cfg.ensemble())
    run.add("average", AVERAGE_HEADER, [row])
    run.scalars.update(T_rel_mean=res.mean, T_rel_stderr=res.stderr)
    print(f"T_rel = {res.mean:.4f} +/- {res.stderr:.4f}")


def cmd_fit_temp(run: Run):
    c = run.cfg
    atom = c.atom()
    target = c.f("fit", "target")
    bracket = (c.f("fit", "t_min_mK") * 1e-3, c.f("fit", "t_max_mK") * 1e-3)
    T = fit_temperature(target, c.ensemble(), c.geometry(), atom, c.drive(), c.kappa(),
                        atom.gamma, bracket=bracket, table=run.table())
    res, row = _average_row(run, replace(c.ensemble(), temperature=T))
    run.add("fit_temp", AVERAGE_HEADER, [row])
    run.scalars.update(fit_target=target, fitted_temperature_mK=T * 1e3, T_rel_at_fit=res.mean)
    print(f"fitted temperature = {T * 1e3:.4f} mK (T_rel {res.mean:.4f})")


def _sweep(run: Run, n_atoms, name):
    c = run.cfg
    atom = c.atom()
    proto = replace(c.sweep(), n_atoms=n_atoms)
    s = sweep_transmission(proto, c.ensemble(), c.geometry(), atom, c.drive(), c.kappa(),
                           atom.gamma, table=run.table())
    run.add(name, ["t_ms", "y_um", "T_rel"], _rows(s.t * 1e3, s.y * 1e6, s.T_rel))
    yf, Tf = s.forth()
    key = f"{name}_" if name != "sweep" else ""
    run.scalars[key + "centre_T_rel"] = float(Tf.min())
    run.scalars[key + "edge_T_rel"] = float(min(Tf[0], Tf[-1]))
    try:
        run.scalars[key + "width_um"] = dip_width(yf, Tf) * 1e6
    except ValidationError:
        run.scalars[key + "width_um"] = None
    print(f"{name}: centre {Tf.min():.4f}, edge {min(Tf[0], Tf[-1]):.4f}")


def cmd_sweep(run: Run):
    _sweep(run, run.cfg.i("sweep", "n_atoms"), "sweep")


def _transfer(run: Run, n_empty=None):
    c = run.cfg
    pump = c.pump() if n_empty is None else replace(c.pump(), n_empty=n_empty)
    return transfer_map(c.pump_positions(), pump, c.ensemble(), c.geometry(), c.atom(),
                        c.kappa(), method=c.s("pump", "method"))


def cmd_pump_map(run: Run):
    curve = _transfer(run)
    run.add("pump_map", ["y_um", "transfer", "stderr"],
            _rows(curve.positions * 1e6, curve.transfer_probability, curve.stderr))
    i = int(np.argmax(curve.transfer_probability))
    run.scalars.update(peak_transfer=float(curve.transfer_probability[i]),
                       peak_y_um=float(curve.positions[i] * 1e6))
    print(f"peak transfer {curve.transfer_probability[i]:.3f} at y = {curve.positions[i] * 1e6:.1f} um")


def read_curve(path):
    """Transfer curve from a CSV with y_um and transfer columns."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        y = np.array([float(r["y_um"]) for r in rows]) * 1e-6
        p = np.array([float(r["transfer"]) for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise ValidationError(f"cannot read measured curve {path}: {exc}") from exc
    return TransferCurve(y, p, np.full(len(y), np.nan))


def cmd_fit_photon(run: Run):
    c = run.cfg
    path = c.s("fit", "measured_csv")
    if not path:
        raise ValidationError("fit-photon needs fit.measured_csv (a CSV with y_um,transfer)")
    measured = read_curve(path)
    bounds = (c.f("fit", "n_min"), c.f("fit", "n_max"))
    n = fit_photon_number(measured, c.pump(), c.ensemble(), c.geometry(), c.atom(), c.kappa(),
                          bounds=bounds, method=c.s("pump", "method"))
    model = transfer_map(measured.positions, replace(c.pump(), n_empty=n), c.ensemble(),
                         c.geometry(), c.atom(), c.kappa(), method=c.s("pump", "method"))
    run.add("fit_photon", ["y_um", "measured", "model"],
            _rows(measured.positions * 1e6, measured.transfer_probability, model.transfer_probability))
    run.scalars["fitted_n_empty"] = n
    print(f"fitted photon number = {n:.4f}")


def load_events(path):
    """JSON list of {"t_s": ..., "kind": ..., "node_index": ...}."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
        return [TraceEvent(float(e["t_s"]), str(e["kind"]), e.get("node_index")) for e in raw]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"cannot read event list {path}: {exc}") from exc


def cmd_trace(run: Run):
    c = run.cfg
    geom = c.geometry()
    atom = c.atom()
    seed = c.i("detection", "seed")
    duration = c.f("detection", "duration_ms") * 1e-3
    path = c.s("detection", "events_json")
    if path:
        events = load_events(path)
    else:
        t_in = c.f("detection", "insert_ms") * 1e-3
        t_out = c.f("detection", "remove_ms") * 1e-3
        events = [TraceEvent(t_in, "insertion", 0)]
        events += hopping_process(c.f("detection", "hop_rate"), geom, t_out - t_in,
                                  np.random.SeedSequence(seed, spawn_key=(1,)), start_time=t_in)
        events.append(TraceEvent(t_out, "removal"))
    spec = c.ensemble()

    def node_T(k):
        s = replace(spec, node_offset=float(node_z(geom, k)), node_average=False)
        return ensemble_transmission(s, geom, atom, c.drive(), c.kappa(), atom.gamma,
                                     table=run.table()).mean

    chain = c.detection_chain()
    count_kappa = c.derived().kappa
    n_empty = c.f("drive", "n_empty")
    probe = (c.f("detection", "probe_on_ms") * 1e-3, c.f("detection", "probe_off_ms") * 1e-3)
    tr = synth_trace(events, c.f("detection", "bin_ms") * 1e-3, chain, duration, n_empty,
                     count_kappa, node_T, np.random.SeedSequence(seed, spawn_key=(2,)),
                     probe_on=probe)
    run.add("trace", ["t_s", "counts", "true_rate", "node_index"],
            _rows(tr.t, tr.counts, tr.true_rate, tr.node_index))
    empty_rate = float(expected_count_rate(n_empty, chain, count_kappa))
    run.scalars.update(
        empty_count_rate=empty_rate,
        background_rate=chain.background_rate,
        detection_efficiency=chain.total_efficiency,
        n_events=len(events),
    )
    atom_bins = tr.node_index >= 0
    if atom_bins.any():
        run.scalars["mean_rate_with_atom"] = float(tr.true_rate[atom_bins].mean())
    print(f"empty-cavity count rate {empty_rate:.4g} /s")


def cmd_grid_dump(run: Run):
    c = run.cfg
    geom = c.geometry()
    atom = c.atom()
    xs = parse_range(c.s("grid", "x_um"), "grid.x_um")
    ys = parse_range(c.s("grid", "y_um"), "grid.y_um")
    zs = parse_range(c.s("grid", "z_um"), "grid.z_um")
    X, Y, Z = (a.ravel() for a in np.meshgrid(xs, ys, zs, indexing="ij"))
    pos = (X * 1e-6, Y * 1e-6, Z * 1e-6)
    g = atom.g_max * np.abs(mode_amplitude(geom, pos)) / MHZ
    Ud = dipole_potential(geom, pos) / KB * 1e3
    Ul = lock_potential(geom, pos) / KB * 1e3
    st = stark_shift(geom, pos) / 1e6
    run.add("grid", ["x", "y", "z", "g_over_2pi_MHz", "U_dipole_mK", "U_lock_mK", "stark_MHz"],
            _rows(X, Y, Z, g, Ud, Ul, st))
    run.scalars["n_points"] = int(X.size)


COMMANDS = {
    "derive": cmd_derive,
    "transmission": cmd_transmission,
    "average": cmd_average,
    "fit-temp": cmd_fit_temp,
    "sweep": cmd_sweep,
    "sweep_n1": lambda run: _sweep(run, 1, "sweep_n1"),
    "sweep_n2": lambda run: _sweep(run, 2, "sweep_n2"),
    "pump-map": cmd_pump_map,
    "fit-photon": cmd_fit_photon,
    "trace": cmd_trace,
    "grid-dump": cmd_grid_dump,
}


def _version_info():
    return json.dumps({"version": __version__, "defaults_hash": defaults_hash()})


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--config", help="INI file layered over the defaults "
                        "(default: $ATOMCAVITY_CONFIG)")
    common.add_argument("--preset", choices=PRESETS, help="shipped parameter preset")
    common.add_argument("--from-summary", help="JSON summary of an earlier run to reproduce")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one parameter (repeatable, highest precedence)")
    common.add_argument("--seed", type=int, help="shorthand for ensemble.seed and detection.seed")
    common.add_argument("--workers", type=int, help="shorthand for ensemble.workers")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="atomcavity", description="Atom-cavity transmission simulations")
    p.add_argument("--version", action="version", version=_version_info())
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("derive", "transmission", "average", "fit-temp", "sweep", "pump-map",
                 "fit-photon", "trace", "grid-dump"):
        sub.add_parser(name, parents=[common])
    pre = sub.add_parser("preset", parents=[common], help="run every step of a shipped preset")
    pre.add_argument("name", choices=sorted(PRESET_PLAN))
    return p


def resolve_config(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"ensemble.seed={args.seed}", f"detection.seed={args.seed}"]
    if args.workers is not None:
        overrides.append(f"ensemble.workers={args.workers}")
    preset = args.preset
    if args.command == "preset":
        preset = args.name
    return RunConfig.load(preset=preset, path=args.config, summary=args.from_summary,
                          overrides=overrides)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(cfg)
        steps = PRESET_PLAN[args.name] if args.command == "preset" else [args.command]
        for step in steps:
            COMMANDS[step](run)
        label = f"preset {args.name}" if args.command == "preset" else args.command
        run.write(args.out, label)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
