"""Run configuration: layered INI files -> validated parameter objects.

Precedence, lowest first: shipped defaults, preset, user config file
(``--config`` or $ATOMCAVITY_CONFIG), a previous run summary, ``--set``
flags. Every key must already exist in the shipped defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterable

import numpy as np

from .detection import DetectionChain
from .ensemble import EnsembleSpec
from .errors import ValidationError
from .experiments import PumpProtocol, SweepProtocol
from .geometry import FieldGeometry
from .physics import H, KB, MHZ, AtomStructure, CavityParams, TrapParams, derive_cavity
from .steady_state import DriveParams

ENV_CONFIG = "ATOMCAVITY_CONFIG"
PRESETS = ("fig3", "fig5", "fig6", "fig7", "operating_point")


def _read_text(name):
    return resources.files("atomcavity").joinpath("data", name).read_text()


def defaults_text():
    return _read_text("defaults.ini")


def defaults_hash():
    return hashlib.sha256(defaults_text().encode()).hexdigest()[:16]


def _parse(text, origin):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse {origin}: {exc}") from exc
    return {s: dict(cp[s]) for s in cp.sections()}


def _merge(base, overlay, origin):
    for section, values in overlay.items():
        if section not in base:
            raise ValidationError(f"{origin}: unknown section [{section}]")
        for key, value in values.items():
            if key not in base[section]:
                raise ValidationError(f"{origin}: unknown key '{key}' in [{section}]")
            base[section][key] = str(value)


def parse_override(item):
    """'section.key=value' -> (section, key, value)."""
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ValidationError(f"override must look like section.key=value, got {item!r}")
    lhs, value = item.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section, key.strip(), value.strip()


def _float(raw, where):
    try:
        v = float(raw)
    except ValueError:
        raise ValidationError(f"{where}: expected a number, got {raw!r}") from None
    if not np.isfinite(v):
        raise ValidationError(f"{where}: value must be finite")
    return v


def _int(raw, where):
    v = _float(raw, where)
    if v != int(v):
        raise ValidationError(f"{where}: expected an integer, got {raw!r}")
    return int(v)


def _bool(raw, where):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"{where}: expected a boolean, got {raw!r}")


def parse_range(raw, where):
    """'start:stop:num' -> numpy linspace."""
    parts = raw.split(":")
    if len(parts) != 3:
        raise ValidationError(f"{where}: expected start:stop:num, got {raw!r}")
    a, b = _float(parts[0], where), _float(parts[1], where)
    n = _int(parts[2], where)
    if n < 1:
        raise ValidationError(f"{where}: need at least one point")
    return np.linspace(a, b, n)


@dataclass
class RunConfig:
    values: Dict[str, Dict[str, str]]
    sources: list = field(default_factory=list)

    @classmethod
    def load(cls, preset=None, path=None, summary=None, overrides: Iterable[str] = (),
             use_env=True):
        values = _parse(defaults_text(), "defaults.ini")
        sources = ["defaults.ini"]
        if preset:
            if preset not in PRESETS:
                raise ValidationError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
            _merge(values, _parse(_read_text(f"presets/{preset}.ini"), preset), f"preset {preset}")
            sources.append(f"preset:{preset}")
        if path is None and use_env:
            path = os.environ.get(ENV_CONFIG) or None
        if path:
            try:
                text = open(path).read()
            except OSError as exc:
                raise ValidationError(f"cannot read config {path}: {exc}") from exc
            _merge(values, _parse(text, path), path)
            sources.append(str(path))
        if summary:
            try:
                with open(summary) as fh:
                    stored = json.load(fh)["config"]
            except (OSError, KeyError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read run summary {summary}: {exc}") from exc
            _merge(values, stored, summary)
            sources.append(f"summary:{summary}")
        for item in overrides:
            s, k, v = parse_override(item)
            _merge(values, {s: {k: v}}, "--set")
            sources.append(f"--set {item}")
        cfg = cls(values, sources)
        cfg.validate()
        return cfg

    # raw access -----------------------------------------------------------

    def f(self, section, key):
        return _float(self.values[section][key], f"{section}.{key}")

    def i(self, section, key):
        return _int(self.values[section][key], f"{section}.{key}")

    def b(self, section, key):
        return _bool(self.values[section][key], f"{section}.{key}")

    def s(self, section, key):
        return self.values[section][key].strip()

    def validate(self):
        """Build every parameter object once so invalid values fail before any work."""
        self.cavity_params()
        self.derived()
        self.kappa()
        self.atom()
        self.geometry()
        self.drive()
        self.ensemble()
        self.sweep()
        self.pump()
        self.detection_chain()
        self.table_bins()
        if self.i("ensemble", "workers") < 1:
            raise ValidationError("ensemble.workers must be >= 1")
        for sec, key in (("transmission", "g_MHz"), ("transmission", "delta_MHz"),
                         ("grid", "x_um"), ("grid", "y_um"), ("grid", "z_um")):
            parse_range(self.s(sec, key), f"{sec}.{key}")

    # parameter objects -----------------------------------------------------

    def cavity_params(self):
        return CavityParams(
            mirror_transmission=self.f("cavity", "mirror_transmission_ppm") * 1e-6,
            mirror_loss=self.f("cavity", "mirror_loss_ppm") * 1e-6,
            length=self.f("cavity", "length_um") * 1e-6,
            radius_of_curvature=self.f("cavity", "radius_of_curvature_mm") * 1e-3,
            probe_wavelength=self.f("cavity", "probe_wavelength_nm") * 1e-9,
            lock_wavelength=self.f("cavity", "lock_wavelength_nm") * 1e-9,
        )

    def derived(self):
        return derive_cavity(self.cavity_params())

    def kappa(self):
        raw = self.s("cavity", "kappa_MHz")
        if raw.lower() == "derived":
            return self.derived().kappa
        k = _float(raw, "cavity.kappa_MHz")
        if k <= 0:
            raise ValidationError("cavity.kappa_MHz must be positive")
        return k * MHZ

    def atom(self):
        from .physics import cesium_d2
        from scipy.constants import atomic_mass
        a = cesium_d2(
            g_max_MHz=self.f("atom", "g_max_MHz"),
            gamma_MHz=self.f("atom", "gamma_MHz"),
            f4_f5_splitting_MHz=self.f("atom", "f4_f5_splitting_MHz"),
            f3_f4_splitting_MHz=self.f("atom", "f3_f4_splitting_MHz"),
        )
        mass = self.f("atom", "mass_amu") * atomic_mass
        return AtomStructure(gamma=a.gamma, g_max=a.g_max, mass=mass,
                             excited_hyperfine_detunings=a.excited_hyperfine_detunings,
                             branching=a.branching)

    def trap(self):
        return TrapParams(
            dipole_wavelength=self.f("trap", "dipole_wavelength_nm") * 1e-9,
            dipole_waist=self.f("trap", "dipole_waist_um") * 1e-6,
            dipole_depth=KB * self.f("trap", "dipole_depth_mK") * 1e-3,
            lock_potential_height=KB * self.f("trap", "lock_height_mK") * 1e-3,
        )

    def geometry(self):
        return FieldGeometry(
            derived_cavity=self.derived(),
            trap=self.trap(),
            stark_coeff_dipole=self.f("geometry", "stark_coeff_dipole") / H,
            stark_coeff_lock=self.f("geometry", "stark_coeff_lock") / H,
            node_origin=self.f("geometry", "node_origin_um") * 1e-6,
        )

    def drive(self):
        return DriveParams(
            delta_pa=self.f("drive", "delta_MHz") * MHZ,
            delta_pc=self.f("drive", "delta_pc_MHz") * MHZ,
            n_empty=self.f("drive", "n_empty"),
            n_max=self.i("drive", "n_max"),
        )

    def mF_weights(self):
        raw = self.s("ensemble", "mF_weights")
        if raw.lower() == "uniform":
            return tuple(np.full(9, 1 / 9))
        parts = [p for p in raw.replace(",", " ").split() if p]
        w = np.array([_float(p, "ensemble.mF_weights") for p in parts])
        if w.shape != (9,) or np.any(w < 0) or w.sum() <= 0:
            raise ValidationError("ensemble.mF_weights needs 9 non-negative numbers (m_F = -4..4)")
        return tuple(w / w.sum())

    def ensemble(self):
        return EnsembleSpec(
            temperature=self.f("ensemble", "temperature_mK") * 1e-3,
            n_samples=self.i("ensemble", "n_samples"),
            master_seed=self.i("ensemble", "seed"),
            node_offset=self.f("ensemble", "node_offset_um") * 1e-6,
            mF_weights=self.mF_weights(),
            node_average=self.b("ensemble", "node_average"),
        )

    def table_bins(self):
        gb, db = self.f("ensemble", "g_bin_MHz"), self.f("ensemble", "delta_bin_MHz")
        if gb <= 0 or db <= 0:
            raise ValidationError("table bins must be positive")
        return gb * MHZ, db * MHZ

    def workers(self):
        return self.i("ensemble", "workers")

    def sweep(self):
        return SweepProtocol(
            start_y=self.f("sweep", "start_um") * 1e-6,
            end_y=self.f("sweep", "end_um") * 1e-6,
            duration=self.f("sweep", "duration_ms") * 1e-3,
            n_atoms=self.i("sweep", "n_atoms"),
            dwell=self.f("sweep", "dwell_ms") * 1e-3,
            time_step=self.f("sweep", "time_step_ms") * 1e-3,
        )

    def pump(self):
        return PumpProtocol(
            hold_time=self.f("pump", "hold_time_us") * 1e-6,
            step=self.f("pump", "step_us") * 1e-6,
            n_empty=self.f("pump", "n_empty"),
            detuning_F3=self.f("pump", "detuning_F3_MHz") * MHZ,
            detuning_F4=self.f("pump", "detuning_F4_MHz") * MHZ,
            detuning_F5=self.f("pump", "detuning_F5_MHz") * MHZ,
            survival=self.f("pump", "survival"),
            n_trajectories=self.i("pump", "n_trajectories"),
        )

    def pump_positions(self):
        n = self.i("pump", "n_positions")
        if n < 1:
            raise ValidationError("pump.n_positions must be >= 1")
        return np.linspace(self.f("pump", "start_um"), self.f("pump", "end_um"), n) * 1e-6

    def detection_chain(self):
        return DetectionChain(
            mirror_fraction=self.derived().mirror_fraction,
            path_efficiency=self.f("detection", "path_efficiency"),
            background_rate=self.f("detection", "background_rate"),
            calibration=self.f("detection", "calibration"),
        )

    def as_dict(self):
        return {s: dict(v) for s, v in self.values.items()}
