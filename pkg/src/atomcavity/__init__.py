"""Steady-state and Monte-Carlo model of atoms trapped in a high-finesse cavity."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .physics import (AtomStructure, CavityParams, DerivedCavity, TrapParams, branching_ratios,
                      cesium_d2, cooperativity, coupling_for_mF, derive_cavity, dipole_strength,
                      trap_frequencies)
from .geometry import FieldGeometry, Position, coupling_at, mode_amplitude, stark_shift
from .steady_state import DriveParams, SteadyStateResult, transmission, weak_drive_transmission
from .ensemble import (EnsembleSpec, TransmissionTable, averaged_transmission,
                       ensemble_transmission, fit_temperature, sample_positions)
from .experiments import (PumpProtocol, SweepProtocol, dip_width, fit_photon_number,
                          sweep_transmission, transfer_map)
from .detection import DetectionChain, TraceEvent, expected_count_rate, hopping_process, synth_trace
