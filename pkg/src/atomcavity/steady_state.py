"""Steady state of a driven two-level atom in a damped cavity mode.

Hilbert space is atom (2 levels) x field (Fock states 0..n_max), atom
index first. Density matrices are vectorised row-major, so that
vec(A rho B) = kron(A, B.T) vec(rho).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConvergenceError, NumericalError, TruncationWarning, ValidationError


@dataclass(frozen=True)
class DriveParams:
    delta_pa: float          # omega_probe - omega_atom, rad/s
    delta_pc: float = 0.0    # omega_probe - omega_cavity, rad/s
    n_empty: float = 0.1     # empty-cavity photon number on resonance
    n_max: int = 4

    def __post_init__(self):
        if not self.n_empty > 0:
            raise ValidationError(f"n_empty must be positive, got {self.n_empty}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValidationError(f"n_max must be an integer >= 1, got {self.n_max}")


@dataclass(frozen=True)
class SteadyStateResult:
    photon_number: float
    transmission_rel: float
    atomic_excitation: float
    converged: bool


def operators(n_max: int):
    """(a, sigma_minus) on the atom x field space."""
    nf = n_max + 1
    a_f = np.diag(np.sqrt(np.arange(1, nf)), 1).astype(complex)
    sm_a = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e|, basis (g, e)
    a = np.kron(np.eye(2), a_f)
    sm = np.kron(sm_a, np.eye(nf))
    return a, sm


def _dissipator(c):
    d = c.shape[0]
    eye = np.eye(d)
    cdc = c.conj().T @ c
    return np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)


def build_liouvillian(g, drive: DriveParams, kappa, gamma):
    """Liouvillian matrix in the frame rotating at the probe frequency.

    H = -dpc a+a - dpa s+s- + g (a+ s- + s+ a) + eta (a + a+),  eta = kappa sqrt(n_empty),
    with collapse operators sqrt(2 kappa) a and sqrt(2 gamma) s-.
    """
    if not np.all(np.isfinite([g, drive.delta_pa, drive.delta_pc, kappa, gamma])):
        raise ValidationError("non-finite Liouvillian parameter")
    if drive.n_empty > drive.n_max / 2:
        warnings.warn(
            f"n_empty={drive.n_empty} is large for a Fock basis cut at n_max={drive.n_max}",
            TruncationWarning, stacklevel=2,
        )
    a, sm = operators(drive.n_max)
    ad, sp = a.conj().T, sm.conj().T
    eta = kappa * np.sqrt(drive.n_empty)
    H = (-drive.delta_pc * ad @ a - drive.delta_pa * sp @ sm
         + g * (ad @ sm + sp @ a) + eta * (a + ad))
    eye = np.eye(H.shape[0])
    L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
    L += _dissipator(np.sqrt(2 * kappa) * a)
    L += _dissipator(np.sqrt(2 * gamma) * sm)
    return L


def steady_state(liouvillian):
    """Solve L rho = 0 with Tr rho = 1 (trace row replaces the first equation)."""
    D = liouvillian.shape[0]
    d = int(round(np.sqrt(D)))
    M = liouvillian.copy()
    b = np.zeros(D, dtype=complex)
    M[0, :] = np.eye(d).reshape(-1)
    b[0] = 1.0
    try:
        vec = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"steady-state system is singular: {exc}") from exc
    rho = vec.reshape(d, d)
    scale = np.abs(liouvillian).max()
    if np.abs(liouvillian @ vec).max() > 1e-8 * scale:
        raise NumericalError("steady state does not satisfy L rho = 0; "
                             "Liouvillian likely has more than one stationary state")
    return 0.5 * (rho + rho.conj().T)


def transmission_batch(g, delta_pa, drive: DriveParams, kappa, gamma):
    """Master-equation (photon number, atomic excitation) for many (g, delta_pa) pairs.

    The Liouvillian is affine in g and delta_pa, so the three parts are
    built once and the stacked linear systems are solved together.
    ``drive.delta_pa`` is ignored.
    """
    g = np.atleast_1d(np.asarray(g, float))
    delta_pa = np.atleast_1d(np.asarray(delta_pa, float))
    g, delta_pa = np.broadcast_arrays(g, delta_pa)
    base = replace(drive, delta_pa=0.0)
    L0 = build_liouvillian(0.0, base, kappa, gamma)
    Lg = build_liouvillian(1.0, base, kappa, gamma) - L0
    Ld = build_liouvillian(0.0, replace(base, delta_pa=1.0), kappa, gamma) - L0
    D = L0.shape[0]
    d = int(round(np.sqrt(D)))
    trace_row = np.eye(d).reshape(-1)
    a, sm = operators(drive.n_max)
    num_op = (a.conj().T @ a).T.reshape(-1)   # Tr(rho A) = vec(rho) . vec(A.T)
    exc_op = (sm.conj().T @ sm).T.reshape(-1)
    n_out = np.empty(g.shape)
    e_out = np.empty(g.shape)
    flat_g, flat_d = g.reshape(-1), delta_pa.reshape(-1)
    for start in range(0, flat_g.size, 256):
        gs = flat_g[start:start + 256]
        ds = flat_d[start:start + 256]
        L = L0[None] + gs[:, None, None] * Lg[None] + ds[:, None, None] * Ld[None]
        M = L.copy()
        M[:, 0, :] = trace_row
        b = np.zeros((len(gs), D), dtype=complex)
        b[:, 0] = 1.0
        try:
            vec = np.linalg.solve(M, b[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"steady-state system is singular: {exc}") from exc
        resid = np.abs(np.einsum("bij,bj->bi", L, vec)).max(axis=1)
        if np.any(resid > 1e-8 * np.abs(L).max(axis=(1, 2))):
            raise NumericalError("batched steady state failed the residual check")
        n_out.reshape(-1)[start:start + 256] = np.real(vec @ num_op)
        e_out.reshape(-1)[start:start + 256] = np.real(vec @ exc_op)
    return n_out, e_out


def weak_drive_transmission(g, delta_pa, delta_pc, kappa, gamma):
    """Relative transmission in the low-saturation limit (broadcasts over arrays)."""
    atom = gamma - 1j * np.asarray(delta_pa)
    num = np.abs(kappa * atom) ** 2
    den = np.abs((kappa - 1j * np.asarray(delta_pc)) * atom + np.asarray(g) ** 2) ** 2
    return num / den


def _expectations(g, drive, kappa, gamma):
    rho = steady_state(build_liouvillian(g, drive, kappa, gamma))
    a, sm = operators(drive.n_max)
    n = float(np.real(np.trace(rho @ a.conj().T @ a)))
    exc = float(np.real(np.trace(rho @ sm.conj().T @ sm)))
    return n, exc


def transmission(g, drive: DriveParams, kappa, gamma, check_convergence=True) -> SteadyStateResult:
    """Master-equation transmission; truncation checked against n_max + 2."""
    n, exc = _expectations(g, drive, kappa, gamma)
    converged = True
    if check_convergence:
        n2, _ = _expectations(g, replace(drive, n_max=drive.n_max + 2), kappa, gamma)
        converged = abs(n2 - n) <= 1e-4 * max(abs(n2), 1e-300)
    return SteadyStateResult(
        photon_number=n,
        transmission_rel=n / drive.n_empty,
        atomic_excitation=exc,
        converged=converged,
    )


def scattering_rate(g, delta_pa, n_local, gamma, dispersive=True, kappa=None, n_max=4):
    """Photon scattering rate 2 gamma <s+s-> for an atom seeing n_local photons.

    The closed form 2 gamma g^2 n / (delta^2 + gamma^2) is used when
    ``dispersive`` is set. Otherwise the master equation is solved with the
    drive adjusted so that the intra-cavity photon number (atom present)
    equals n_local; this needs ``kappa``.
    """
    if dispersive:
        return 2 * gamma * np.asarray(g) ** 2 * np.asarray(n_local) / (np.asarray(delta_pa) ** 2 + gamma**2)
    if kappa is None:
        raise ValidationError("master-equation scattering rate needs kappa")
    if n_local <= 0:
        return 0.0
    drive = DriveParams(delta_pa=delta_pa, n_empty=n_local, n_max=n_max)
    n_with, _ = _expectations(g, drive, kappa, gamma)
    # linear regime: rescale the drive once so that <a+a> hits n_local
    drive = replace(drive, n_empty=n_local * n_local / n_with)
    n_with, exc = _expectations(g, drive, kappa, gamma)
    if abs(n_with - n_local) > 1e-2 * n_local:
        raise ConvergenceError("drive rescaling failed; atom is not in the weak-excitation regime")
    return 2 * gamma * exc
