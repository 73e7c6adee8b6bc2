"""Average gate fidelity between single-qubit processes and target unitaries."""
from __future__ import annotations

import numpy as np

from .model import GateTarget, IDENTITY2, SIGMA_X, SIGMA_Y, SIGMA_Z, is_unitary

#: Density matrices of the six axial Bloch states (+/-x, +/-y, +/-z).
BLOCH_STATES = tuple(
    0.5 * (IDENTITY2 + s * p)
    for p in (SIGMA_X, SIGMA_Y, SIGMA_Z)
    for s in (1.0, -1.0)
)


def _as_unitary(target) -> np.ndarray:
    if isinstance(target, GateTarget):
        return target.unitary()
    return np.asarray(target, dtype=complex)


def avg_gate_fidelity(u: np.ndarray, target) -> float:
    """Average gate fidelity F = (|Tr(U_t^dag U)|^2 + 2) / 6 for qubits.

    ``target`` may be a :class:`GateTarget` or a 2x2 unitary.  Both inputs
    must be unitary; the result is invariant under global phases.
    """
    u = np.asarray(u, dtype=complex)
    ut = _as_unitary(target)
    if not (is_unitary(u, tol=1e-8) and is_unitary(ut, tol=1e-8)):
        raise ValueError("avg_gate_fidelity requires unitary inputs")
    tr = np.trace(ut.conj().T @ u)
    return float((abs(tr) ** 2 + 2.0) / 6.0)


def avg_gate_fidelity_six_state(u: np.ndarray, target) -> float:
    """Average gate fidelity as the mean over the six axial Bloch states.

    Independent construction: (1/6) * sum_j Tr[U_t rho_j U_t^dag U rho_j U^dag].
    Agrees with :func:`avg_gate_fidelity` for unitary processes.
    """
    u = np.asarray(u, dtype=complex)
    ut = _as_unitary(target)
    total = 0.0
    for rho in BLOCH_STATES:
        ideal = ut @ rho @ ut.conj().T
        actual = u @ rho @ u.conj().T
        total += np.trace(ideal @ actual).real
    return float(total / 6.0)


def fidelity_from_quat_overlap(dot: np.ndarray) -> np.ndarray:
    """F from the quaternion inner product <q_u, q_target>.

    For SU(2) representatives, Tr(U_t^dag U) = 2 <q_u, q_t>, hence
    F = (4 <q_u, q_t>^2 + 2) / 6.  Vectorized over leading axes.
    """
    return (4.0 * np.asarray(dot) ** 2 + 2.0) / 6.0
