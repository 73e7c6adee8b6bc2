"""Qubit and hardware model for exchange-driven singlet-triplet gates.

The qubit lives in the {|S>, |T0>} subspace of a gated double quantum dot.
Its Hamiltonian in angular-frequency units (hbar = 1) is

    H = J(eps(t))/2 * sigma_z + dbz/2 * sigma_x,

where the exchange coupling J follows an exponential transfer function of
the detuning voltage eps, and dbz is the (stabilized) Overhauser field
gradient.  Control happens through sample-and-hold detuning pulses from an
AWG; finite rise times are modeled as a single-pole low-pass filter on the
rectangular command.

Units throughout: time in ns, angular frequencies in rad/ns, detuning in uV.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)

#: Trailing baseline window, in units of the rise time constant.
WAIT_RISE_FACTOR = 4.0

#: dbz must exceed J(eps_min) by at least this factor for a clocked pulse.
CLOCK_MARGIN = 10.0


class InfeasibleClockError(ValueError):
    """No dbz value satisfies the clock condition for the requested n_dbz."""


@dataclass(frozen=True)
class DeviceModel:
    """Physical and hardware parameters of one device.

    Parameters
    ----------
    j0 : float
        Exchange prefactor, rad/ns.
    eps0 : float
        Exponential scale of the transfer function, uV.
    tau_rise : float
        Rise time constant of the pulse hardware, ns.
    eps_min, eps_max : float
        Detuning bounds available to the AWG, uV.
    t_sample : float
        AWG sample period, ns.
    n_sub : int
        Sub-steps per AWG sample used for rise-filtered propagation.
    """

    j0: float
    eps0: float
    tau_rise: float
    eps_min: float
    eps_max: float
    t_sample: float = 1.0
    n_sub: int = 10

    def __post_init__(self):
        if not (self.j0 > 0 and self.eps0 > 0 and self.tau_rise > 0):
            raise ValueError("j0, eps0 and tau_rise must be positive")
        if not self.t_sample > 0:
            raise ValueError("t_sample must be positive")
        if not self.eps_min < self.eps_max:
            raise ValueError("eps_min must be below eps_max")
        if not (isinstance(self.n_sub, int) and self.n_sub >= 1):
            raise ValueError("n_sub must be an integer >= 1")

    def replace(self, **kwargs) -> "DeviceModel":
        params = dict(
            j0=self.j0, eps0=self.eps0, tau_rise=self.tau_rise,
            eps_min=self.eps_min, eps_max=self.eps_max,
            t_sample=self.t_sample, n_sub=self.n_sub,
        )
        params.update(kwargs)
        return DeviceModel(**params)


#: Default device.  The exchange prefactor and detuning window are assumptions
#: calibrated so that J(eps_min) ~ 2pi x 1 MHz sits far below typical dbz
#: values while J(eps_max) ~ 4 rad/ns allows fast z-rotations.
DEFAULT_DEVICE = DeviceModel(
    j0=1.0, eps0=250.0, tau_rise=1.0, eps_min=-1250.0, eps_max=350.0,
    t_sample=1.0, n_sub=10,
)


def exchange_j(eps, device: DeviceModel):
    """Exchange coupling J(eps) = j0 * exp(eps / eps0) in rad/ns."""
    return device.j0 * np.exp(np.asarray(eps, dtype=float) / device.eps0)


def clocked_dbz(n_dbz: int, total_time: float, j_min: float) -> float:
    """dbz satisfying the clock condition sqrt(dbz^2 + j_min^2) * T = 2 pi n.

    Raises
    ------
    InfeasibleClockError
        If ``2 pi n_dbz / total_time <= j_min``, i.e. n_dbz is too small for
        this duration and exchange baseline.
    """
    if n_dbz < 1:
        raise InfeasibleClockError(f"n_dbz must be >= 1, got {n_dbz}")
    omega = 2.0 * math.pi * n_dbz / total_time
    if omega <= j_min:
        raise InfeasibleClockError(
            f"clock rate 2*pi*{n_dbz}/{total_time} = {omega:.6g} rad/ns does not "
            f"exceed J(eps_min) = {j_min:.6g} rad/ns"
        )
    return math.sqrt(omega * omega - j_min * j_min)


@dataclass(frozen=True)
class GateTarget:
    """Target rotation: angle about a unit axis on the Bloch sphere."""

    axis: tuple
    angle: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError("axis must be a unit 3-vector")
        if not (0.0 <= self.angle <= 2.0 * math.pi):
            raise ValueError("angle must lie in [0, 2*pi]")
        object.__setattr__(self, "axis", tuple(float(a) for a in axis))

    def unitary(self) -> np.ndarray:
        """exp(-i * angle/2 * axis.sigma)."""
        n = np.asarray(self.axis)
        half = 0.5 * self.angle
        nsigma = n[0] * SIGMA_X + n[1] * SIGMA_Y + n[2] * SIGMA_Z
        return math.cos(half) * IDENTITY2 - 1j * math.sin(half) * nsigma

    def rotation_vector(self) -> np.ndarray:
        return self.angle * np.asarray(self.axis)


TARGET_X90 = GateTarget(axis=(1.0, 0.0, 0.0), angle=math.pi / 2)
TARGET_Y90M = GateTarget(axis=(0.0, -1.0, 0.0), angle=math.pi / 2)
TARGET_X180 = GateTarget(axis=(1.0, 0.0, 0.0), angle=math.pi)

NAMED_TARGETS = {"x90": TARGET_X90, "y90m": TARGET_Y90M, "x180": TARGET_X180}


@dataclass(frozen=True)
class PulseSequence:
    """One gate: n_seg commanded detuning samples plus clock metadata.

    The commanded waveform is ``eps[j]`` held for one sample period each,
    followed by a wait window of ``4 * tau_rise`` at ``eps_min`` that lets the
    filtered detuning relax back to the baseline.  ``dbz`` satisfies the
    clock condition ``sqrt(dbz^2 + J(eps_min)^2) * total_time = 2 pi n_dbz``.
    """

    eps: np.ndarray
    n_dbz: int
    dbz: float
    total_time: float
    target: GateTarget
    device: DeviceModel
    name: str = ""

    def __post_init__(self):
        eps = np.array(self.eps, dtype=float)
        eps.flags.writeable = False
        object.__setattr__(self, "eps", eps)
        dev = self.device
        if eps.ndim != 1 or eps.size == 0:
            raise ValueError("eps must be a non-empty 1-d vector")
        if not np.all(np.isfinite(eps)):
            raise ValueError("eps contains non-finite values")
        if np.any(eps < dev.eps_min - 1e-9) or np.any(eps > dev.eps_max + 1e-9):
            raise ValueError("eps samples violate device bounds")
        expected_t = eps.size * dev.t_sample + WAIT_RISE_FACTOR * dev.tau_rise
        if abs(self.total_time - expected_t) > 1e-9 * max(1.0, expected_t):
            raise ValueError("total_time inconsistent with n_seg and tau_rise")
        j_min = float(exchange_j(dev.eps_min, dev))
        clock = math.sqrt(self.dbz**2 + j_min**2) * self.total_time
        if abs(clock - 2.0 * math.pi * self.n_dbz) > 1e-12 * clock:
            raise ValueError("dbz violates the clock condition")
        if not j_min < self.dbz / CLOCK_MARGIN:
            raise ValueError(
                f"J(eps_min) = {j_min:.4g} is not small against dbz = {self.dbz:.4g}"
            )

    @property
    def n_seg(self) -> int:
        return int(self.eps.size)


def make_pulse(eps, n_dbz: int, device: DeviceModel, target: GateTarget,
               name: str = "") -> PulseSequence:
    """Build a clocked :class:`PulseSequence` from commanded samples."""
    eps = np.asarray(eps, dtype=float)
    total_time = eps.size * device.t_sample + WAIT_RISE_FACTOR * device.tau_rise
    j_min = float(exchange_j(device.eps_min, device))
    dbz = clocked_dbz(n_dbz, total_time, j_min)
    return PulseSequence(eps=eps, n_dbz=n_dbz, dbz=dbz, total_time=total_time,
                         target=target, device=device, name=name)


# ---------------------------------------------------------------------------
# Waveform rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Waveform:
    """Rise-filtered detuning trace on the propagation sub-grid."""

    t_mid: np.ndarray   # sub-step midpoints, ns
    dt: np.ndarray      # sub-step durations, ns
    eps: np.ndarray     # filtered detuning at the midpoints, uV

    @property
    def duration(self) -> float:
        return float(np.sum(self.dt))


def _entry_states(eps_cmd: np.ndarray, eps_init, decay: float) -> np.ndarray:
    """Filter state at each sample boundary for commanded samples.

    ``eps_cmd`` has shape (..., n_seg); returns shape (..., n_seg + 1) where
    the last entry is the state at the start of the wait window.
    """
    eps_cmd = np.asarray(eps_cmd, dtype=float)
    n_seg = eps_cmd.shape[-1]
    out = np.empty(eps_cmd.shape[:-1] + (n_seg + 1,), dtype=float)
    out[..., 0] = eps_init
    for j in range(n_seg):
        out[..., j + 1] = eps_cmd[..., j] + (out[..., j] - eps_cmd[..., j]) * decay
    return out


def _wait_substeps(device: DeviceModel, wait_duration: float) -> int:
    target_dt = device.t_sample / device.n_sub
    return max(1, int(round(wait_duration / target_dt)))


def render_batch(eps_cmd: np.ndarray, device: DeviceModel,
                 wait_duration: float) -> tuple:
    """Render rise-filtered waveforms for a batch of commanded pulses.

    Parameters
    ----------
    eps_cmd : ndarray, shape (..., n_seg)
        Commanded sample values, uV.
    device : DeviceModel
        Supplies the filter constant, transfer function and sub-division.
    wait_duration : float
        Programmed trailing window at eps_min, ns (4 * nominal tau_rise; may
        differ from ``4 * device.tau_rise`` when evaluating under a
        mismatched device).

    Returns
    -------
    (t_mid, dt, eps_mid) with eps_mid of shape (..., n_steps).
    """
    eps_cmd = np.asarray(eps_cmd, dtype=float)
    n_seg = eps_cmd.shape[-1]
    ts, tau, n_sub = device.t_sample, device.tau_rise, device.n_sub

    decay_sample = math.exp(-ts / tau)
    entry = _entry_states(eps_cmd, device.eps_min, decay_sample)

    # midpoint decay factors within one sample
    k = (np.arange(n_sub) + 0.5) * (ts / n_sub)
    decay_mid = np.exp(-k / tau)                                   # (n_sub,)
    seg_mid = (eps_cmd[..., :, None]
               + (entry[..., :n_seg, None] - eps_cmd[..., :, None]) * decay_mid)

    n_wait = _wait_substeps(device, wait_duration)
    dt_wait = wait_duration / n_wait
    kw = (np.arange(n_wait) + 0.5) * dt_wait
    wait_mid = (device.eps_min
                + (entry[..., n_seg, None] - device.eps_min) * np.exp(-kw / tau))

    eps_mid = np.concatenate(
        [seg_mid.reshape(eps_cmd.shape[:-1] + (n_seg * n_sub,)), wait_mid],
        axis=-1,
    )
    dt = np.concatenate([np.full(n_seg * n_sub, ts / n_sub),
                         np.full(n_wait, dt_wait)])
    t_mid = np.cumsum(dt) - 0.5 * dt
    return t_mid, dt, eps_mid


def rendered_waveform(pulse: PulseSequence, device: DeviceModel | None = None) -> Waveform:
    """Rise-filtered detuning of one pulse on the propagation sub-grid.

    ``device`` overrides the physical parameters (filter constant, transfer
    function) while the programmed timing -- sample period and wait window --
    stays that of the pulse.
    """
    dev = pulse.device if device is None else device
    wait = pulse.total_time - pulse.n_seg * pulse.device.t_sample
    dev = dev.replace(t_sample=pulse.device.t_sample)
    t_mid, dt, eps_mid = render_batch(pulse.eps, dev, wait)
    return Waveform(t_mid=t_mid, dt=dt, eps=eps_mid)


def filtered_detuning(pulse: PulseSequence, t, device: DeviceModel | None = None):
    """Exact rise-filtered detuning at arbitrary times ``t`` (ns)."""
    dev = pulse.device if device is None else device
    ts, tau = pulse.device.t_sample, dev.tau_rise
    eps_cmd = pulse.eps
    n_seg = eps_cmd.size
    entry = _entry_states(eps_cmd, dev.eps_min, math.exp(-ts / tau))

    t = np.asarray(t, dtype=float)
    j = np.clip(np.floor(t / ts).astype(int), 0, n_seg)  # segment index; n_seg = wait
    in_wait = j >= n_seg
    cmd = np.where(in_wait, dev.eps_min, eps_cmd[np.minimum(j, n_seg - 1)])
    t_start = np.where(in_wait, n_seg * ts, j * ts)
    e0 = entry[np.minimum(j, n_seg)]
    return cmd + (e0 - cmd) * np.exp(-(t - t_start) / tau)


# ---------------------------------------------------------------------------
# SU(2) propagation via unit quaternions
# ---------------------------------------------------------------------------
# U = a*I - i*(b*sx + c*sy + d*sz) <-> unit quaternion (a, b, c, d); products
# of such factors stay in SU(2), so traces are real by construction.

def quat_multiply(q_late: np.ndarray, q_early: np.ndarray) -> np.ndarray:
    """Quaternion of U_late @ U_early; inputs broadcast over leading axes."""
    a1, b1, c1, d1 = np.moveaxis(q_late, -1, 0)
    a2, b2, c2, d2 = np.moveaxis(q_early, -1, 0)
    return np.stack([
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + a2 * b1 + c1 * d2 - d1 * c2,
        a1 * c2 + a2 * c1 + d1 * b2 - b1 * d2,
        a1 * d2 + a2 * d1 + b1 * c2 - c1 * b2,
    ], axis=-1)


def step_quaternions(j_vals: np.ndarray, dbz, dt: np.ndarray,
                     angle_scale: float = 1.0) -> np.ndarray:
    """Per-step quaternions for exp(-i*dt*(J sz + dbz sx)/2).

    ``j_vals`` has shape (..., n); ``dbz`` broadcasts against it.  With
    ``angle_scale=0.5`` the half-step factors are produced instead.
    """
    j_vals = np.asarray(j_vals, dtype=float)
    dbz = np.asarray(dbz, dtype=float)
    omega = np.sqrt(j_vals * j_vals + dbz * dbz)
    half = 0.5 * angle_scale * omega * dt
    sinc_half = np.sinc(half / math.pi)  # sin(half)/half, safe at 0
    pref = 0.5 * angle_scale * dt * sinc_half
    ca = np.cos(half)
    bx = pref * dbz
    bz = pref * j_vals
    return np.stack([ca, np.broadcast_to(bx, ca.shape),
                     np.zeros_like(ca), np.broadcast_to(bz, ca.shape)], axis=-1)


def quat_reduce(q: np.ndarray) -> np.ndarray:
    """Time-ordered product over axis -2: q[..., n-1] * ... * q[..., 0]."""
    q = np.asarray(q)
    while q.shape[-2] > 1:
        n = q.shape[-2]
        if n % 2:
            head, tail = q[..., :1, :], q[..., 1:, :]
            tail = quat_multiply(tail[..., 1::2, :], tail[..., 0::2, :])
            q = np.concatenate([head, tail], axis=-2)
        else:
            q = quat_multiply(q[..., 1::2, :], q[..., 0::2, :])
    return q[..., 0, :]


def quat_prefix(q: np.ndarray) -> np.ndarray:
    """Inclusive prefix products P_k = q_k * ... * q_0 along axis -2."""
    q = np.array(q, dtype=float)
    n = q.shape[-2]
    shift = 1
    while shift < n:
        prod = quat_multiply(q[..., shift:, :], q[..., :-shift, :])
        q[..., shift:, :] = prod
        shift *= 2
    return q


def quat_to_unitary(q: np.ndarray) -> np.ndarray:
    """2x2 complex matrix for quaternion(s) of shape (..., 4)."""
    a, b, c, d = np.moveaxis(np.asarray(q), -1, 0)
    u = np.empty(np.asarray(a).shape + (2, 2), dtype=complex)
    u[..., 0, 0] = a - 1j * d
    u[..., 0, 1] = -c - 1j * b
    u[..., 1, 0] = c - 1j * b
    u[..., 1, 1] = a + 1j * d
    return u


def unitary_to_quat(u: np.ndarray) -> np.ndarray:
    """Quaternion of an SU(2)-projected unitary (global phase removed)."""
    u = np.asarray(u, dtype=complex)
    det = u[..., 0, 0] * u[..., 1, 1] - u[..., 0, 1] * u[..., 1, 0]
    v = u / np.sqrt(det)[..., None, None]
    a = 0.5 * (v[..., 0, 0] + v[..., 1, 1]).real
    b = -0.5 * (v[..., 0, 1] + v[..., 1, 0]).imag
    c = 0.5 * (v[..., 1, 0] - v[..., 0, 1]).real
    d = 0.5 * (v[..., 1, 1] - v[..., 0, 0]).imag
    q = np.stack([a, b, c, d], axis=-1)
    # fix the SU(2) sign so the scalar part is non-negative
    flip = q[..., :1] < 0
    return np.where(flip, -q, q)


def quat_zrow(q: np.ndarray) -> np.ndarray:
    """Toggling-frame weights R_k = Tr(U^dag sz U sk)/2 for k = x, y, z.

    Equals the z-row of the adjoint rotation matrix of U, i.e. the rotation
    of the z-axis by the inverse quaternion.
    """
    a, b, c, d = np.moveaxis(np.asarray(q), -1, 0)
    # rotate zhat by the conjugate quaternion (a, -v)
    rx = 2.0 * (b * d - a * c)
    ry = 2.0 * (c * d + a * b)
    rz = a * a - b * b - c * c + d * d
    return np.stack([rx, ry, rz], axis=-1)


def propagate(pulse: PulseSequence, device: DeviceModel | None = None,
              dbz: float | None = None, eps_offset: float = 0.0) -> np.ndarray:
    """Time-ordered propagator of one pulse as a 2x2 SU(2) matrix.

    The Hamiltonian is taken piecewise constant on the rendered sub-grid,
    each factor evaluated in closed form.  ``device`` substitutes mismatched
    physical parameters, ``dbz`` overrides the clocked gradient, and
    ``eps_offset`` adds a common quasistatic detuning shift (applied to the
    filtered waveform; the rise filter is linear, so this is exact).
    """
    wf = rendered_waveform(pulse, device=device)
    dev = pulse.device if device is None else device
    eps = wf.eps + eps_offset
    if not np.all(np.isfinite(eps)):
        raise ValueError("non-finite detuning in rendered waveform")
    j_vals = exchange_j(eps, dev)
    q = step_quaternions(j_vals, pulse.dbz if dbz is None else dbz, wf.dt)
    return quat_to_unitary(quat_reduce(q))


# ---------------------------------------------------------------------------
# Phase canonicalization and rotation decomposition
# ---------------------------------------------------------------------------

def is_unitary(u: np.ndarray, tol: float = 1e-9) -> bool:
    u = np.asarray(u)
    return bool(np.linalg.norm(u.conj().T @ u - np.eye(2)) < tol)


def canonicalize_phase(u: np.ndarray) -> tuple:
    """Rotate the global phase so that Tr(u) is real and non-negative.

    Returns ``(u_canonical, degenerate)``; traceless inputs (|Tr| < 1e-12)
    keep their phase and are flagged degenerate.
    """
    u = np.asarray(u, dtype=complex)
    tr = np.trace(u)
    if abs(tr) < 1e-12:
        return u.copy(), True
    return u * (tr.conjugate() / abs(tr)), False


@dataclass(frozen=True)
class RotationDecomposition:
    angle: float
    axis: np.ndarray
    degenerate: bool = False

    def rotation_vector(self) -> np.ndarray:
        return self.angle * self.axis


def decompose_rotation(u: np.ndarray) -> RotationDecomposition:
    """Axis-angle form of a 2x2 unitary, global phase stripped.

    Returns an angle in [0, pi] (the canonical-phase branch with
    cos(angle/2) >= 0).  When sin(angle/2) < 1e-9 the axis is reported as
    (0, 0, 1) and the decomposition is flagged degenerate.
    """
    u = np.asarray(u, dtype=complex)
    if not is_unitary(u, tol=1e-8):
        raise ValueError("input is not unitary")
    q = unitary_to_quat(u)
    a = min(1.0, max(-1.0, float(q[0])))
    angle = 2.0 * math.acos(a)
    s = math.sqrt(max(0.0, 1.0 - a * a))
    if s < 1e-9:
        return RotationDecomposition(angle=angle, axis=np.array([0.0, 0.0, 1.0]),
                                     degenerate=True)
    return RotationDecomposition(angle=angle, axis=q[1:] / s, degenerate=False)


def rotation_vector_mismatch(u: np.ndarray, target: GateTarget) -> np.ndarray:
    """phi*n of ``u`` minus the target rotation vector, branch-resolved.

    A rotation by phi about n equals one by 2*pi - phi about -n (up to global
    phase); the representative closer to the target vector is used so that
    targets with angles beyond pi remain reachable and the mismatch stays
    continuous near the optimum.
    """
    dec = decompose_rotation(u)
    tvec = target.rotation_vector()
    if dec.degenerate:
        axis = np.asarray(target.axis)
        cand = [dec.angle * dec.axis, (2.0 * math.pi - dec.angle) * axis]
    else:
        cand = [dec.angle * dec.axis, (2.0 * math.pi - dec.angle) * (-dec.axis)]
    deltas = [c - tvec for c in cand]
    return min(deltas, key=np.linalg.norm)
