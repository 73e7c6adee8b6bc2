"""Multi-start Levenberg-Marquardt synthesis of noise-robust gate pulses.

The vector objective for one gate stacks the three noise infidelities
(quasistatic Overhauser, quasistatic detuning, fast detuning noise) with the
three components of the axis-angle mismatch between the realized and target
rotations.  Box bounds on the commanded samples are enforced exactly through
a smooth sine reparameterization, so the inner problem is unconstrained.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .fidelity import fidelity_from_quat_overlap
from .model import (
    DEFAULT_DEVICE,
    DeviceModel,
    GateTarget,
    InfeasibleClockError,
    PulseSequence,
    WAIT_RISE_FACTOR,
    clocked_dbz,
    exchange_j,
    make_pulse,
    quat_multiply,
    quat_prefix,
    quat_reduce,
    quat_zrow,
    render_batch,
    step_quaternions,
    unitary_to_quat,
)
from .noise import (
    DEFAULT_NOISE,
    GateReport,
    NoiseModel,
    PSD_SI_TO_UV2NS,
    gate_report,
    gauss_hermite_offsets,
    psd_eval,
    quasistatic_infidelity_dbz,
    quasistatic_infidelity_eps,
    fast_noise_infidelity,
)

__all__ = [
    "LmConfig", "LmResult", "lm_minimize",
    "Eq1Context", "residuals_eq1",
    "OptimizationResult", "multistart_optimize",
    "ScanRow", "scan_grid",
    "RobustnessCase", "RobustnessResult", "robustness_scan",
]


# ---------------------------------------------------------------------------
# Levenberg-Marquardt with sine-squashed box bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LmConfig:
    max_iter: int = 150
    lambda0: float = 1e-3       # initial damping
    nu: float = 3.0             # damping scale on reject/accept
    gtol: float = 1e-11         # infinity norm of the gradient J^T r
    xtol: float = 1e-12         # infinity norm of the accepted step in x
    fd_step: float = 1.6        # forward-difference step in command space, uV

    def __post_init__(self):
        if self.nu <= 1:
            raise ValueError("nu must exceed 1")
        if self.gtol <= 0 or self.xtol <= 0 or self.fd_step <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class LmResult:
    x: np.ndarray
    cost: float
    cost_history: list
    n_iter: int
    converged: bool
    message: str


def lm_minimize(f, x0, bounds, cfg: LmConfig = LmConfig(), f_batch=None) -> LmResult:
    """Minimize ||f(x)||^2 subject to box bounds.

    Bounds are enforced through ``x = mid + half * sin(y)`` and the damped
    normal equations are solved in y-space; accepted steps never increase the
    cost.  ``f_batch``, if given, evaluates a (m, n) stack of points in one
    call and is used for the forward-difference Jacobian.

    Returns an :class:`LmResult`; ``cost_history`` holds the accepted costs,
    starting with the initial one.
    """
    x0 = np.asarray(x0, dtype=float)
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), x0.shape)
              for b in bounds)
    if np.any(lo >= hi):
        raise ValueError("lower bounds must be below upper bounds")
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def to_x(y):
        return mid + half * np.sin(y)

    y = np.arcsin(np.clip((x0 - mid) / half, -1.0, 1.0))

    if f_batch is None:
        def f_batch(xs):
            return np.array([f(x) for x in xs])

    x = to_x(y)
    r = np.asarray(f(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is not finite at the starting point")
    cost = float(r @ r)
    history = [cost]

    lam = cfg.lambda0
    n = x.size
    converged = False
    message = "max_iter reached"
    n_iter = 0

    for n_iter in range(1, cfg.max_iter + 1):
        # forward-difference Jacobian in command space, chained to y-space
        steps = np.full(n, cfg.fd_step)
        probes = x[None, :] + np.diag(steps)
        rs = np.asarray(f_batch(probes), dtype=float)
        jac_x = (rs - r[None, :]).T / steps[None, :]
        jac = jac_x * (half * np.cos(y))[None, :]

        grad = jac.T @ r
        if np.max(np.abs(grad)) < cfg.gtol:
            converged, message = True, "gradient tolerance"
            break

        jtj = jac.T @ jac
        diag = np.diag(jtj).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))

        accepted = False
        while True:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                delta = np.linalg.lstsq(jtj + lam * np.diag(diag), -grad,
                                        rcond=None)[0]
            y_new = y + delta
            x_new = to_x(y_new)
            r_new = np.asarray(f(x_new), dtype=float)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                step_x = np.max(np.abs(x_new - x))
                y, x, r, cost = y_new, x_new, r_new, cost_new
                history.append(cost)
                lam = max(lam / cfg.nu, 1e-14)
                accepted = True
                if step_x < cfg.xtol:
                    converged, message = True, "step tolerance"
                break
            lam *= cfg.nu
            if lam > 1e14:
                break
        if not accepted and lam > 1e14:
            converged, message = True, "damping limit (stationary)"
            break
        if converged:
            break

    return LmResult(x=x, cost=cost, cost_history=history, n_iter=n_iter,
                    converged=converged, message=message)


# ---------------------------------------------------------------------------
# The six-component gate residual
# ---------------------------------------------------------------------------

_IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def _default_ff_grid(noise: NoiseModel) -> np.ndarray:
    """Fixed log grid for in-loop spectral integrals: coarse where the
    filter function is flat (below ~10 MHz), dense through the peak region."""
    split = min(1e7, noise.f_high)
    lo = np.logspace(math.log10(noise.f_low), math.log10(split),
                     max(2, int(16 * math.log10(split / noise.f_low)) + 1))
    if split >= noise.f_high:
        return lo
    hi = np.logspace(math.log10(split), math.log10(noise.f_high),
                     max(2, int(144 * math.log10(noise.f_high / split)) + 1))
    return np.concatenate([lo, hi[1:]])


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


class Eq1Context:
    """Precomputed machinery for batched evaluation of the gate residual.

    Fixes the target, segment count, clocked dbz, device and noise model;
    ``residual_batch`` then maps a (m, n_seg) stack of commanded pulses to
    (m, 6) residual vectors.  The fast-noise component uses a fixed
    pre-validated frequency grid (final reported numbers are re-evaluated
    adaptively elsewhere).
    """

    def __init__(self, target: GateTarget, n_seg: int, n_dbz: int,
                 device: DeviceModel = DEFAULT_DEVICE,
                 noise: NoiseModel = DEFAULT_NOISE,
                 sqrt_mode: bool = False):
        self.target = target
        self.n_seg = int(n_seg)
        self.n_dbz = int(n_dbz)
        self.device = device
        self.noise = noise
        self.sqrt_mode = bool(sqrt_mode)

        self.wait = WAIT_RISE_FACTOR * device.tau_rise
        self.total_time = n_seg * device.t_sample + self.wait
        j_min = float(exchange_j(device.eps_min, device))
        self.dbz = clocked_dbz(n_dbz, self.total_time, j_min)

        self.q_target = unitary_to_quat(target.unitary())
        self.target_vec = target.rotation_vector()
        self.target_axis = np.asarray(target.axis)

        dbz_nodes, self.dbz_weights = gauss_hermite_offsets(
            noise.sigma_dbz, noise.n_quad)
        self.dbz_values = self.dbz + dbz_nodes
        eps_nodes, self.eps_weights = gauss_hermite_offsets(
            noise.sigma_eps, noise.n_quad)
        self.eps_scales = np.exp(eps_nodes / device.eps0)

        # spectral quadrature: I_fast = F(grid) . ff_weights
        grid = _default_ff_grid(noise)
        if noise.psd_amp > 0:
            s_uv2ns = psd_eval(grid, noise) * PSD_SI_TO_UV2NS
            self.ff_weights = (2.0 / 3.0 * s_uv2ns
                               * _trapezoid_weights(grid * 1e-9))
        else:
            self.ff_weights = np.zeros_like(grid)

        # geometry of the sub-grid and the per-step oscillatory kernel
        t_mid, dt, _ = render_batch(np.zeros(n_seg), device, self.wait)
        self.dt = dt
        omega = 2.0 * math.pi * grid * 1e-9
        half_arg = 0.5 * omega[:, None] * dt[None, :]
        window = dt[None, :] * np.sinc(half_arg / math.pi)
        self.kernel = window * np.exp(-1j * omega[:, None] * t_mid[None, :])

    # -- residual ----------------------------------------------------------

    def residual_batch(self, eps_batch: np.ndarray) -> np.ndarray:
        eps_batch = np.atleast_2d(np.asarray(eps_batch, dtype=float))
        m = eps_batch.shape[0]
        _, dt, eps_mid = render_batch(eps_batch, self.device, self.wait)
        j_vals = exchange_j(eps_mid, self.device)

        q_steps = step_quaternions(j_vals, self.dbz, dt)
        prefix = quat_prefix(q_steps)
        mismatch = self._mismatch(prefix[:, -1, :])

        qd = step_quaternions(j_vals[:, None, :],
                              self.dbz_values[None, :, None], dt)
        fd = fidelity_from_quat_overlap(quat_reduce(qd) @ self.q_target)
        i_dbz = np.maximum(0.0, 1.0 - fd @ self.dbz_weights)

        qs = step_quaternions(j_vals[:, None, :] * self.eps_scales[None, :, None],
                              self.dbz, dt)
        fs = fidelity_from_quat_overlap(quat_reduce(qs) @ self.q_target)
        i_slow = np.maximum(0.0, 1.0 - fs @ self.eps_weights)

        i_fast = self._fast_batch(j_vals, dt, q_steps, prefix)

        chans = np.column_stack([i_dbz, i_slow, i_fast])
        if self.sqrt_mode:
            chans = np.sqrt(chans)
        return np.concatenate([chans, mismatch], axis=1)

    def residual(self, eps: np.ndarray) -> np.ndarray:
        return self.residual_batch(np.asarray(eps)[None, :])[0]

    def _fast_batch(self, j_vals, dt, q_steps, prefix) -> np.ndarray:
        if not np.any(self.ff_weights):
            return np.zeros(j_vals.shape[0])
        m, n = j_vals.shape
        q_half = step_quaternions(j_vals, self.dbz, dt, angle_scale=0.5)
        excl = np.empty_like(prefix)
        excl[:, 0, :] = _IDENTITY_QUAT
        excl[:, 1:, :] = prefix[:, :-1, :]
        r = quat_zrow(quat_multiply(q_half, excl))          # (m, n, 3)
        coeff = (j_vals / (2.0 * self.device.eps0))[:, :, None] * r
        amps = np.tensordot(coeff, self.kernel, axes=([1], [1]))  # (m, 3, nf)
        ff = np.sum(amps.real ** 2 + amps.imag ** 2, axis=1)      # (m, nf)
        return ff @ self.ff_weights

    def _mismatch(self, q_tot: np.ndarray) -> np.ndarray:
        q = np.where(q_tot[:, :1] < 0, -q_tot, q_tot)
        a = np.clip(q[:, 0], -1.0, 1.0)
        phi = 2.0 * np.arccos(a)
        s = np.sqrt(np.maximum(0.0, 1.0 - a * a))
        degenerate = s < 1e-9
        safe_s = np.where(degenerate, 1.0, s)
        axis = q[:, 1:] / safe_s[:, None]
        axis = np.where(degenerate[:, None], self.target_axis[None, :], axis)
        cand1 = phi[:, None] * np.where(degenerate[:, None], 0.0, axis)
        alt_axis = np.where(degenerate[:, None], self.target_axis[None, :], -axis)
        cand2 = (2.0 * math.pi - phi)[:, None] * alt_axis
        d1 = np.linalg.norm(cand1 - self.target_vec[None, :], axis=1)
        d2 = np.linalg.norm(cand2 - self.target_vec[None, :], axis=1)
        chosen = np.where((d1 <= d2)[:, None], cand1, cand2)
        return chosen - self.target_vec[None, :]

    # -- helpers -----------------------------------------------------------

    def pulse(self, eps: np.ndarray, name: str = "") -> PulseSequence:
        return make_pulse(eps, self.n_dbz, self.device, self.target, name=name)


def residuals_eq1(eps, target: GateTarget, n_dbz: int,
                  device: DeviceModel = DEFAULT_DEVICE,
                  noise: NoiseModel = DEFAULT_NOISE,
                  sqrt_mode: bool = False) -> np.ndarray:
    """Six-component gate residual for one commanded pulse.

    Components: the three noise infidelities, then the axis-angle mismatch
    of the noise-free gate.  Convenience wrapper over :class:`Eq1Context`.
    """
    eps = np.asarray(eps, dtype=float)
    ctx = Eq1Context(target, eps.size, n_dbz, device, noise, sqrt_mode)
    return ctx.residual(eps)


# ---------------------------------------------------------------------------
# Multi-start search
# ---------------------------------------------------------------------------

@dataclass
class OptimizationResult:
    pulse: PulseSequence
    report: GateReport
    cost: float
    n_restarts: int
    restart_costs: np.ndarray
    best_restart: int
    cost_history: list
    seed: int
    wall_time_s: float
    sqrt_mode: bool = False


@dataclass(frozen=True)
class _RestartTask:
    target: GateTarget
    n_seg: int
    n_dbz: int
    device: DeviceModel
    noise: NoiseModel
    lm: LmConfig
    seed: int
    sqrt_mode: bool
    restarts: tuple


def _run_restart_block(task: _RestartTask):
    ctx = Eq1Context(task.target, task.n_seg, task.n_dbz, task.device,
                     task.noise, task.sqrt_mode)
    lo, hi = task.device.eps_min, task.device.eps_max
    best = None
    costs = []
    for idx in task.restarts:
        rng = np.random.default_rng([task.seed, idx])
        x0 = rng.uniform(lo, hi, task.n_seg)
        res = lm_minimize(ctx.residual, x0, (lo, hi), task.lm,
                          f_batch=ctx.residual_batch)
        costs.append(res.cost)
        if best is None or res.cost < best[1].cost:
            best = (idx, res)
    return list(task.restarts), costs, best


def multistart_optimize(target: GateTarget, n_seg: int, n_dbz: int,
                        n_restarts: int, seed: int,
                        device: DeviceModel = DEFAULT_DEVICE,
                        noise: NoiseModel = DEFAULT_NOISE,
                        lm: LmConfig = LmConfig(),
                        sqrt_mode: bool = False,
                        workers: int = 1,
                        name: str = "") -> OptimizationResult:
    """Repeat the LM optimization from uniform-random starting pulses.

    Starting vectors are drawn per restart from substream (seed, restart
    index), so the result is reproducible bit-identically for a fixed seed
    regardless of worker count; ties break toward the lower restart index.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    t0 = time.perf_counter()
    indices = list(range(n_restarts))
    n_blocks = max(1, min(n_restarts, 4 * max(1, workers)))
    blocks = [indices[i::n_blocks] for i in range(n_blocks)]
    tasks = [_RestartTask(target, n_seg, n_dbz, device, noise, lm, seed,
                          sqrt_mode, tuple(b)) for b in blocks if b]

    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_restart_block, tasks))
    else:
        results = [_run_restart_block(t) for t in tasks]

    restart_costs = np.empty(n_restarts)
    best_idx, best_res = None, None
    for idxs, costs, (bidx, bres) in results:
        restart_costs[idxs] = costs
        if (best_res is None or bres.cost < best_res.cost
                or (bres.cost == best_res.cost and bidx < best_idx)):
            best_idx, best_res = bidx, bres

    pulse = make_pulse(best_res.x, n_dbz, device, target, name=name)
    report = gate_report(pulse, noise)
    return OptimizationResult(
        pulse=pulse, report=report, cost=best_res.cost,
        n_restarts=n_restarts, restart_costs=restart_costs,
        best_restart=best_idx, cost_history=best_res.cost_history,
        seed=seed, wall_time_s=time.perf_counter() - t0,
        sqrt_mode=sqrt_mode,
    )


# ---------------------------------------------------------------------------
# Grid scan and robustness scan
# ---------------------------------------------------------------------------

@dataclass
class ScanRow:
    n_seg: int
    n_dbz: int
    feasible: bool
    i_total: float = math.nan
    i_dbz: float = math.nan
    i_slow: float = math.nan
    i_fast: float = math.nan
    result: OptimizationResult | None = None


def scan_grid(target: GateTarget, n_seg_list, n_dbz_list, restarts: int,
              seed: int, device: DeviceModel = DEFAULT_DEVICE,
              noise: NoiseModel = DEFAULT_NOISE, lm: LmConfig = LmConfig(),
              workers: int = 1, keep_results: bool = True) -> list:
    """Best gate infidelity for every (n_seg, n_dbz) cell.

    Infeasible clock conditions are recorded as such and the scan continues.
    Each cell derives its seed from (seed, n_seg, n_dbz).
    """
    rows = []
    for n_seg in n_seg_list:
        for n_dbz in n_dbz_list:
            cell_seed = int(np.random.default_rng(
                [seed, int(n_seg), int(n_dbz)]).integers(2**31))
            try:
                res = multistart_optimize(target, n_seg, n_dbz, restarts,
                                          cell_seed, device, noise, lm,
                                          workers=workers)
            except InfeasibleClockError:
                rows.append(ScanRow(n_seg=n_seg, n_dbz=n_dbz, feasible=False))
                continue
            rep = res.report
            rows.append(ScanRow(
                n_seg=n_seg, n_dbz=n_dbz, feasible=True,
                i_total=rep.inf_total, i_dbz=rep.inf_dbz,
                i_slow=rep.inf_eps_slow, i_fast=rep.inf_eps_fast,
                result=res if keep_results else None,
            ))
    return rows


@dataclass
class RobustnessCase:
    label: str
    factors: tuple      # multiplicative (j0, eps0, tau_rise) factors
    i_noise: float
    i_dbz: float
    i_slow: float
    i_fast: float


@dataclass
class RobustnessResult:
    i_worst: float
    worst_case: str
    cases: list


def _noise_only_infidelity(pulse: PulseSequence, noise: NoiseModel,
                           device: DeviceModel) -> tuple:
    """Noise channels under a (possibly perturbed) device, measured against
    that device's own noise-free gate; dbz is re-clocked to the perturbed
    exchange baseline."""
    from .model import propagate
    j_min = float(exchange_j(device.eps_min, device))
    dbz = clocked_dbz(pulse.n_dbz, pulse.total_time, j_min)
    u0 = propagate(pulse, device=device, dbz=dbz)
    i_dbz = quasistatic_infidelity_dbz(pulse, noise, device, dbz, reference=u0)
    i_slow = quasistatic_infidelity_eps(pulse, noise, device, dbz, reference=u0)
    i_fast = fast_noise_infidelity(pulse, noise, device, dbz)
    return i_dbz, i_slow, i_fast


def robustness_scan(pulse: PulseSequence, noise: NoiseModel = DEFAULT_NOISE,
                    fraction: float = 0.2) -> RobustnessResult:
    """Worst noise-only infidelity over +-fraction model perturbations.

    Evaluates the nominal model, each single-parameter change of j0, eps0
    and tau_rise, and the 2^3 corner cases; each case re-clocks dbz with the
    perturbed J(eps_min).  Systematic errors are excluded by construction
    (channels are measured against the perturbed noise-free gate).
    """
    base = pulse.device
    cases = [("nominal", (1.0, 1.0, 1.0))]
    for i, pname in enumerate(("j0", "eps0", "tau_rise")):
        for sgn in (+1.0, -1.0):
            f = [1.0, 1.0, 1.0]
            f[i] = 1.0 + sgn * fraction
            cases.append((f"{pname}{'+' if sgn > 0 else '-'}{fraction:.0%}",
                          tuple(f)))
    for fj in (1.0 - fraction, 1.0 + fraction):
        for fe in (1.0 - fraction, 1.0 + fraction):
            for ft in (1.0 - fraction, 1.0 + fraction):
                cases.append((f"corner({fj:.1f},{fe:.1f},{ft:.1f})",
                              (fj, fe, ft)))

    out = []
    for label, (fj, fe, ft) in cases:
        dev = base.replace(j0=base.j0 * fj, eps0=base.eps0 * fe,
                           tau_rise=base.tau_rise * ft)
        i_dbz, i_slow, i_fast = _noise_only_infidelity(pulse, noise, dev)
        out.append(RobustnessCase(label=label, factors=(fj, fe, ft),
                                  i_noise=i_dbz + i_slow + i_fast,
                                  i_dbz=i_dbz, i_slow=i_slow, i_fast=i_fast))
    worst = max(out, key=lambda c: c.i_noise)
    return RobustnessResult(i_worst=worst.i_noise, worst_case=worst.label,
                            cases=out)
