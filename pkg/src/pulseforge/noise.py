"""Noise models and infidelity metrics for detuning-driven qubit gates.

Two noise channels act on the qubit: slow fluctuations of the Overhauser
gradient (quasistatic Gaussian, width ``sigma_dbz``) and charge noise on the
detuning.  Charge noise splits into a quasistatic part (width ``sigma_eps``,
representing everything below ``f_low``) and a fast part described by a
one-sided power spectral density: a 1/f^0.7 power law between ``f_low`` and
``f_knee``, conservatively extended as white up to ``f_high``.

Quasistatic averages use Gauss-Hermite quadrature.  The fast channel is
evaluated perturbatively to first order through the pulse's filter function,
with a time-domain colored-noise Monte Carlo as an independent oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .fidelity import avg_gate_fidelity, fidelity_from_quat_overlap
from .model import (
    DeviceModel,
    PulseSequence,
    canonicalize_phase,
    decompose_rotation,
    exchange_j,
    filtered_detuning,
    propagate,
    quat_multiply,
    quat_prefix,
    quat_reduce,
    quat_to_unitary,
    quat_zrow,
    rendered_waveform,
    step_quaternions,
    unitary_to_quat,
)

#: Overhauser gradient conversion, rad/ns per mT: |g*| mu_B / hbar with
#: g* = -0.44 for electrons in GaAs.
MT_TO_RAD_PER_NS = 0.44 * 9.2740100783e-24 / 1.054571817e-34 * 1e-3 * 1e-9

#: One-sided PSD conversion from SI (V^2/Hz) to uV^2 ns.
PSD_SI_TO_UV2NS = 1e21


@dataclass(frozen=True)
class NoiseModel:
    """Quasistatic widths and the charge-noise PSD with frequency cutoffs.

    ``psd_amp`` is the one-sided spectral density at 1 Hz in V^2/Hz; the
    power law ``psd_amp * f**-psd_exponent`` holds from ``f_low`` to
    ``f_knee`` and continues white at the knee value up to ``f_high``.
    """

    sigma_dbz: float = 0.5 * MT_TO_RAD_PER_NS   # rad/ns (0.5 mT)
    sigma_eps: float = 8.0                      # uV
    psd_amp: float = 8e-16                      # V^2/Hz at 1 Hz
    psd_exponent: float = 0.7
    f_low: float = 5e4                          # Hz
    f_knee: float = 1e6                         # Hz
    f_high: float = 3e9                         # Hz
    n_quad: int = 7

    def __post_init__(self):
        if self.sigma_dbz < 0 or self.sigma_eps < 0 or self.psd_amp < 0:
            raise ValueError("noise widths must be non-negative")
        if self.psd_exponent < 0:
            raise ValueError("psd must be monotone non-increasing in f")
        if not (self.f_low < self.f_knee <= self.f_high):
            raise ValueError("cutoffs must satisfy f_low < f_knee <= f_high")
        if not (isinstance(self.n_quad, int) and self.n_quad >= 1):
            raise ValueError("n_quad must be an integer >= 1")

    def replace(self, **kwargs) -> "NoiseModel":
        params = dict(
            sigma_dbz=self.sigma_dbz, sigma_eps=self.sigma_eps,
            psd_amp=self.psd_amp, psd_exponent=self.psd_exponent,
            f_low=self.f_low, f_knee=self.f_knee, f_high=self.f_high,
            n_quad=self.n_quad,
        )
        params.update(kwargs)
        return NoiseModel(**params)


DEFAULT_NOISE = NoiseModel()


def psd_eval(f, model: NoiseModel):
    """One-sided charge-noise PSD S_eps(f) in V^2/Hz.

    Power law below ``f_knee``, white at the knee value above.  Frequencies
    outside [f_low, f_high] are rejected.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < model.f_low - 1e-9 * model.f_low) or np.any(f > model.f_high * (1 + 1e-12)):
        raise ValueError("frequency outside the modeled band")
    capped = np.minimum(f, model.f_knee)
    return model.psd_amp * capped ** (-model.psd_exponent)


def psd_band_power(f1, f2, model: NoiseModel):
    """Exact integral of the PSD over [f1, f2] (clipped to the band), V^2.

    Piecewise closed form of the power-law plus white extension; vectorized
    over bin edges.
    """
    f1 = np.maximum(np.asarray(f1, dtype=float), model.f_low)
    f2 = np.minimum(np.asarray(f2, dtype=float), model.f_high)
    f2 = np.maximum(f2, f1)  # empty intervals integrate to zero

    e = model.psd_exponent
    a1 = np.clip(f1, model.f_low, model.f_knee)
    a2 = np.clip(f2, model.f_low, model.f_knee)
    if abs(e - 1.0) < 1e-12:
        power_law = model.psd_amp * np.log(a2 / a1)
    else:
        power_law = model.psd_amp * (a2 ** (1 - e) - a1 ** (1 - e)) / (1 - e)

    s_white = model.psd_amp * model.f_knee ** (-e)
    w1 = np.maximum(f1, model.f_knee)
    w2 = np.maximum(f2, model.f_knee)
    return power_law + s_white * (w2 - w1)


def gauss_hermite_offsets(sigma: float, n: int) -> tuple:
    """Nodes and weights averaging a function of an N(0, sigma^2) variable."""
    x, w = hermgauss(n)
    return math.sqrt(2.0) * sigma * x, w / math.sqrt(math.pi)


def _reference_quat(pulse: PulseSequence, reference) -> np.ndarray:
    if reference is None:
        return unitary_to_quat(pulse.target.unitary())
    return unitary_to_quat(np.asarray(reference, dtype=complex))


def quasistatic_infidelity_dbz(pulse: PulseSequence, model: NoiseModel,
                               device: DeviceModel | None = None,
                               dbz: float | None = None,
                               reference=None) -> float:
    """Gauss-Hermite average infidelity over quasistatic dbz offsets.

    ``reference`` defaults to the target unitary; pass the noise-free
    propagator instead to isolate the pure noise contribution.
    """
    dev = pulse.device if device is None else device
    dbz0 = pulse.dbz if dbz is None else dbz
    wf = rendered_waveform(pulse, device=device)
    j_vals = exchange_j(wf.eps, dev)
    offsets, weights = gauss_hermite_offsets(model.sigma_dbz, model.n_quad)
    q = step_quaternions(j_vals[None, :], (dbz0 + offsets)[:, None], wf.dt)
    q_tot = quat_reduce(q)                              # (n_quad, 4)
    dots = q_tot @ _reference_quat(pulse, reference)
    fid = fidelity_from_quat_overlap(dots)
    return float(max(0.0, 1.0 - np.dot(weights, fid)))


def quasistatic_infidelity_eps(pulse: PulseSequence, model: NoiseModel,
                               device: DeviceModel | None = None,
                               dbz: float | None = None,
                               reference=None) -> float:
    """Gauss-Hermite average infidelity over common quasistatic detuning
    offsets.

    The offset shifts the whole filtered waveform, which for the exponential
    transfer function scales the exchange trace by exp(offset / eps0); the
    exact offset is applied, not its linearization.
    """
    dev = pulse.device if device is None else device
    dbz0 = pulse.dbz if dbz is None else dbz
    wf = rendered_waveform(pulse, device=device)
    j_vals = exchange_j(wf.eps, dev)
    offsets, weights = gauss_hermite_offsets(model.sigma_eps, model.n_quad)
    scale = np.exp(offsets / dev.eps0)
    q = step_quaternions(j_vals[None, :] * scale[:, None], dbz0, wf.dt)
    q_tot = quat_reduce(q)
    dots = q_tot @ _reference_quat(pulse, reference)
    fid = fidelity_from_quat_overlap(dots)
    return float(max(0.0, 1.0 - np.dot(weights, fid)))


# ---------------------------------------------------------------------------
# First-order filter function and fast-noise infidelity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FilterFunctionTable:
    """First-order detuning-noise filter function on a frequency grid.

    ``values[i]`` is F(2 pi frequencies[i]) in 1/uV^2 (with time measured in
    ns), normalized so that the first-order average infidelity equals
    (2/3) * integral S(f) F(2 pi f) df with S in uV^2 ns and f in 1/ns.
    """

    frequencies: np.ndarray  # Hz
    values: np.ndarray


def _toggling_weights(pulse: PulseSequence, device: DeviceModel | None,
                      dbz: float | None):
    """Sub-grid data for the first-order overlap integral.

    Returns (t_mid, dt, coeff) where coeff[s, k] = g(t_s) * R_k(t_s) with
    g = J / (2 eps0) and R the toggling-frame weights of sigma_z at the
    sub-step midpoints.
    """
    dev = pulse.device if device is None else device
    dbz0 = pulse.dbz if dbz is None else dbz
    wf = rendered_waveform(pulse, device=device)
    j_vals = exchange_j(wf.eps, dev)
    q = step_quaternions(j_vals, dbz0, wf.dt)
    q_half = step_quaternions(j_vals, dbz0, wf.dt, angle_scale=0.5)
    prefix = quat_prefix(q[None, :, :])[0]
    # exclusive prefix: U(t_s, 0) at the start of step s
    excl = np.empty_like(prefix)
    excl[0] = (1.0, 0.0, 0.0, 0.0)
    excl[1:] = prefix[:-1]
    q_mid = quat_multiply(q_half, excl)
    r = quat_zrow(q_mid)                                  # (n, 3)
    g = j_vals / (2.0 * dev.eps0)
    return wf.t_mid, wf.dt, g[:, None] * r


def filter_function(pulse: PulseSequence, frequencies_hz,
                    device: DeviceModel | None = None,
                    dbz: float | None = None) -> FilterFunctionTable:
    """F(2 pi f) = sum_k |int_0^T g(t) R_k(t) exp(-i w t) dt|^2.

    The integrand is piecewise constant on the rendered sub-grid (midpoint
    values); the oscillatory factor is integrated in closed form on each
    sub-step.
    """
    frequencies_hz = np.atleast_1d(np.asarray(frequencies_hz, dtype=float))
    t_mid, dt, coeff = _toggling_weights(pulse, device, dbz)
    omega = 2.0 * math.pi * frequencies_hz * 1e-9       # rad/ns
    # per-step exact integral of exp(-i w t): dt * sinc(w dt / 2) * exp(-i w t_mid)
    half_arg = 0.5 * omega[:, None] * dt[None, :]
    window = dt[None, :] * np.sinc(half_arg / math.pi)
    kernel = window * np.exp(-1j * omega[:, None] * t_mid[None, :])
    amps = kernel @ coeff                                # (n_freq, 3)
    values = np.sum(np.abs(amps) ** 2, axis=1)
    return FilterFunctionTable(frequencies=frequencies_hz, values=values)


def _log_grid(f_lo: float, f_hi: float, per_decade: int) -> np.ndarray:
    n = max(2, int(math.ceil(per_decade * math.log10(f_hi / f_lo))) + 1)
    return np.logspace(math.log10(f_lo), math.log10(f_hi), n)


def spectral_overlap_infidelity(table: FilterFunctionTable,
                                model: NoiseModel) -> float:
    """(2/3) * integral of S(f) F(2 pi f) df over the table's grid."""
    s_uv2ns = psd_eval(table.frequencies, model) * PSD_SI_TO_UV2NS
    f_ns = table.frequencies * 1e-9
    return float(2.0 / 3.0 * np.trapezoid(s_uv2ns * table.values, f_ns))


def fast_noise_infidelity(pulse: PulseSequence, model: NoiseModel,
                          device: DeviceModel | None = None,
                          dbz: float | None = None,
                          rel_tol: float = 0.01,
                          per_decade: int = 200) -> float:
    """First-order average infidelity from the fast charge-noise spectrum.

    Evaluates (2/3) * integral S_eps(f) F(2 pi f) df on a log grid, doubling
    the point density (starting at ``per_decade`` per decade) until the
    result changes by less than ``rel_tol``.
    """
    if model.psd_amp == 0.0:
        return 0.0
    density = per_decade
    grid = _log_grid(model.f_low, model.f_high, density)
    total = spectral_overlap_infidelity(
        filter_function(pulse, grid, device, dbz), model)
    for _ in range(5):
        density *= 2
        grid = _log_grid(model.f_low, model.f_high, density)
        refined = spectral_overlap_infidelity(
            filter_function(pulse, grid, device, dbz), model)
        if abs(refined - total) <= rel_tol * abs(refined):
            return refined
        total = refined
    return total


# ---------------------------------------------------------------------------
# Colored-noise synthesis and the time-domain Monte Carlo oracle
# ---------------------------------------------------------------------------

def generate_noise_trace(model: NoiseModel, duration: float, dt: float,
                         seed) -> np.ndarray:
    """Stationary Gaussian detuning-noise trace delta_eps(t) in uV.

    Synthesis by frequency-domain coloring: each DFT bin receives a complex
    Gaussian with power equal to the exact PSD integral over the bin's band,
    so Parseval holds and the averaged periodogram reproduces the PSD.  The
    zero-frequency bin carries the sub-resolution band [f_low, df/2], which
    acts as a per-trace static offset.  Deterministic for a fixed seed.

    ``dt`` must divide ``duration`` and satisfy the Nyquist bound
    ``dt <= 1 / (2 f_high)``.
    """
    n = duration / dt
    if abs(n - round(n)) > 1e-9:
        raise ValueError("dt must divide duration")
    n = int(round(n))
    if dt > 1e9 / (2.0 * model.f_high) * (1 + 1e-12):
        raise ValueError("dt too coarse for f_high (aliasing)")

    df = 1e9 / (n * dt)                      # bin spacing, Hz
    n_half = n // 2
    rng = np.random.default_rng(seed)

    # bin 0 covers [f_low, df/2); interior bins k cover (k -/+ 1/2) df
    p0 = float(psd_band_power(model.f_low, 0.5 * df, model)) * 1e12  # uV^2
    spectrum = np.zeros(n_half + 1, dtype=complex)
    spectrum[0] = n * math.sqrt(p0) * rng.standard_normal()

    k = np.arange(1, n_half + (0 if n % 2 == 0 else 1))
    pk = psd_band_power((k - 0.5) * df, (k + 0.5) * df, model) * 1e12
    z = rng.standard_normal((k.size, 2))
    spectrum[1:k.size + 1] = (0.5 * n * np.sqrt(pk)) * (z[:, 0] + 1j * z[:, 1])

    if n % 2 == 0:
        p_nyq = float(psd_band_power((n_half - 0.5) * df, (n_half + 0.5) * df,
                                     model)) * 1e12
        spectrum[n_half] = n * math.sqrt(p_nyq) * rng.standard_normal()

    return np.fft.irfft(spectrum, n=n)


def mc_fast_noise_oracle(pulse: PulseSequence, model: NoiseModel,
                         n_traces: int, seed: int,
                         device: DeviceModel | None = None,
                         dbz: float | None = None,
                         reference=None,
                         chunk: int = 500) -> tuple:
    """Time-domain Monte Carlo estimate of the fast-noise infidelity.

    Draws colored detuning-noise traces, propagates each with
    J(eps(t) + delta_eps(t)), and averages the gate fidelity against the
    reference (target by default).  Per-trace substreams are seeded as
    (seed, trace index), so results do not depend on evaluation order.

    Returns (mean infidelity, standard error).
    """
    if n_traces < 100:
        raise ValueError("n_traces must be >= 100")
    dev = pulse.device if device is None else device
    dbz0 = pulse.dbz if dbz is None else dbz

    duration = pulse.total_time
    dt_target = pulse.device.t_sample / pulse.device.n_sub
    n_steps = max(1, int(round(duration / dt_target)))
    dt = duration / n_steps
    t_mid = (np.arange(n_steps) + 0.5) * dt
    eps_base = filtered_detuning(pulse, t_mid, device=device)
    q_ref = _reference_quat(pulse, reference)

    infid = np.empty(n_traces)
    for start in range(0, n_traces, chunk):
        stop = min(start + chunk, n_traces)
        block = np.empty((stop - start, n_steps))
        for i in range(start, stop):
            block[i - start] = generate_noise_trace(model, duration, dt,
                                                    seed=[seed, i])
        j_vals = exchange_j(eps_base[None, :] + block, dev)
        q = step_quaternions(j_vals, dbz0, dt)
        dots = quat_reduce(q) @ q_ref
        infid[start:stop] = 1.0 - fidelity_from_quat_overlap(dots)

    mean = float(np.mean(infid))
    stderr = float(np.std(infid, ddof=1) / math.sqrt(n_traces))
    return mean, stderr


# ---------------------------------------------------------------------------
# Gate reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GateReport:
    """Realized gate, its rotation decomposition and infidelity breakdown.

    The noise channels (``inf_dbz``, ``inf_eps_slow``, ``inf_eps_fast``) are
    measured against the realized noise-free propagator, so they isolate
    decoherence; ``inf_systematic`` is the noise-free mismatch to the target.
    """

    u_realized: np.ndarray
    phi: float
    axis: np.ndarray
    degenerate: bool
    inf_dbz: float
    inf_eps_slow: float
    inf_eps_fast: float
    inf_systematic: float

    @property
    def inf_total(self) -> float:
        return (self.inf_dbz + self.inf_eps_slow + self.inf_eps_fast
                + self.inf_systematic)

    @property
    def inf_noise(self) -> float:
        return self.inf_dbz + self.inf_eps_slow + self.inf_eps_fast


def gate_report(pulse: PulseSequence, model: NoiseModel,
                device: DeviceModel | None = None,
                dbz: float | None = None,
                fast_rel_tol: float = 0.01) -> GateReport:
    """Full infidelity breakdown of one pulse under a noise model."""
    u0 = propagate(pulse, device=device, dbz=dbz)
    dec = decompose_rotation(u0)
    u_canon, _ = canonicalize_phase(u0)
    inf_sys = max(0.0, 1.0 - avg_gate_fidelity(u0, pulse.target))
    return GateReport(
        u_realized=u_canon,
        phi=dec.angle,
        axis=dec.axis,
        degenerate=dec.degenerate,
        inf_dbz=quasistatic_infidelity_dbz(pulse, model, device, dbz, reference=u0),
        inf_eps_slow=quasistatic_infidelity_eps(pulse, model, device, dbz, reference=u0),
        inf_eps_fast=fast_noise_infidelity(pulse, model, device, dbz,
                                           rel_tol=fast_rel_tol),
        inf_systematic=inf_sys,
    )
