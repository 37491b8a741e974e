"""Desk-scale electromagnetic-transient solver for transformer energization.

Fixed-step trapezoidal (companion-model) integration of a single-phase
energization circuit: ideal sinusoidal source behind a breaker, series R-L
branch, shunt capacitance at the transformer terminal, and a saturable
magnetizing branch (piecewise-linear flux/current curve) in parallel with a
core-loss resistance.  The node voltage at the terminal is the monitored
quantity; the max-overvoltage postprocessor reduces a waveform to a single
stress value in kV.

The per-step nonlinear solve is a scalar Newton iteration on the terminal
voltage; the stepping loop is JIT-compiled when numba is available and runs
in pure Python otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationError

try:
    from numba import njit
except ModuleNotFoundError:  # pragma: no cover - numba present in normal installs

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


__all__ = [
    "MagnetizingCurve",
    "CircuitParams",
    "StochasticInputs",
    "Waveform",
    "input_impedance",
    "linear_terminal_gain",
    "simulate",
    "measure_impedance",
    "max_overvoltage",
    "batch_max_overvoltage",
    "magnetizing_energy",
]

MAX_NEWTON_ITERATIONS = 50
NEWTON_TOL_VOLTS = 1e-6

# Per-unit bases for the default transformer model: 400 kV system,
# 100 MVA, single-phase equivalent.
SYSTEM_KV = 400.0
BASE_IMPEDANCE = 1600.0  # (400 kV)^2 / 100 MVA
SOURCE_PEAK = SYSTEM_KV * 1e3 * math.sqrt(2.0) / math.sqrt(3.0)
RATED_FLUX = SOURCE_PEAK / (2.0 * math.pi * 50.0)  # Wb-turns at 50 Hz


@dataclass(frozen=True)
class MagnetizingCurve:
    """Odd-symmetric piecewise-linear flux (Wb-turns) vs current (A) curve.

    Breakpoints cover the positive branch starting at the origin; beyond the
    last breakpoint the curve extrapolates with `final_slope` (the air-core
    di/dlambda).  Negative flux mirrors through the origin.
    """

    flux_points: np.ndarray
    current_points: np.ndarray
    final_slope: float

    def __post_init__(self):
        fp = np.asarray(self.flux_points, dtype=float)
        cp = np.asarray(self.current_points, dtype=float)
        object.__setattr__(self, "flux_points", fp)
        object.__setattr__(self, "current_points", cp)
        if fp.shape != cp.shape or fp.ndim != 1 or fp.size < 2:
            raise ValueError("curve needs matching 1-D breakpoint arrays, size >= 2")
        if fp[0] != 0.0 or cp[0] != 0.0:
            raise ValueError("curve must pass through the origin")
        if np.any(np.diff(fp) <= 0) or np.any(np.diff(cp) < 0) or self.final_slope < 0:
            raise ValueError("curve must be monotone increasing")

    def current(self, lam: float) -> float:
        i, _ = _pwl_eval(abs(lam), self.flux_points, self.current_points, self.final_slope)
        return math.copysign(i, lam) if lam else 0.0


def default_magnetizing_curve(
    rated_flux: float = RATED_FLUX,
    magnetizing_current_frac: float = 0.003,
    saturated_slope_pu: float = 0.10,
    knee_pu: float = 1.1,
) -> MagnetizingCurve:
    """Two-segment saturation curve from per-unit design figures."""
    omega = 2.0 * math.pi * 50.0
    unsat_inductance = BASE_IMPEDANCE / (magnetizing_current_frac * omega)
    sat_inductance = saturated_slope_pu * BASE_IMPEDANCE / omega
    knee = knee_pu * rated_flux
    return MagnetizingCurve(
        flux_points=np.array([0.0, knee]),
        current_points=np.array([0.0, knee / unsat_inductance]),
        final_slope=1.0 / sat_inductance,
    )


@dataclass(frozen=True)
class CircuitParams:
    """Energization circuit: series R-L feeding a shunt C and the
    saturable transformer branch."""

    resistance: float = 1.32
    inductance: float = 50e-3
    capacitance: float = 50.6e-6
    source_amplitude: float = SOURCE_PEAK
    source_frequency: float = 50.0
    magnetizing_curve: MagnetizingCurve = field(default_factory=default_magnetizing_curve)
    core_loss_resistance: float = 5000.0 * BASE_IMPEDANCE
    rated_flux: float = RATED_FLUX

    def __post_init__(self):
        for name in ("resistance", "inductance", "capacitance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.core_loss_resistance <= 0 or self.rated_flux <= 0:
            raise ValueError("core_loss_resistance and rated_flux must be positive")


@dataclass(frozen=True)
class StochasticInputs:
    """Stochastic energization inputs: breaker closing time, remanent-flux
    amplitude (per unit of rated flux) and remanence angle."""

    t_switch: float
    remanence: float = 0.0
    remanence_angle: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.t_switch <= 0.010:
            raise ValueError(f"t_switch {self.t_switch} outside [0, 10 ms]")
        if not 0.0 <= self.remanence <= 0.8:
            raise ValueError(f"remanence {self.remanence} outside [0, 0.8]")
        if not 0.0 <= self.remanence_angle <= 2.0 * math.pi:
            raise ValueError(f"remanence_angle {self.remanence_angle} outside [0, 2 pi]")


@dataclass(frozen=True)
class Waveform:
    """Terminal-voltage time series on a fixed grid starting at t = 0."""

    dt: float
    samples: np.ndarray
    duration: float

    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.dt

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "voltage_V"])
            for t, v in zip(self.times(), self.samples):
                writer.writerow([f"{t:.9g}", f"{v:.9g}"])


def input_impedance(params: CircuitParams, f: float) -> float:
    """|Z| of the source network seen from the transformer terminal
    (transformer branch open): series (R + jwL) in parallel with the
    shunt capacitance."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    w = 2.0 * math.pi * f
    z_series = params.resistance + 1j * w * params.inductance
    z_cap = 1.0 / (1j * w * params.capacitance)
    return abs(z_series * z_cap / (z_series + z_cap))


def linear_terminal_gain(params: CircuitParams, linear_inductance: float) -> complex:
    """Phasor ratio terminal/source voltage at the source frequency with a
    linear magnetizing inductance (no saturation); oracle for steady-state
    checks of the time-domain solver."""
    w = 2.0 * math.pi * params.source_frequency
    y_shunt = (
        1j * w * params.capacitance
        + 1.0 / (1j * w * linear_inductance)
        + 1.0 / params.core_loss_resistance
    )
    z_shunt = 1.0 / y_shunt
    z_series = params.resistance + 1j * w * params.inductance
    return z_shunt / (z_shunt + z_series)


@njit(cache=True)
def _pwl_eval(a, fp, cp, final_slope):
    """Current and slope of the positive PWL branch at |flux| = a."""
    n = fp.shape[0]
    if a >= fp[n - 1]:
        return cp[n - 1] + (a - fp[n - 1]) * final_slope, final_slope
    for j in range(1, n):
        if a <= fp[j]:
            slope = (cp[j] - cp[j - 1]) / (fp[j] - fp[j - 1])
            return cp[j - 1] + (a - fp[j - 1]) * slope, slope
    return cp[n - 1], final_slope


@njit(cache=True)
def _step_loop(
    n_steps,
    switch_idx,
    dt,
    amp,
    omega,
    R,
    L,
    C,
    Rc,
    fp,
    cp,
    final_slope,
    lam_init,
    out_v,
    out_il,
    out_ic,
    out_lam,
):
    """Trapezoidal stepping from the switching instant; returns the index of
    the first non-convergent step or -1 on success."""
    a_srs = 1.0 / (L / dt + 0.5 * R)
    b = 0.5 * a_srs
    gc = 2.0 * C / dt
    il = 0.0
    ic = 0.0
    v = 0.0
    lam = lam_init
    out_lam[switch_idx] = lam
    for k in range(switch_idx, n_steps):
        t0 = k * dt
        t1 = (k + 1) * dt
        vs0 = amp * math.sin(omega * t0)
        vs1 = amp * math.sin(omega * t1)
        h = a_srs * il * (L / dt - 0.5 * R) + b * (vs0 - v) + b * vs1
        lam_h = lam + 0.5 * dt * v
        v1 = v
        converged = False
        for _ in range(MAX_NEWTON_ITERATIONS):
            lam1 = lam_h + 0.5 * dt * v1
            s = 1.0 if lam1 >= 0.0 else -1.0
            im, dim = _pwl_eval(abs(lam1), fp, cp, final_slope)
            im *= s
            f_res = h - b * v1 - gc * (v1 - v) + ic - v1 / Rc - im
            df = -b - gc - 1.0 / Rc - dim * 0.5 * dt
            dv = f_res / df
            v1 -= dv
            if abs(dv) < NEWTON_TOL_VOLTS:
                converged = True
                break
        if not converged:
            return k
        ic = gc * (v1 - v) - ic
        il = h - b * v1
        lam = lam_h + 0.5 * dt * v1
        v = v1
        out_v[k + 1] = v
        out_il[k + 1] = il
        out_ic[k + 1] = ic
        out_lam[k + 1] = lam
    return -1


def simulate(
    params: CircuitParams,
    inputs: StochasticInputs,
    dt: float = 10e-6,
    duration: float = 1.0,
    return_states: bool = False,
):
    """Energization transient from all-zero initial conditions.

    The breaker closes at `t_switch` rounded to the nearest step boundary;
    the magnetizing flux is initialized there to
    remanence * rated_flux * cos(remanence_angle).  Samples before the
    switching instant are zero.

    Raises
    ------
    SimulationError
        If the per-step Newton iteration fails to converge.
    """
    if dt > 50e-6 or dt <= 0:
        raise ValueError(f"dt must be in (0, 50 us], got {dt}")
    if duration < 0.5:
        raise ValueError(f"duration must be >= 0.5 s, got {duration}")
    n_steps = int(math.floor(duration / dt))
    switch_idx = min(int(round(inputs.t_switch / dt)), n_steps)
    curve = params.magnetizing_curve
    lam_init = inputs.remanence * params.rated_flux * math.cos(inputs.remanence_angle)
    v = np.zeros(n_steps + 1)
    il = np.zeros(n_steps + 1)
    ic = np.zeros(n_steps + 1)
    lam = np.zeros(n_steps + 1)
    bad_step = _step_loop(
        n_steps,
        switch_idx,
        dt,
        params.source_amplitude,
        2.0 * math.pi * params.source_frequency,
        params.resistance,
        params.inductance,
        params.capacitance,
        params.core_loss_resistance,
        curve.flux_points,
        curve.current_points,
        curve.final_slope,
        lam_init,
        v,
        il,
        ic,
        lam,
    )
    if bad_step >= 0:
        raise SimulationError(
            f"Newton iteration did not converge within {MAX_NEWTON_ITERATIONS} "
            f"iterations at step {bad_step} (t = {bad_step * dt:.6f} s)"
        )
    waveform = Waveform(dt=dt, samples=v, duration=duration)
    if return_states:
        return waveform, {"series_current": il, "capacitor_current": ic, "flux": lam}
    return waveform


@njit(cache=True)
def _injection_loop(n_steps, dt, inj_amp, omega, R, L, C, out_v):
    """Current injection at the terminal with the source shorted and the
    transformer branch open; linear, so each step solves in closed form."""
    a_srs = 1.0 / (L / dt + 0.5 * R)
    b = 0.5 * a_srs
    gc = 2.0 * C / dt
    il = 0.0
    ic = 0.0
    v = 0.0
    for k in range(n_steps):
        t1 = (k + 1) * dt
        h = a_srs * il * (L / dt - 0.5 * R) + b * (0.0 - v)
        inj = inj_amp * math.sin(omega * t1)
        v1 = (h + inj + gc * v + ic) / (b + gc)
        ic = gc * (v1 - v) - ic
        il = h - b * v1
        v = v1
        out_v[k + 1] = v
    return 0


def measure_impedance(
    params: CircuitParams, f: float, dt: float = 10e-6, duration: float = 1.0
) -> float:
    """Driving-point impedance magnitude at the terminal measured from a
    time-domain small-signal injection (independent of the analytic
    formula): inject a 1 A sinusoid, let the transient decay, and
    demodulate the terminal voltage over the trailing full periods."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    n_steps = int(math.floor(duration / dt))
    v = np.zeros(n_steps + 1)
    _injection_loop(
        n_steps,
        dt,
        1.0,
        2.0 * math.pi * f,
        params.resistance,
        params.inductance,
        params.capacitance,
        v,
    )
    period = 1.0 / f
    n_periods = max(1, int(math.floor(0.4 * duration / period)))
    window = int(round(n_periods * period / dt))
    t = np.arange(n_steps + 1) * dt
    tw, vw = t[-window:], v[-window:]
    w = 2.0 * math.pi * f
    # quadrature demodulation over an integer number of periods
    a = 2.0 * np.mean(vw * np.sin(w * tw))
    b2 = 2.0 * np.mean(vw * np.cos(w * tw))
    return float(np.hypot(a, b2))


def max_overvoltage(w: Waveform) -> float:
    """Largest absolute terminal voltage of a waveform, in kV."""
    if w.samples.size == 0:
        raise ValueError("empty waveform")
    return float(np.max(np.abs(w.samples)) / 1e3)


def _overvoltage_worker(args):
    params, dt, duration, row = args
    inputs = StochasticInputs(*row)
    try:
        return max_overvoltage(simulate(params, inputs, dt, duration))
    except SimulationError:
        return math.nan


def batch_max_overvoltage(
    params: CircuitParams, X, dt: float = 10e-6, duration: float = 1.0, jobs: int = 1
) -> np.ndarray:
    """Max overvoltage (kV) for each input row, optionally over a process
    pool; failed simulations yield NaN.  Rows are (t_switch,) or
    (t_switch, remanence, remanence_angle)."""
    rows = [tuple(float(v) for v in r) for r in np.atleast_2d(np.asarray(X, dtype=float))]
    tasks = [(params, dt, duration, row) for row in rows]
    if jobs <= 1:
        return np.array([_overvoltage_worker(t) for t in tasks])
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        chunk = max(1, len(tasks) // (8 * jobs))
        return np.array(list(pool.map(_overvoltage_worker, tasks, chunksize=chunk)))


def magnetizing_energy(curve: MagnetizingCurve, lam: float) -> float:
    """Stored core energy integral(i dlambda) from 0 to lam, in joules."""
    a = abs(lam)
    fp, cp = curve.flux_points, curve.current_points
    energy = 0.0
    prev_f, prev_c = 0.0, 0.0
    for f_pt, c_pt in zip(fp[1:], cp[1:]):
        if a <= f_pt:
            slope = (c_pt - prev_c) / (f_pt - prev_f)
            di = prev_c + (a - prev_f) * slope
            return energy + 0.5 * (prev_c + di) * (a - prev_f)
        energy += 0.5 * (prev_c + c_pt) * (f_pt - prev_f)
        prev_f, prev_c = f_pt, c_pt
    di = prev_c + (a - prev_f) * curve.final_slope
    return energy + 0.5 * (prev_c + di) * (a - prev_f)
