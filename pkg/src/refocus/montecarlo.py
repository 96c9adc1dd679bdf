"""Monte-Carlo ensemble of a driven spin in a correlated random field.

Each realization evolves under ``B(t) = V(t) + b(t)``; the observable is
the net rotation angle ``phi`` of the error propagator ``U0^dag U`` with
``cos(phi) = 2 w^2 - 1`` for its quaternion scalar part ``w``.  The ensemble
error is ``1 - <cos(phi)>``.
"""

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import evolution, kernels, noise as noise_mod
from ._kernels_py import prefix_quaternions
from .pulses import AXES, ControlWaveform

FIT_EXCLUSION = 3.0  # in units of tau0
MIN_FIT_POINTS = 5
WORKERS_ENV = "REFOCUS_WORKERS"
DEFAULT_REALIZATIONS = 900


@dataclass(frozen=True)
class ErrorSeries:
    times: np.ndarray = field(repr=False)
    error: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    n_realizations: int
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FitResult:
    A: float
    B: float
    window: tuple
    residual_rms: float
    A_err: float = 0.0
    B_err: float = 0.0
    n_points: int = 0

    def to_dict(self):
        return {
            "A": self.A,
            "B": self.B,
            "window": list(self.window),
            "residual_rms": self.residual_rms,
            "A_err": self.A_err,
            "B_err": self.B_err,
            "n_points": self.n_points,
        }


def _events(waveform: ControlWaveform):
    steps, quats = [], []
    for t, axis, angle in waveform.hard_events:
        steps.append(int(round(t / waveform.dt)))
        quats.append(np.concatenate([[math.cos(angle / 2)], math.sin(angle / 2) * AXES[axis]]))
    order = np.argsort(steps, kind="stable")
    steps = np.asarray(steps, dtype=np.int64)[order] if steps else np.zeros(0, np.int64)
    quats = np.asarray(quats, dtype=float)[order] if quats else np.zeros((0, 4))
    return steps, np.ascontiguousarray(quats)


def free_waveform(T: float, dt: float) -> ControlWaveform:
    n = int(round(T / dt))
    return ControlWaveform(np.zeros((n, 3)), dt, n * dt, (), (), "free")


def _prepare(waveform: Optional[ControlWaveform], model, dt, record_times):
    if waveform is None:
        if dt is None:
            dt = min(model.tau0 / noise_mod.MIN_SAMPLES_PER_TAU0, 1.0 / 16)
        waveform = free_waveform(model.T, dt)
    reps = model.T / waveform.period
    if abs(reps - round(reps)) > 1e-9:
        raise ValueError(f"noise period T={model.T:g} is not a multiple of the sequence period {waveform.period:g}")
    full = waveform.tiled(int(round(reps))) if round(reps) > 1 else waveform
    evolution.check_step_angles(full.samples, full.dt, "control")
    if record_times is None:
        record_times = np.arange(0, int(round(reps)) + 1) * waveform.period
    record_times = np.asarray(record_times, dtype=float)
    rec_steps = np.rint(record_times / full.dt).astype(np.int64)
    if np.any(np.abs(rec_steps * full.dt - record_times) > 1e-9 * max(1.0, model.T)):
        raise ValueError("record times must lie on the grid")
    if np.any(np.diff(rec_steps) < 0) or rec_steps.min() < 0 or rec_steps.max() > full.n_steps:
        raise ValueError("record times must be sorted and inside [0, T]")
    ev_steps, ev_quats = _events(full)
    u0 = prefix_quaternions(full.samples, full.dt, ev_steps, ev_quats, rec_steps)
    return full, record_times, rec_steps, ev_steps, ev_quats, np.ascontiguousarray(u0)


def _check_noise_angles(paths, ctrl, dt):
    peak = np.max(np.linalg.norm(paths + ctrl[None], axis=-1)) * dt if paths.size else 0.0
    if peak > evolution.MAX_STEP_ANGLE:
        raise evolution.ResolutionError(f"step rotation {peak:.3g} rad exceeds pi/4; refine the grid")


def evolve_realization(waveform: Optional[ControlWaveform], realization, record_times=None,
                       kernel=None) -> np.ndarray:
    """Net rotation angle ``phi`` in [0, pi] at the record times."""
    model = realization.model
    if waveform is not None and abs(waveform.dt - realization.dt) > 1e-12 * realization.dt:
        raise ValueError("waveform and noise must share the grid step")
    full, _, rec_steps, ev_steps, ev_quats, u0 = _prepare(waveform, model, realization.dt, record_times)
    if full.n_steps != realization.samples.shape[0]:
        raise ValueError("waveform and noise grids differ in length")
    paths = np.ascontiguousarray(realization.samples[None])
    _check_noise_angles(paths, full.samples, full.dt)
    run = kernels.get_kernel(kernel)
    cosphi = run(np.ascontiguousarray(full.samples), paths, full.dt, ev_steps, ev_quats, rec_steps, u0)[0]
    return np.arccos(np.clip(cosphi, -1.0, 1.0))


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def ensemble_cos_phi(waveform, model, n_realizations, record_times=None, base_seed=0,
                     dt=None, chunk=8, workers=None, kernel=None):
    """Array (n_realizations, n_records) of cos(phi); row r uses seed base_seed + r."""
    if n_realizations < 1:
        raise ValueError("need at least one realization")
    full, times, rec_steps, ev_steps, ev_quats, u0 = _prepare(waveform, model, dt, record_times)
    ctrl = np.ascontiguousarray(full.samples)
    run = kernels.get_kernel(kernel)
    out = np.empty((n_realizations, len(rec_steps)))

    def work(start):
        stop = min(start + chunk, n_realizations)
        seeds = [base_seed + r for r in range(start, stop)]
        paths = noise_mod.synthesize_batch(model, full.dt, seeds)
        _check_noise_angles(paths, ctrl, full.dt)
        try:
            out[start:stop] = run(ctrl, np.ascontiguousarray(paths), full.dt, ev_steps, ev_quats, rec_steps, u0)
        except Exception as exc:
            raise RuntimeError(f"realizations {start}..{stop - 1} failed: {exc}") from exc

    starts = range(0, n_realizations, chunk)
    nw = _workers(workers)
    if nw == 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(nw) as pool:
            list(pool.map(work, starts))
    return times, out


def ensemble_error(waveform, model, n_realizations=DEFAULT_REALIZATIONS, record_times=None,
                   base_seed=0, dt=None, chunk=8, workers=None, kernel=None, meta=None) -> ErrorSeries:
    if n_realizations < 2:
        raise ValueError("need at least two realizations for standard errors")
    times, c = ensemble_cos_phi(waveform, model, n_realizations, record_times, base_seed,
                                dt, chunk, workers, kernel)
    mean = c.mean(axis=0)
    stderr = c.std(axis=0, ddof=1) / math.sqrt(n_realizations)
    info = {"noise": model.to_dict(), "base_seed": base_seed, "sequence": getattr(waveform, "name", "free") if waveform is not None else "free"}
    if meta:
        info.update(meta)
    return ErrorSeries(times, 1.0 - mean, stderr, n_realizations, info)


def fit_linear(series: ErrorSeries, tau0: float, T: Optional[float] = None) -> FitResult:
    """Weighted least squares of ``error = A + B t / tau0`` away from both ends."""
    if T is None:
        T = series.meta.get("noise", {}).get("T", float(series.times[-1]))
    lo, hi = FIT_EXCLUSION * tau0, T - FIT_EXCLUSION * tau0
    sel = (series.times > lo) & (series.times < hi)
    if sel.sum() < MIN_FIT_POINTS:
        raise ValueError(f"only {int(sel.sum())} points inside the fit window ({lo:g}, {hi:g})")
    x = series.times[sel] / tau0
    y = series.error[sel]
    s = series.stderr[sel]
    w = 1.0 / s if np.all(s > 0) else np.ones_like(y)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X * w[:, None], y * w, rcond=None)
    resid = y - X @ coef
    cov = np.linalg.pinv((X * w[:, None]).T @ (X * w[:, None]))
    if not np.all(s > 0):
        dof = max(len(y) - 2, 1)
        cov = cov * (resid @ resid) / dof
    return FitResult(
        float(coef[0]), float(coef[1]), (lo, hi), float(np.sqrt(np.mean(resid**2))),
        float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])), int(sel.sum()),
    )


def write_series_csv(path, series: ErrorSeries, tau_p: float = 1.0):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_over_tau_p", "error", "stderr"])
        for t, e, s in zip(series.times, series.error, series.stderr):
            w.writerow([repr(float(t / tau_p)), repr(float(e)), repr(float(s))])


def read_series_csv(path, meta=None) -> ErrorSeries:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ErrorSeries(data[:, 0], data[:, 1], data[:, 2], 0, dict(meta or {}))


def fit_to_json(fit: FitResult) -> str:
    return json.dumps(fit.to_dict(), indent=2, sort_keys=True)
