"""Pulse shapes, control waveforms and refocusing sequences.

Time is measured in units of the slot length ``tau_p`` unless a different
``duration`` is given.  Shaped pulses are sampled at step midpoints and
rescaled so that the discrete rotation angle equals the target exactly;
the same samples are used by every downstream module.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares

from . import evolution
from .algebra import build_basis

KINDS = ("hard", "gaussian", "fourier-series")
AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0])}
DEFAULT_SAMPLES_PER_PULSE = 512
MIN_SAMPLES_PER_PULSE = 200
ANGLE_TOL = 1e-9

SEQUENCES = ("4c", "8c", "16c", "32c", "64c", "8p")


class DesignError(RuntimeError):
    def __init__(self, message, best_residual=None, shape=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.shape = shape


@dataclass(frozen=True)
class PulseShape:
    """A single pulse occupying one slot of length ``duration``.

    ``params`` holds the Gaussian width (as a fraction of ``duration``) for
    ``kind="gaussian"`` and the coefficients ``a_n`` (units of 1/duration)
    of ``V(t) = sum_n a_n (1 - cos(2 pi n t / duration))`` for
    ``kind="fourier-series"``.
    """

    kind: str
    duration: float = 1.0
    axis: str = "x"
    sign: int = 1
    target_angle: float = math.pi
    params: Tuple[float, ...] = ()
    smoothness: int = 1
    name: Optional[str] = None
    meta: Dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown pulse kind {self.kind!r}; expected one of {KINDS}")
        if self.axis not in AXES:
            raise ValueError(f"pulse axis must be 'x' or 'y', got {self.axis!r}")
        if self.sign not in (1, -1):
            raise ValueError("pulse sign must be +1 or -1")
        if self.kind != "hard" and self.duration <= 0:
            raise ValueError("shaped pulses need a positive duration")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def oriented(self, axis: str, sign: int) -> "PulseShape":
        return dataclasses.replace(self, axis=axis, sign=sign)

    def envelope(self, t) -> np.ndarray:
        """Unnormalized amplitude profile on ``[0, duration]``."""
        t = np.asarray(t, dtype=float)
        tp = self.duration
        if self.kind == "gaussian":
            sigma = self.params[0] * tp
            return np.exp(-((t - tp / 2) ** 2) / (2 * sigma**2))
        if self.kind == "fourier-series":
            n = np.arange(1, len(self.params) + 1)
            a = np.asarray(self.params)
            return (a * (1 - np.cos(2 * np.pi * np.multiply.outer(t, n) / tp))).sum(-1)
        raise ValueError("hard pulses have no envelope")

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "duration": self.duration,
            "axis": self.axis,
            "sign": self.sign,
            "target_angle": self.target_angle,
            "params": list(self.params),
            "smoothness": self.smoothness,
        }
        if self.name:
            d["name"] = self.name
        if self.meta:
            d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PulseShape":
        d = dict(d)
        d["params"] = tuple(d.get("params", ()))
        return cls(**d)


def hard_pulse(axis="x", sign=1, angle=math.pi) -> PulseShape:
    return PulseShape("hard", 0.0, axis, sign, angle, name="hard")


def gaussian_pulse(width=0.05, duration=1.0, axis="x", sign=1, angle=math.pi) -> PulseShape:
    return PulseShape("gaussian", duration, axis, sign, angle, (width,), name="G")


@dataclass(frozen=True)
class ControlWaveform:
    """Sampled control field over one period.

    ``samples[k]`` is the field vector held constant on
    ``[k dt, (k+1) dt)``.  ``hard_events`` are ``(time, axis, angle)``
    rotations applied instantaneously at grid times (angle carries the sign).
    """

    samples: np.ndarray = field(repr=False)
    dt: float
    period: float
    pulse_markers: Tuple[Tuple[float, float, int], ...] = ()
    hard_events: Tuple[Tuple[float, str, float], ...] = ()
    name: str = ""

    @property
    def n_steps(self) -> int:
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def events_by_step(self) -> Dict[int, List[Tuple[np.ndarray, float]]]:
        out: Dict[int, List[Tuple[np.ndarray, float]]] = {}
        for t, axis, angle in self.hard_events:
            k = int(round(t / self.dt)) if self.dt > 0 else 0
            out.setdefault(k, []).append((AXES[axis], angle))
        return out

    def tiled(self, n_periods: int) -> "ControlWaveform":
        """Repeat the waveform ``n_periods`` times."""
        events = tuple(
            (t + r * self.period, a, ang)
            for r in range(n_periods)
            for (t, a, ang) in self.hard_events
        )
        markers = tuple(
            (s + r * self.period, e + r * self.period, i)
            for r in range(n_periods)
            for (s, e, i) in self.pulse_markers
        )
        return ControlWaveform(
            np.tile(self.samples, (n_periods, 1)),
            self.dt,
            self.period * n_periods,
            markers,
            events,
            self.name,
        )


def sample_pulse(shape: PulseShape, dt: float) -> ControlWaveform:
    """Sample an isolated pulse on a grid of step ``dt``."""
    if shape.kind not in KINDS:
        raise ValueError(f"unknown pulse kind {shape.kind!r}")
    axis_vec = AXES[shape.axis]
    if shape.kind == "hard":
        return ControlWaveform(
            np.zeros((0, 3)),
            dt,
            0.0,
            ((0.0, 0.0, 0),),
            ((0.0, shape.axis, shape.sign * shape.target_angle),),
            name="hard",
        )
    n = int(round(shape.duration / dt))
    if abs(n * dt - shape.duration) > 1e-9 * shape.duration:
        raise ValueError("pulse duration must be an integer number of grid steps")
    if n < MIN_SAMPLES_PER_PULSE:
        raise evolution.ResolutionError(
            f"dt={dt:g} too coarse for a shaped pulse of duration {shape.duration:g} "
            f"(need at least {MIN_SAMPLES_PER_PULSE} steps)"
        )
    amp = shape.envelope((np.arange(n) + 0.5) * dt)
    area = amp.sum() * dt
    if not np.isfinite(area) or abs(area) < 1e-12:
        raise ValueError("pulse envelope has zero area; target angle cannot be met")
    amp = amp * (shape.target_angle / area)
    if shape.kind == "fourier-series":
        # coefficients must already meet the angle constraint
        if abs(area - shape.target_angle) > ANGLE_TOL * max(1.0, shape.target_angle):
            raise ValueError(
                f"Fourier coefficients give rotation {area:.6g}, "
                f"target {shape.target_angle:.6g}"
            )
    samples = np.outer(shape.sign * amp, axis_vec)
    return ControlWaveform(samples, dt, shape.duration, ((0.0, shape.duration, 0),), (), shape.name or shape.kind)


def rotation_angle(waveform: ControlWaveform) -> float:
    """Net rotation angle of a single-axis waveform (sum of field times dt)."""
    total = waveform.samples.sum(axis=0) * waveform.dt
    for _, axis, angle in waveform.hard_events:
        total = total + AXES[axis] * angle
    return float(np.linalg.norm(total))


# --- sequences ---------------------------------------------------------------

_8P = [("x", 1), ("y", 1), ("x", 1), ("y", -1), ("y", -1), ("x", 1), ("y", 1), ("x", 1)]


def _flip(slots, which):
    return [(a, -s if which == "all" or a == which else s) for a, s in slots]


def sequence_slots(name: str) -> List[Tuple[str, int]]:
    """Slot list ``[(axis, sign), ...]`` for a named sequence.

    The ``nc`` family starts from ``XY`` and doubles by appending a copy
    with the X signs flipped (odd doublings: 4c, 16c, 64c) or with all signs
    flipped (even doublings: 8c, 32c).
    """
    if name == "8p":
        return list(_8P)
    if name.endswith("c") and name[:-1].isdigit():
        n = int(name[:-1])
        if n >= 4 and n & (n - 1) == 0:
            slots = [("x", 1), ("y", 1)]
            level = 0
            while len(slots) < n:
                level += 1
                slots = slots + _flip(slots, "x" if level % 2 else "all")
            return slots
    raise ValueError(f"unknown sequence {name!r}; expected one of {SEQUENCES}")


def build_sequence(
    name: str,
    pulse: PulseShape,
    tau_p: float = 1.0,
    dt: Optional[float] = None,
    hard_position: str = "end",
) -> ControlWaveform:
    """Pulse train for a named sequence; each slot holds one pulse.

    Shaped pulses fill their slot.  Hard pulses act at the end of their
    slot by default, so the last one coincides with the end of the
    period; ``hard_position="centre"`` puts them mid-slot instead, which
    keeps the time-reversal symmetry of palindromic sequences about t=0.
    """
    if hard_position not in ("end", "centre"):
        raise ValueError(f"hard_position must be 'end' or 'centre', got {hard_position!r}")
    slots = sequence_slots(name)
    if dt is None:
        dt = tau_p / DEFAULT_SAMPLES_PER_PULSE
    n_per = int(round(tau_p / dt))
    if abs(n_per * dt - tau_p) > 1e-9 * tau_p:
        raise ValueError("tau_p must be an integer number of grid steps")
    period = len(slots) * tau_p
    markers = []
    if pulse.kind == "hard":
        events = []
        for i, (axis, sign) in enumerate(slots):
            t_end = (i + 1) * tau_p if hard_position == "end" else (i + 0.5) * tau_p
            events.append((t_end, axis, sign * pulse.target_angle))
            markers.append((t_end, t_end, i))
        samples = np.zeros((n_per * len(slots), 3))
        return ControlWaveform(samples, dt, period, tuple(markers), tuple(events), name)
    if abs(pulse.duration - tau_p) > 1e-12 * tau_p:
        raise ValueError(
            f"pulse duration {pulse.duration:g} does not match slot length {tau_p:g}"
        )
    cache: Dict[Tuple[str, int], np.ndarray] = {}
    chunks = []
    for i, (axis, sign) in enumerate(slots):
        key = (axis, sign)
        if key not in cache:
            cache[key] = sample_pulse(pulse.oriented(axis, sign), dt).samples
        chunks.append(cache[key])
        markers.append((i * tau_p, (i + 1) * tau_p, i))
    return ControlWaveform(np.concatenate(chunks), dt, period, tuple(markers), (), name)


def sequence_to_dict(name: str, pulse: PulseShape, tau_p: float = 1.0) -> dict:
    return {"sequence": name, "tau_p": tau_p, "pulse": pulse.to_dict()}


def sequence_from_dict(d: dict) -> Tuple[str, PulseShape, float]:
    name = d["sequence"]
    if name not in SEQUENCES:
        raise ValueError(f"unknown sequence {name!r}")
    return name, PulseShape.from_dict(d["pulse"]), float(d.get("tau_p", 1.0))


# --- self-refocusing pulse design -------------------------------------------

_FIELD_DIRS = {"x": np.array([1.0, 0, 0]), "y": np.array([0, 1.0, 0]), "z": np.array([0, 0, 1.0])}


def test_fields(directions: Sequence[str]) -> List[np.ndarray]:
    """Unit static test fields, one per requested direction.

    Cross terms between a field along the pulse axis and a perpendicular
    field cannot be cancelled by a one-axis pulse, so mixed directions
    are not constrained.
    """
    return [_FIELD_DIRS[d] for d in directions]


def pulse_error_series(waveform: ControlWaveform, axis: str, angle: float, J, order: int):
    """Series of ``U_ref^dagger U`` in powers of the static field ``J``.

    ``U_ref`` is the instantaneous rotation at the pulse centre with free
    evolution on either side; the pulse is self-refocusing to order K when
    the coefficients 1..K vanish.
    """
    basis = build_basis(1)
    U = evolution.waveform_series(waveform, J, basis, order)
    half = evolution.free_series(J, waveform.period / 2, basis, order)
    P = evolution.constant_series(evolution.hard_rotation(AXES[axis], angle, basis), order)
    ref = evolution.series_mul(half, evolution.series_mul(P, half))
    ref_dag = np.conj(np.swapaxes(ref, -1, -2))
    # inverse of a unitary series at real lam: conjugate transpose term by term
    return evolution.series_mul(ref_dag, U)


def pulse_cumulant_residuals(shape: PulseShape, order: int, directions=("x", "y", "z"),
                             scale: float = 0.1, dt: Optional[float] = None) -> np.ndarray:
    """Norms ``||D_k||`` for k = 1..order at field strength ``scale/duration``.

    Returns an array (n_fields, order), maximal over test fields per order
    being the design figure of merit.
    """
    if dt is None:
        dt = shape.duration / DEFAULT_SAMPLES_PER_PULSE
    wf = sample_pulse(shape, dt)
    fields = test_fields(directions)
    out = np.zeros((len(fields), order))
    for i, J in enumerate(fields):
        D = pulse_error_series(wf, shape.axis, shape.sign * shape.target_angle, J / shape.duration, order)
        out[i] = [np.linalg.norm(D[k]) * scale**k for k in range(1, order + 1)]
    return out


def _constraint_system(n_params: int, smoothness: int, angle: float, duration: float):
    n = np.arange(1, n_params + 1, dtype=float)
    rows = [np.ones(n_params)]
    rhs = [angle / duration]
    for j in range(1, smoothness):
        rows.append(n ** (2 * j))
        rhs.append(0.0)
    return np.array(rows), np.array(rhs)


def design_pulse(
    order: int,
    smoothness: int = 1,
    n_params: Optional[int] = None,
    field_directions: Sequence[str] = ("x", "y", "z"),
    duration: float = 1.0,
    target_angle: float = math.pi,
    samples: int = 256,
    seed: int = 0,
    n_trials: int = 24,
    threshold: float = 1e-6,
    name: Optional[str] = None,
) -> PulseShape:
    """Design a Fourier-series self-refocusing pulse of the given order.

    The coefficients satisfy the rotation-angle and end-derivative
    constraints exactly; the remaining freedom is fitted by least squares
    so that the pulse cumulants of orders ``1..order`` vanish for every
    test field.  Designing runs on a coarse grid; the final residual is
    checked on the default 512-step grid.
    """
    if order not in (1, 2):
        raise ValueError("design order must be 1 or 2")
    if smoothness < 1:
        raise ValueError("smoothness must be >= 1")
    if n_params is None:
        n_params = order + smoothness + 1
    if n_params < order + smoothness + 1:
        raise ValueError("n_params must be at least order + smoothness + 1")
    Aeq, beq = _constraint_system(n_params, smoothness, target_angle, duration)
    a_part = np.linalg.lstsq(Aeq, beq, rcond=None)[0]
    _, sv, vt = np.linalg.svd(Aeq)
    null = vt[len(sv):].T
    fields = test_fields(field_directions)

    def coeffs(z):
        return a_part + null @ z

    def make_residual(dt):
        def residual(z):
            shape = PulseShape("fourier-series", duration, "x", 1, target_angle, tuple(coeffs(z)), smoothness)
            wf = sample_pulse(shape, dt)
            res = []
            for J in fields:
                D = pulse_error_series(wf, "x", target_angle, J / duration, order)
                for k in range(1, order + 1):
                    res.append(D[k].real.ravel())
                    res.append(D[k].imag.ravel())
            return np.concatenate(res)
        return residual

    coarse = make_residual(duration / samples)
    fine = make_residual(duration / DEFAULT_SAMPLES_PER_PULSE)
    rng = np.random.default_rng(seed)
    best = None
    solutions = []
    for trial in range(n_trials):
        z0 = np.zeros(null.shape[1]) if trial == 0 else rng.normal(scale=2.0, size=null.shape[1])
        sol = least_squares(coarse, z0, method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=300)
        r = np.max(np.abs(sol.fun))
        if best is None or r < best[0]:
            best = (r, sol.x)
        if r < 1e-8:
            solutions.append((np.max(np.abs(coeffs(sol.x))), sol.x))
    if not solutions:
        raise DesignError(
            f"pulse design did not converge (best residual {best[0]:.3g})",
            best_residual=best[0],
        )
    # smallest peak coefficient first
    solutions.sort(key=lambda s: s[0])
    sol = least_squares(fine, solutions[0][1], method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=50)
    z = sol.x
    shape = PulseShape(
        "fourier-series", duration, "x", 1, target_angle, tuple(coeffs(z)), smoothness,
        name=name or f"{'SQ'[order - 1]}{smoothness}",
    )
    final = pulse_cumulant_residuals(shape, order, field_directions)
    worst = float(final.max())
    if worst > threshold:
        raise DesignError(
            f"designed pulse residual {worst:.3g} exceeds threshold {threshold:g}",
            best_residual=worst,
            shape=shape,
        )
    meta = {"order": order, "residuals": final.max(axis=0).tolist(), "field_directions": list(field_directions)}
    return dataclasses.replace(shape, meta=meta)
