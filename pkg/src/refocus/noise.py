"""Periodic stationary Gaussian random fields with a Gaussian correlator.

``<b_a(t) b_b(t')> = delta_ab b0^2 exp(-(t - t')^2 / (2 tau0^2))`` on the
active axes.  Realizations are drawn by spectral filtering of white noise
on the period ``T`` (circulant embedding), so every path is exactly
periodic.  Realization ``r`` of a run uses seed ``base_seed + r``.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
MIN_PERIOD_RATIO = 8.0
MIN_SAMPLES_PER_TAU0 = 16
MIN_CORRELATOR_REALIZATIONS = 100


@dataclass(frozen=True)
class NoiseModel:
    b0: float
    tau0: float
    axes: Tuple[str, ...] = ("x",)
    T: float = 256.0
    kind: str = "gaussian-classical"

    def __post_init__(self):
        axes = tuple(self.axes)
        if not axes or any(a not in AXIS_INDEX for a in axes) or len(set(axes)) != len(axes):
            raise ValueError(f"axes must be a non-empty subset of x, y, z; got {self.axes!r}")
        object.__setattr__(self, "axes", tuple(sorted(axes, key=AXIS_INDEX.get)))
        if self.kind != "gaussian-classical":
            raise ValueError(f"unsupported noise kind {self.kind!r}")
        if self.b0 < 0 or self.tau0 <= 0 or self.T <= 0:
            raise ValueError("need b0 >= 0, tau0 > 0 and T > 0")

    def correlator(self, s):
        return self.b0**2 * np.exp(-np.asarray(s, dtype=float) ** 2 / (2 * self.tau0**2))

    def spectral_density(self, omega):
        """Fourier transform of the correlator."""
        w = np.asarray(omega, dtype=float)
        return math.sqrt(2 * math.pi) * self.b0**2 * self.tau0 * np.exp(-(w * self.tau0) ** 2 / 2)

    def to_dict(self):
        return {"b0": self.b0, "tau0": self.tau0, "axes": "".join(self.axes), "T": self.T, "kind": self.kind}


@dataclass(frozen=True)
class NoiseRealization:
    samples: np.ndarray = field(repr=False)  # (n, 3)
    dt: float
    seed: int
    model: NoiseModel

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.shape[0]) * self.dt


def _grid(model: NoiseModel, dt: float) -> int:
    if model.T < MIN_PERIOD_RATIO * model.tau0:
        raise ValueError(f"period T={model.T:g} must be at least {MIN_PERIOD_RATIO:g} tau0")
    if dt <= 0 or dt > model.tau0 / MIN_SAMPLES_PER_TAU0 * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} does not resolve tau0={model.tau0:g} (need dt <= tau0/16)")
    n = int(round(model.T / dt))
    if abs(n * dt - model.T) > 1e-9 * model.T:
        raise ValueError("T must be an integer number of grid steps")
    return n


def _filter(model: NoiseModel, n: int, dt: float) -> np.ndarray:
    omega = 2 * np.pi * np.fft.rfftfreq(n, d=dt)
    # DFT eigenvalues of the periodized covariance ~ S(omega_k) / dt
    return np.sqrt(model.spectral_density(omega) / dt)


def synthesize_batch(model: NoiseModel, dt: float, seeds: Sequence[int]) -> np.ndarray:
    """Samples (len(seeds), n, 3) for the given seeds."""
    n = _grid(model, dt)
    out = np.zeros((len(seeds), n, 3))
    if model.b0 == 0 or not len(seeds):
        return out
    filt = _filter(model, n, dt)
    cols = [AXIS_INDEX[a] for a in model.axes]
    white = np.empty((len(seeds), len(cols), n))
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(int(s))
        white[i] = rng.standard_normal((len(cols), n))
    paths = np.fft.irfft(np.fft.rfft(white, axis=-1) * filt, n=n, axis=-1)
    out[:, :, cols] = np.swapaxes(paths, 1, 2)
    return out


def synthesize(model: NoiseModel, dt: float, seed: int) -> NoiseRealization:
    return NoiseRealization(synthesize_batch(model, dt, [seed])[0], dt, int(seed), model)


def empirical_correlator(realizations, max_lag=None):
    """Circular-lag autocovariance averaged over realizations and active axes.

    Returns ``(lags, mean, stderr)``; lags are in time units.  The field
    has zero mean by construction, so no mean is subtracted.
    """
    if len(realizations) == 0:
        raise ValueError("no realizations given")
    if len(realizations) < MIN_CORRELATOR_REALIZATIONS:
        warnings.warn(
            f"only {len(realizations)} realizations; standard errors are unreliable",
            stacklevel=2,
        )
    dt = realizations[0].dt
    axes = realizations[0].model.axes
    cols = [AXIS_INDEX[a] for a in axes]
    n = realizations[0].samples.shape[0]
    if max_lag is None:
        max_lag = n // 2
    X = np.stack([r.samples[:, cols] for r in realizations])  # (R, n, A)
    F = np.fft.rfft(X, axis=1)
    acov = np.fft.irfft(F * F.conj(), n=n, axis=1)[:, : max_lag + 1] / n  # (R, L, A)
    per = acov.transpose(0, 2, 1).reshape(-1, max_lag + 1)
    mean = per.mean(axis=0)
    if per.shape[0] > 1:
        stderr = per.std(axis=0, ddof=1) / math.sqrt(per.shape[0])
    else:
        stderr = np.zeros_like(mean)
    return np.arange(max_lag + 1) * dt, mean, stderr


def write_realization_csv(path, realization: NoiseRealization):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "b_x", "b_y", "b_z"])
        for t, b in zip(realization.times, realization.samples):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in b])
