import os
import subprocess
import sys

import numpy as np
import pytest

from refocus import kernels, montecarlo, noise, pulses


def inputs(seq, pulse, axes=("x", "y", "z"), n_real=3):
    wf = pulses.build_sequence(seq, pulse)
    model = noise.NoiseModel(0.0355, 4.0, axes, 32.0)
    full, _, rec, ev_s, ev_q, u0 = montecarlo._prepare(wf, model, wf.dt, None)
    paths = noise.synthesize_batch(model, full.dt, range(n_real))
    return (np.ascontiguousarray(full.samples), np.ascontiguousarray(paths), full.dt, ev_s, ev_q, rec, u0)


compiled = pytest.importorskip("refocus._kernels")


@pytest.mark.parametrize("seq,pulse", [("8c", pulses.gaussian_pulse(0.05)), ("4c", pulses.hard_pulse())])
def test_backends_agree(seq, pulse):
    args = inputs(seq, pulse)
    a = kernels.get_kernel("compiled")(*args)
    b = kernels.get_kernel("python")(*args)
    assert np.max(np.abs(a - b)) < 1e-10


def test_zero_noise_unit_cos():
    args = list(inputs("8p", pulses.gaussian_pulse(0.05)))
    args[1] = np.zeros_like(args[1])
    for name in ("compiled", "python"):
        assert np.allclose(kernels.get_kernel(name)(*args), 1.0, atol=1e-12)


def test_default_is_compiled():
    assert kernels.BACKEND == "compiled"
    assert kernels.get_kernel() is compiled.evolve_cos_phi


def test_env_forces_fallback():
    env = dict(os.environ, REFOCUS_KERNEL="python")
    out = subprocess.run([sys.executable, "-c", "from refocus import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_kernel("fortran")
