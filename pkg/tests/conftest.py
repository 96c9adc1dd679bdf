import functools
import sys

import numpy as np
import pytest

from refocus import pulses, propagator
from refocus.algebra import build_basis, structure_constants


@pytest.fixture(scope="session")
def basis():
    return build_basis(1)


@pytest.fixture(scope="session")
def constants(basis):
    return structure_constants(basis)


@functools.lru_cache(maxsize=None)
def designed(order, smoothness):
    return pulses.design_pulse(order, smoothness)


@functools.lru_cache(maxsize=None)
def spectrum(seq, pulse_name, M=256, method="exact", hard_position="end"):
    shape = {
        "G": lambda: pulses.gaussian_pulse(0.05),
        "hard": pulses.hard_pulse,
        "S1": lambda: designed(1, 1),
        "Q1": lambda: designed(2, 1),
    }[pulse_name]()
    wf = pulses.build_sequence(seq, shape, hard_position=hard_position)
    return propagator.waveform_spectrum(wf, build_basis(1), M, method)


def random_su2(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([[w - 1j * z, -y - 1j * x], [y - 1j * x, w + 1j * z]])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
