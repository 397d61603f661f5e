import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from statetrans import ModelSpec  # noqa: E402

SIR_B = np.array([[-1, 0], [1, -1], [0, 1]])


def sir_spec(integrator="continuous", beta=1.0, gamma=1.0, state=(2, 1, 0), num_steps=1, time_delta=1.0, N=None):
    """SIR with per-capita infection hazard beta * I (or beta * I / N)."""
    scale = 1.0 if N is None else 1.0 / N

    def si(t, x):
        return beta * x[:, 1] * scale

    def ir(t, x):
        return gamma

    return ModelSpec(integrator, SIR_B, (si, ir), np.atleast_2d(state), num_steps, time_delta=time_delta)


def pure_death_spec(n=100, gamma=0.5, integrator="continuous"):
    def ir(t, x):
        return gamma

    return ModelSpec(integrator, np.array([[-1], [1]]), (ir,), np.array([[n, 0]]), n)


@pytest.fixture
def sir():
    return sir_spec()


MODELS_DIR = Path(__file__).resolve().parents[1] / "src" / "statetrans" / "models"


_ACCEPTANCE = {}


def record_acceptance(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number:>2} {title}: {detail}"
    _ACCEPTANCE[str(number)] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda k: (int(k.rstrip("b")), k)
    for k in sorted(_ACCEPTANCE, key=key):
        terminalreporter.write_line(_ACCEPTANCE[k])
