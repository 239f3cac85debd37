import numpy as np
import pytest

from gradiometer.physics import PhysicsConfig


@pytest.fixture
def physics():
    return PhysicsConfig(dz=0.328)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = []

    class Recorder:
        def __call__(self, number, text, ok):
            line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}"
            lines.append(line)
            print(line)
            return ok

    yield Recorder()
    _ACCEPTANCE.extend(lines)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
