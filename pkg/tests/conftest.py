import numpy as np
import pytest
from hypothesis import settings

from evmotion.gaussians import GaussianCloud
from evmotion.geometry import Camera, look_at_camera

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def axis_camera():
    """Identity-pose camera looking down +z, 32x32."""
    return Camera(40.0, 15.5, 15.5, 32, 32)


@pytest.fixture
def scene_camera():
    return look_at_camera((0.0, 0.0, 4.0), (0.0, 0.0, 0.0), 80.0, 64, 64)


def blob(rng, n=60, spread=0.3, center=(0.0, 0.0, 5.0), radius=(0.05, 0.15)):
    mu = np.asarray(center) + spread * rng.standard_normal((n, 3))
    return GaussianCloud(mu, rng.uniform(*radius, n), rng.uniform(0.2, 1.0, (n, 3)),
                         rng.uniform(0.3, 1.0, n))


_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record a one-line pass/fail result, echoed in the terminal summary."""
    def record(label: str, ok: bool, detail: str = "") -> bool:
        line = f"[{label}] {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
