import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_stable(rng, n, margin=0.3):
    """Random matrix shifted so every eigenvalue has real part <= -margin."""
    A = rng.normal(size=(n, n))
    shift = np.max(np.linalg.eigvals(A).real) + margin + rng.random()
    return A - shift * np.eye(n)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion(request):
    """Print and collect one ``PASS``/``FAIL`` line for an acceptance criterion."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}" + (
            f"  [{detail}]" if detail else "")
        print(line)
        request.config._acceptance_lines.append(line)
        return ok

    return record


def langevin_run(gamma, n_retained, seed, dt=2.5e-3 / 10, stride=10):
    """Equilibrium samples of the default Langevin model at friction ``gamma``."""
    from fdtfit.models import LangevinModel
    from fdtfit.simulate import SimConfig, ensemble

    model = LangevinModel(gamma=gamma)
    n_steps = n_retained * stride
    burn = n_steps // 10
    sim = SimConfig(dt=dt, n_steps=n_steps + burn, subsample_stride=stride,
                    burn_in_steps=burn, seed=seed)
    return model, ensemble(model, sim)


@pytest.fixture(scope="session")
def langevin_05():
    return langevin_run(0.5, 8_000_000, 2024)


@pytest.fixture(scope="session")
def langevin_01():
    return langevin_run(0.1, 8_000_000, 2025)


@pytest.fixture(scope="session")
def langevin_05_x4():
    return langevin_run(0.5, 32_000_000, 2026)
