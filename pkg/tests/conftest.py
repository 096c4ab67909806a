import numpy as np
import pytest

from curriculum3d.model import ModelConfig
from curriculum3d.phantom import PhantomConfig, generate_phantom
from curriculum3d.pipeline import prepare_dataset

MICRO_MODEL = dict(
    base_width=2, block_widths=(2, 4, 8, 16),
    stage_strides=((1, 1, 1), (2, 2, 1), (2, 2, 1), (1, 1, 1)),
    patch_shape=(8, 8, 4),
)


@pytest.fixture(scope="session")
def small_config():
    return PhantomConfig(n_patients=8, volume_shape=(32, 32, 8), seed=3)


@pytest.fixture(scope="session")
def small_cases(small_config):
    return generate_phantom(small_config)


@pytest.fixture(scope="session")
def small_breasts(small_cases):
    return prepare_dataset(small_cases)


@pytest.fixture
def micro_config():
    return ModelConfig(**MICRO_MODEL)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict(request):
    """Print one PASS/FAIL line for an acceptance criterion and repeat it in the summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def report(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
