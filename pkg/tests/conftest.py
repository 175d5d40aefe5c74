import numpy as np
import pytest
from hypothesis import settings

from eddm.plant import PlantConfig, with_noise_off

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60)
settings.load_profile("repo")


@pytest.fixture
def quiet_plant():
    return with_noise_off(PlantConfig())


@pytest.fixture
def short_plant():
    return PlantConfig(dt=2.0, n_steps=200)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ci_run():
    """The CI-scale pipeline: datasets, the Train-regime library, the
    extended library and cases 1-3, with the wall time it took."""
    import time

    from eddm.config import ci_config
    from eddm.harness import build_context, run_case, comparison_specs

    start = time.perf_counter()
    ctx = build_context(ci_config(0))
    specs = {s.case_id: s for s in comparison_specs(ctx.config)}
    reports = {cid: run_case(specs[cid], ctx) for cid in ("1", "2", "3")}
    return {"ctx": ctx, "reports": reports, "specs": specs, "seconds": time.perf_counter() - start}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
