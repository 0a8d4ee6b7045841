import numpy as np
import pytest

from lifelong_bbo.config import desk_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def desk():
    return desk_config()


@pytest.fixture
def tiny():
    """Smallest config that still exercises every code path."""
    return desk_config().replace(
        problem={"dim": 2, "pop_size": 6, "fe_budget": 36},
        train={"epochs": 2, "problems_per_epoch": 3, "checkpoint_every": 1},
        policy={"hidden": 8},
        ppo={"minibatch_size": 8},
        eval={"n_problems": 4},
    )


ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(key: str, ok: bool, detail: str = "") -> bool:
        line = f"{key}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        ACCEPTANCE_LINES[key] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
