import sys

import numpy as np
import pytest

from cebench import simlab


@pytest.fixture(scope="session")
def small_trial():
    """A modest synthetic trial shared by read-only tests."""
    spec = simlab.DgpSpec(
        outcomes=(simlab.OutcomeDgp("y", simlab.EffectSpec(arm_effects={"Gikuriro": 0.2, "GD_Large": 0.4})),),
    )
    return simlab.generate(spec, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
