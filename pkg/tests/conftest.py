import math

import numpy as np
import pytest

from rislab.ris import AmplitudeParams, RisSpec
from rislab.scenario import case_study_scenario

IDEAL = AmplitudeParams(omega=0.0)


@pytest.fixture
def scenario():
    return case_study_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_spec(n: int, bits: int, amp: AmplitudeParams = IDEAL) -> RisSpec:
    return RisSpec(rows=1, cols=n, phase_bits=bits, spacing_m=0.005, center=(75.0, 30.0, 6.0), amp=amp)


def random_channel(rng, n: int, direct: bool = True):
    from rislab.channel import ChannelRealization

    def cn(size=None):
        return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2)

    return ChannelRealization(cn(n), cn(n), cn() if direct else 0j)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_report

    if acceptance_report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_report.LINES:
            terminalreporter.write_line(line)
