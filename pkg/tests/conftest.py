import numpy as np
import pytest

from v2blab.core import ChargerSpec, Episode, EvSession, Tariff
from v2blab.sim import Simulator

BI = ChargerSpec(0, -20.0, 20.0)
UNI = ChargerSpec(1, 0.0, 20.0)


def toy_world():
    """One bidirectional charger, eight all-peak slots, one EV for the whole stay.

    The load spike at slot 3 exceeds the rest by more than the charger can
    discharge, so the optimum shaves 20 kW there and still meets the requirement.
    """
    tariff = Tariff(peak_window=(0.0, 24.0))
    load = np.array([30, 40, 35, 80, 30, 25, 40, 35.0])
    ev = EvSession("ev", 0, 8, 0.3, 0.6, 40.0)
    return Episode(load, (ev,), tariff), (ChargerSpec(0, -20.0, 20.0),)


def state_with(sessions, chargers=(BI, UNI), load=None, n_slots=8, peak=0.0, slot=0,
               tariff=None):
    """SimState at ``slot`` of a small episode, reached with zero actions."""
    load = np.full(n_slots, 50.0) if load is None else np.asarray(load, dtype=float)
    ep = Episode(load, tuple(sessions), tariff or Tariff(peak_window=(0.0, 24.0)),
                 estimated_peak_kw=peak)
    sim = Simulator(ep, chargers)
    state = sim.reset()
    while state.slot < slot:
        state = sim.step(state, np.zeros(len(chargers)))
    return state


@pytest.fixture
def toy():
    return toy_world()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acclog

    if acclog.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acclog.summary_lines():
            terminalreporter.write_line(line)
