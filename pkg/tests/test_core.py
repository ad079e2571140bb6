import math

import numpy as np
import pytest

from v2blab.core import (
    ChargerSpec,
    ConfigError,
    Episode,
    EvSession,
    FeasibilityError,
    InvalidInputError,
    Tariff,
    building_only_bill,
    check_feasibility,
    compute_bill,
    default_chargers,
    energy_rate,
    soc_step,
)


@pytest.mark.parametrize("soc,p,cap,expected", [
    (0.50, 20.0, 40.0, 0.625),
    (0.30, 0.0, 62.0, 0.30),
    (0.625, -20.0, 40.0, 0.50),
])
def test_soc_step(soc, p, cap, expected):
    assert soc_step(soc, p, 0.25, cap) == pytest.approx(expected, abs=1e-12)


def test_soc_step_rejects_nan():
    with pytest.raises(InvalidInputError):
        soc_step(math.nan, 1.0, 0.25, 40.0)


@pytest.mark.parametrize("hour,rate", [(12, 0.1466), (3, 0.11271), (6, 0.1466), (22, 0.11271)])
def test_energy_rate_window(hour, rate):
    t = Tariff()
    assert energy_rate(t, hour * 4) == rate


def test_tariff_validation():
    with pytest.raises(ConfigError):
        Tariff(theta_e_offpeak=0.2, theta_e_peak=0.1)
    with pytest.raises(ConfigError):
        Tariff(peak_window=(10, 5))
    assert Tariff().demand_price == pytest.approx(9.62 * 0.25)
    assert Tariff(demand_includes_delta=False).demand_price == 9.62


def test_bill_hand_values():
    one = Episode(np.array([100.0]), tariff=Tariff(peak_window=(0, 24)))
    bill = compute_bill(one, np.zeros((1, 1)), {})
    assert bill.energy_cost_usd == pytest.approx(3.665, abs=1e-12)
    peak = Episode(np.array([125.0]), tariff=Tariff(peak_window=(0, 24)))
    assert compute_bill(peak, np.zeros((1, 1)), {}).demand_charge_usd == pytest.approx(300.625)


def test_zero_everything_bill():
    s = EvSession(1, 0, 2, 0.0, 0.5, 40.0)
    ep = Episode(np.zeros(4), (s,))
    bill = compute_bill(ep, np.zeros((4, 1)), {})
    assert bill.total_usd == 0.0
    assert bill.missing_soc_kwh == pytest.approx(20.0)


def test_bill_rejects_export():
    ep = Episode(np.array([20.0, 20.0]))
    with pytest.raises(FeasibilityError) as err:
        compute_bill(ep, np.array([[-30.0], [0.0]]), {})
    assert err.value.slots == [0]


def test_weighted_bill():
    ep = Episode(np.array([100.0]), tariff=Tariff(peak_window=(0, 24)))
    bill = compute_bill(ep, np.zeros((1, 1)), {})
    assert bill.weighted((0, 1, 0)) == pytest.approx(3.665)
    assert bill.weighted((1, 1, 3)) == pytest.approx(3.665 + 3 * 240.5)


def test_feasibility_checks():
    fleet = default_chargers(1, 1)
    ep = Episode(np.array([20.0, 20.0]))
    assert check_feasibility(fleet, ep, np.zeros((2, 2))) == []
    v = check_feasibility(fleet, ep, np.array([[0.0, 25.0], [0.0, 0.0]]))
    assert [x.constraint for x in v] == ["charger_bounds"]
    v = check_feasibility(fleet, ep, np.array([[-20.0, 0.0], [-20.0, 0.0]]))
    assert [x.constraint for x in v] == []
    ep2 = Episode(np.array([-0.0 + 20.0]))
    v = check_feasibility(default_chargers(2, 0), ep2, np.array([[-15.0, -15.0]]))
    assert [(x.constraint, x.value) for x in v] == [("building_power", -10.0)]


def test_feasibility_soc_bands():
    s = EvSession(7, 0, 2, 0.85, 0.9, 40.0)
    ep = Episode(np.array([50.0, 50.0]), (s,))
    occ = np.array([[0], [0]])
    v = check_feasibility(default_chargers(1, 0), ep, np.array([[20.0], [0.0]]), occ)
    # the band stays violated until the EV leaves
    assert [(x.constraint, x.slot) for x in v] == [("soc_max", 0), ("soc_max", 1)]


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        ChargerSpec(0, 1.0, 20.0)
    with pytest.raises(InvalidInputError):
        EvSession(0, 3, 3, 0.1, 0.5, 40.0)
    with pytest.raises(InvalidInputError):
        Episode(np.array([1.0, -1.0]))
    with pytest.raises(InvalidInputError):
        Episode(np.ones(2), (EvSession(0, 0, 5, 0.1, 0.5, 40.0),))


def test_building_only_bill_matches_zero_schedule():
    ep = Episode(np.linspace(10, 80, 96))
    assert building_only_bill(ep) == compute_bill(ep, np.zeros((96, 3)), {})


def test_default_fleet():
    fleet = default_chargers()
    assert len(fleet) == 15
    assert sum(c.bidirectional for c in fleet) == 5
    assert [c.id for c in fleet] == list(range(15))
