import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcat.errors import ConfigError, DomainError, EstimationError
from pcat.geotrace import ChannelContext
from pcat.power import (
    EXAMPLE_DEVICE,
    DeviceCharacteristic,
    TxPowerParams,
    device_power,
    estimate_tx_power,
    power_state,
    transmission_duration,
    transmission_energy,
)


@pytest.mark.parametrize("rsrp, expected", [(-50.0, -60.0), (-120.0, -4.0), (-200.0, 23.0)])
def test_estimate_tx_power(rsrp, expected):
    assert estimate_tx_power(ChannelContext(rsrp=rsrp)) == pytest.approx(expected, abs=1e-12)


def test_estimate_tx_power_absent():
    with pytest.raises(EstimationError):
        estimate_tx_power(ChannelContext(snr=10.0))


def test_device_power_examples():
    dev = EXAMPLE_DEVICE
    low = dev.low_intercept + dev.low_slope * dev.knee_dbm
    assert device_power(dev.knee_dbm, dev) == pytest.approx(low, abs=1e-6)
    assert device_power(0.0, dev) == 1.0
    assert device_power(20.0, dev) > device_power(0.0, dev)
    with pytest.raises(DomainError):
        device_power(23.5, dev)


def test_power_state_edges():
    dev = EXAMPLE_DEVICE
    assert power_state(-40.0, dev) == 0
    assert power_state(0.0, dev) == 2
    assert power_state(-0.001, dev) == 1
    assert power_state(23.0, dev) == dev.n_states - 1 == 4


def test_power_monotone_dense():
    xs = np.linspace(-40.0, EXAMPLE_DEVICE.p_max_dbm, 10_000)
    watts = [device_power(x, EXAMPLE_DEVICE) for x in xs]
    states = [power_state(x, EXAMPLE_DEVICE) for x in xs]
    assert all(b >= a for a, b in zip(watts, watts[1:]))
    assert all(b >= a for a, b in zip(states, states[1:]))


characteristics = st.builds(
    lambda knee, ls, li, hs, edges: DeviceCharacteristic(
        knee, ls, li, ls + hs, li + ls * knee - (ls + hs) * knee, 23.0, tuple(sorted(set(edges)))
    ),
    st.floats(-30.0, 20.0),
    st.floats(0.0, 0.2),
    st.floats(0.1, 3.0),
    st.floats(0.0, 0.2),
    st.lists(st.floats(-40.0, 23.0), max_size=6),
)


@settings(max_examples=200)
@given(characteristics, st.lists(st.floats(-40.0, 23.0), min_size=2, max_size=50))
def test_power_monotone_any_device(dev, xs):
    xs = sorted(xs)
    watts = [device_power(x, dev) for x in xs]
    assert all(b >= a - 1e-9 for a, b in zip(watts, watts[1:]))
    states = [power_state(x, dev) for x in xs]
    assert all(0 <= s < dev.n_states for s in states)
    assert states == sorted(states)


def test_characteristic_validation():
    with pytest.raises(ConfigError, match="discontinuous"):
        DeviceCharacteristic(10.0, 0.005, 1.0, 0.05, 0.6, 23.0, ())
    with pytest.raises(ConfigError):
        DeviceCharacteristic(10.0, -0.1, 2.0, 0.0, 1.0, 23.0, ())
    with pytest.raises(ConfigError):
        DeviceCharacteristic(10.0, 0.005, 1.0, 0.05, 0.55, 23.0, (0.0, 0.0))
    with pytest.raises(ConfigError):
        DeviceCharacteristic.from_dict({"knee_dbm": 1.0})


def test_characteristic_dict_roundtrip():
    assert DeviceCharacteristic.from_dict(EXAMPLE_DEVICE.to_dict()) == EXAMPLE_DEVICE


def test_transmission_energy_examples():
    assert transmission_duration(1000.0, 8.0) == 1.0
    # rsrp giving tx = 0 dBm maps to 1.0 W on the example device: -60 + 0.8 * PL = 0.
    ctx = ChannelContext(rsrp=-125.0)
    est = transmission_energy(1000.0, 8.0, ctx)
    assert est.tx_power_dbm == pytest.approx(0.0, abs=1e-12)
    assert est.duration_s == 1.0
    assert est.energy_j == est.device_power_w * est.duration_s
    two_watt = DeviceCharacteristic(10.0, 0.0, 2.0, 0.0, 2.0, 23.0, ())
    assert transmission_energy(1000.0, 8.0, ctx, two_watt).energy_j == 2.0
    zero = transmission_energy(0.0, 8.0, ctx)
    assert zero.duration_s == 0.0 and zero.energy_j == 0.0
    half = transmission_energy(1000.0, 16.0, ctx)
    assert half.energy_j == est.energy_j / 2


def test_transmission_energy_errors():
    with pytest.raises(DomainError):
        transmission_energy(10.0, 0.0, ChannelContext(rsrp=-90.0))
    with pytest.raises(EstimationError):
        transmission_energy(10.0, 1.0, ChannelContext())


def test_tx_power_clamped_to_device_limit():
    params = TxPowerParams(p_max_dbm=30.0)
    est = transmission_energy(10.0, 1.0, ChannelContext(rsrp=-200.0), EXAMPLE_DEVICE, params)
    assert est.tx_power_dbm == EXAMPLE_DEVICE.p_max_dbm


@settings(max_examples=300)
@given(st.floats(0.0, 5000.0), st.integers(1, 50), st.floats(0.1, 100.0), st.floats(-140.0, -50.0))
def test_energy_homogeneous(payload, k, rate, rsrp):
    ctx = ChannelContext(rsrp=rsrp)
    one = transmission_energy(payload, rate, ctx).energy_j
    many = transmission_energy(k * payload, rate, ctx).energy_j
    assert many == pytest.approx(k * one, rel=1e-12, abs=1e-12)
