"""Shared scenario builders for the test suite."""

import numpy as np
import pytest

from aoi_rl.channel import LinkParams
from aoi_rl.env import SourceSpec, SystemConfig


def make_config(
    distances=(25.0,),
    battery_mj=0.3,
    battery_quanta=3,
    aoi_cap=4,
    levels=4,
    packet_mbits=12.0,
    weights=None,
    rounding_mode="lower-bound",
    correlated_links=False,
    levels_uplink=None,
):
    """Small hand-rolled scenario with the standard radio physics."""
    n = len(distances)
    if weights is None:
        weights = [1.0 / n] * n
    sources = tuple(
        SourceSpec(
            battery_capacity_joules=battery_mj * 1e-3,
            battery_quanta=battery_quanta,
            aoi_cap=aoi_cap,
            weight=w,
            link=LinkParams(
                distance_m=d,
                path_loss_exponent=2.0,
                reference_gain=0.2,
                levels_downlink=levels,
                levels_uplink=levels if levels_uplink is None else levels_uplink,
            ),
        )
        for d, w in zip(distances, weights)
    )
    return SystemConfig(
        sources=sources,
        tx_power_dbm=37.0,
        harvest_efficiency=0.5,
        noise_power_dbm=-95.0,
        packet_bits=packet_mbits * 1e6,
        bandwidth_hz=1e6,
        rounding_mode=rounding_mode,
        correlated_links=correlated_links,
    )


def random_tiny_config(rng: np.random.Generator):
    """A single-source instance whose state space has at most 12 states,
    suitable for the exhaustive policy oracle."""
    # (b_max + 1) * A_max * G * H <= 12
    shapes = [
        (1, 2, 1, 1),
        (1, 3, 1, 1),
        (2, 2, 1, 1),
        (1, 2, 2, 1),
        (1, 2, 1, 2),
        (2, 4, 1, 1),
        (1, 3, 2, 1),
        (1, 6, 1, 1),
        (3, 3, 1, 1),
        (2, 2, 1, 2),
    ]
    b_max, aoi_cap, levels_g, levels_h = shapes[rng.integers(len(shapes))]
    return make_config(
        distances=(float(rng.uniform(10.0, 60.0)),),
        battery_mj=float(rng.uniform(0.05, 0.6)),
        battery_quanta=b_max,
        aoi_cap=aoi_cap,
        levels=levels_g,
        levels_uplink=levels_h,
        packet_mbits=float(rng.uniform(2.0, 16.0)),
        rounding_mode="lower-bound" if rng.random() < 0.5 else "upper-bound",
    )


@pytest.fixture
def small_config():
    return make_config()


@pytest.fixture
def free_transmission_config():
    """Upper-bound rounding with a short packet makes every transmission
    cost zero quanta, so transmitting each slot is optimal (average AoI 1)."""
    return make_config(
        distances=(10.0,), packet_mbits=1.0, levels=2, rounding_mode="upper-bound"
    )
