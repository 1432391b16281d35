"""System state, per-slot dynamics, energy arithmetic, and a step simulator.

Actions are plain ints: 0 harvests (the destination beams RF power to all
sources), i in 1..N transmits an update packet from source i. All energy
bookkeeping is in integer battery quanta of B_max,i / b_max,i joules each.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from .channel import FadingQuantizer, LinkParams, build_quantizer, sample_level
from .errors import InfeasibleActionError, InvalidConfigError

HARVEST = 0


def action_name(action: int) -> str:
    return "H" if action == HARVEST else f"T{action}"


def parse_action(name: str) -> int:
    if name == "H":
        return HARVEST
    if name.startswith("T"):
        return int(name[1:])
    raise ValueError(f"unrecognized action label {name!r}")


@dataclass(frozen=True)
class SourceSpec:
    battery_capacity_joules: float
    battery_quanta: int
    aoi_cap: int
    weight: float
    link: LinkParams

    def __post_init__(self):
        if self.battery_quanta < 1:
            raise InvalidConfigError("battery_quanta must be >= 1")
        if self.aoi_cap < 1:
            raise InvalidConfigError("aoi_cap must be >= 1")
        if self.weight < 0:
            raise InvalidConfigError("weights must be non-negative")
        if self.battery_capacity_joules <= 0:
            raise InvalidConfigError("battery capacity must be positive")


def _dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass
class SystemConfig:
    """Full scenario description; immutable in practice once constructed."""

    sources: tuple[SourceSpec, ...]
    tx_power_dbm: float
    harvest_efficiency: float
    noise_power_dbm: float
    packet_bits: float
    bandwidth_hz: float
    rounding_mode: str = "lower-bound"
    seed: int = 0
    correlated_links: bool = False

    # derived, filled in __post_init__
    tx_power_watts: float = field(init=False)
    noise_watts: float = field(init=False)
    downlink_quantizers: tuple[FadingQuantizer, ...] = field(init=False)
    uplink_quantizers: tuple[FadingQuantizer, ...] = field(init=False)

    def __post_init__(self):
        if not self.sources:
            raise InvalidConfigError("at least one source is required")
        total_weight = sum(s.weight for s in self.sources)
        if abs(total_weight - 1.0) > 1e-9:
            raise InvalidConfigError(f"weights must sum to 1, got {total_weight}")
        if not 0 < self.harvest_efficiency <= 1:
            raise InvalidConfigError("harvest efficiency must be in (0, 1]")
        if self.packet_bits <= 0 or self.bandwidth_hz <= 0:
            raise InvalidConfigError("packet size and bandwidth must be positive")
        if self.rounding_mode not in ("lower-bound", "upper-bound"):
            raise InvalidConfigError(f"unknown rounding mode {self.rounding_mode!r}")
        if self.correlated_links:
            for s in self.sources:
                if s.link.levels_downlink != s.link.levels_uplink:
                    raise InvalidConfigError(
                        "correlated_links requires equal down/uplink level counts"
                    )
        self.sources = tuple(self.sources)
        self.tx_power_watts = _dbm_to_watts(self.tx_power_dbm)
        self.noise_watts = _dbm_to_watts(self.noise_power_dbm)
        self.downlink_quantizers = tuple(
            build_quantizer(s.link.mean_gain, s.link.levels_downlink) for s in self.sources
        )
        self.uplink_quantizers = tuple(
            build_quantizer(s.link.mean_gain, s.link.levels_uplink) for s in self.sources
        )

    @property
    def num_sources(self) -> int:
        return len(self.sources)

    @property
    def spectral_load(self) -> float:
        """Packet size normalized by bandwidth (bits/s/Hz over a unit slot).

        Single named conversion point for the Shannon-rate exponent.
        """
        return self.packet_bits / self.bandwidth_hz


@dataclass(frozen=True)
class SourceState:
    battery: int  # quanta in [0, b_max]
    aoi: int  # slots in [1, A_max]
    g_level: int  # downlink level in [1, G]
    h_level: int  # uplink level in [1, H]


@dataclass(frozen=True)
class SystemState:
    per_source: tuple[SourceState, ...]


def harvested_quanta(config: SystemConfig, source_index: int, g_level: int) -> int:
    """Energy quanta stored when the slot is spent harvesting."""
    spec = config.sources[source_index]
    gain = config.downlink_quantizers[source_index].representative_gains[g_level - 1]
    x = (
        spec.battery_quanta
        / spec.battery_capacity_joules
        * config.harvest_efficiency
        * config.tx_power_watts
        * gain
    )
    return math.floor(x) if config.rounding_mode == "lower-bound" else math.ceil(x)


def transmit_quanta(config: SystemConfig, source_index: int, h_level: int) -> int:
    """Energy quanta needed to push one packet through at the uplink level."""
    spec = config.sources[source_index]
    gain = config.uplink_quantizers[source_index].representative_gains[h_level - 1]
    snr_gap = 2.0 ** config.spectral_load - 1.0
    x = (
        spec.battery_quanta
        / spec.battery_capacity_joules
        * config.noise_watts
        / gain
        * snr_gap
    )
    return math.ceil(x) if config.rounding_mode == "lower-bound" else math.floor(x)


def energy_tables(config: SystemConfig) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-source quanta tables indexed by 0-based channel level.

    Returns (harvest tables over downlink levels, transmit tables over
    uplink levels). Warns when a source can never afford a transmission.
    """
    e_h, e_t = [], []
    for i, spec in enumerate(config.sources):
        eh = np.array(
            [harvested_quanta(config, i, lv) for lv in range(1, spec.link.levels_downlink + 1)],
            dtype=np.int64,
        )
        et = np.array(
            [transmit_quanta(config, i, lv) for lv in range(1, spec.link.levels_uplink + 1)],
            dtype=np.int64,
        )
        if np.all(et > spec.battery_quanta):
            warnings.warn(
                f"source {i + 1} can never transmit: minimum transmit cost "
                f"{int(et.min())} quanta exceeds battery capacity {spec.battery_quanta}",
                stacklevel=2,
            )
        e_h.append(eh)
        e_t.append(et)
    return e_h, e_t


def feasible_actions(config: SystemConfig, state: SystemState) -> list[int]:
    """Harvest plus every transmit whose battery covers the uplink cost."""
    acts = [HARVEST]
    for i, src in enumerate(state.per_source):
        if src.battery >= transmit_quanta(config, i, src.h_level):
            acts.append(i + 1)
    return acts


def step(
    config: SystemConfig,
    state: SystemState,
    action: int,
    next_levels: Sequence[tuple[int, int]],
) -> SystemState:
    """Apply one slot of battery/AoI dynamics and swap in new channel levels."""
    if action != HARVEST:
        i = action - 1
        src = state.per_source[i]
        cost = transmit_quanta(config, i, src.h_level)
        if src.battery < cost:
            raise InfeasibleActionError(
                f"transmit from source {action} needs {cost} quanta, "
                f"battery has {src.battery}"
            )
    out = []
    for j, src in enumerate(state.per_source):
        spec = config.sources[j]
        if action == HARVEST:
            battery = min(spec.battery_quanta, src.battery + harvested_quanta(config, j, src.g_level))
        elif action == j + 1:
            battery = src.battery - transmit_quanta(config, j, src.h_level)
        else:
            battery = src.battery
        aoi = 1 if action == j + 1 else min(spec.aoi_cap, src.aoi + 1)
        g, h = next_levels[j]
        out.append(SourceState(battery=battery, aoi=aoi, g_level=g, h_level=h))
    return SystemState(per_source=tuple(out))


def stage_cost(config: SystemConfig, state: SystemState) -> float:
    """Weighted sum of the current AoI values."""
    return sum(spec.weight * src.aoi for spec, src in zip(config.sources, state.per_source))


def initial_state(config: SystemConfig) -> SystemState:
    """Canonical start: full batteries, fresh information, lowest levels."""
    return SystemState(
        per_source=tuple(
            SourceState(battery=s.battery_quanta, aoi=1, g_level=1, h_level=1)
            for s in config.sources
        )
    )


def draw_levels(config: SystemConfig, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Sample next-slot channel levels for every source."""
    levels = []
    for gq, hq in zip(config.downlink_quantizers, config.uplink_quantizers):
        g = sample_level(gq, rng)
        h = g if config.correlated_links else sample_level(hq, rng)
        levels.append((g, h))
    return levels


@dataclass
class SimulationResult:
    avg_weighted_aoi: float
    avg_throughput_bits: Optional[float]
    trace: Optional[list] = None


def simulate_policy(
    config: SystemConfig,
    policy: Callable[[SystemState], int],
    horizon: int,
    seed: int,
    record_trace: bool = False,
) -> SimulationResult:
    """Run the chain for ``horizon`` slots from the canonical start state.

    Averages over slots 0..horizon-1 (i.e. 1/(K+1) with K = horizon-1).
    Throughput is reported for the single-source case only.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(seed)
    state = initial_state(config)
    total_cost = 0.0
    transmit_slots = 0
    trace = [] if record_trace else None
    for _ in range(horizon):
        action = policy(state)
        if action != HARVEST and action not in feasible_actions(config, state):
            raise InfeasibleActionError(f"policy chose {action_name(action)} at {state}")
        total_cost += stage_cost(config, state)
        if action == 1 and config.num_sources == 1:
            transmit_slots += 1
        if record_trace:
            trace.append((state, action))
        state = step(config, state, action, draw_levels(config, rng))
    avg_aoi = total_cost / horizon
    avg_tp = (
        transmit_slots * config.packet_bits / horizon if config.num_sources == 1 else None
    )
    return SimulationResult(avg_weighted_aoi=avg_aoi, avg_throughput_bits=avg_tp, trace=trace)


# ---------------------------------------------------------------------------
# config file I/O


def config_from_dict(data: dict) -> SystemConfig:
    try:
        gamma = float(data["reference_gain"])
        nu = float(data["path_loss_exponent"])
        sources = tuple(
            SourceSpec(
                battery_capacity_joules=float(s["battery_capacity_mj"]) * 1e-3,
                battery_quanta=int(s["battery_quanta"]),
                aoi_cap=int(s["aoi_cap"]),
                weight=float(s["weight"]),
                link=LinkParams(
                    distance_m=float(s["distance_m"]),
                    path_loss_exponent=nu,
                    reference_gain=gamma,
                    levels_downlink=int(s["levels_downlink"]),
                    levels_uplink=int(s["levels_uplink"]),
                ),
            )
            for s in data["sources"]
        )
        return SystemConfig(
            sources=sources,
            tx_power_dbm=float(data["tx_power_dbm"]),
            harvest_efficiency=float(data["harvest_efficiency"]),
            noise_power_dbm=float(data["noise_power_dbm"]),
            packet_bits=float(data["packet_mbits"]) * 1e6,
            bandwidth_hz=float(data["bandwidth_mhz"]) * 1e6,
            rounding_mode=data.get("rounding_mode", "lower-bound"),
            seed=int(data.get("seed", 0)),
            correlated_links=bool(data.get("correlated_links", False)),
        )
    except KeyError as exc:
        raise InvalidConfigError(f"missing config key: {exc}") from exc


def load_config(path) -> SystemConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise InvalidConfigError(f"config file {path} does not hold a mapping")
    return config_from_dict(data)
