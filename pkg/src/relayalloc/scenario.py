"""Factory cell geometry, Rayleigh fading and path loss.

The controller sits at the origin of a disk of radius ``r``. ``N`` relays are
evenly spaced on the circle of radius ``theta * r`` and ``K`` robots are
dropped uniformly over the disk. Every random quantity is drawn from its own
seeded stream (per robot, per robot-relay pair, per relay), so changing K, N,
theta or M leaves the draws of the other nodes untouched. Sweeps rely on that
to compare parameter values on common channel realizations.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
FILE_FORMAT = "relayalloc-scenario"

MIN_SEPARATION_M = 1.0

# stream tags for np.random.default_rng([seed, tag, ...])
_POSITION, _DIRECT, _HOP1, _HOP2 = 1, 2, 3, 4


class SchemaVersionError(ValueError):
    pass


@dataclass(frozen=True)
class SystemParams:
    bandwidth_hz: float = 360e3
    noise_dbm_per_hz: float = -174.0
    tau1_s: float = 0.5e-3
    tau2_s: float = 0.5e-3

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_dbm_per_hz + 10.0 * math.log10(self.bandwidth_hz))


@dataclass(frozen=True)
class FactoryLayout:
    radius_m: float = 300.0
    num_robots: int = 4
    num_relays: int = 4
    num_rbs: int = 10
    distance_factor: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError("radius_m must be positive")
        if self.num_robots < 1:
            raise ValueError("need at least one robot")
        if self.num_relays < 0:
            raise ValueError("num_relays must be non-negative")
        if self.num_rbs < self.num_robots:
            raise ValueError(
                f"{self.num_rbs} RBs cannot host {self.num_robots} robots one per RB")
        if not 0.0 < self.distance_factor < 1.0:
            raise ValueError("distance_factor must lie in (0, 1)")


def dbm_to_watts(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


def path_loss_db(d):
    """Path loss ``35.3 + 37.6 log10(d)`` in dB, distance in meters."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    pl = 35.3 + 37.6 * np.log10(d)
    return float(pl) if pl.ndim == 0 else pl


def relay_positions(layout: FactoryLayout) -> np.ndarray:
    n = layout.num_relays
    ang = 2.0 * np.pi * np.arange(n) / max(n, 1)
    rad = layout.distance_factor * layout.radius_m
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]).reshape(n, 2)


def _draw_robot(seed: int, k: int, radius: float, relays: np.ndarray) -> np.ndarray:
    rng = np.random.default_rng([seed, _POSITION, k])
    while True:
        u, a = rng.random(2)
        pos = radius * math.sqrt(u) * np.array([math.cos(2 * math.pi * a), math.sin(2 * math.pi * a)])
        if np.hypot(*pos) < MIN_SEPARATION_M:
            continue
        if len(relays) and np.min(np.hypot(*(relays - pos).T)) < MIN_SEPARATION_M:
            continue
        return pos


def _fading_power(stream, m: int) -> np.ndarray:
    # unit-variance circularly symmetric complex Gaussian, |h|^2 per RB
    rng = np.random.default_rng(stream)
    iq = rng.standard_normal((m, 2)) / math.sqrt(2.0)
    return iq[:, 0] ** 2 + iq[:, 1] ** 2


@dataclass(frozen=True, eq=False)
class Scenario:
    """One channel realization of a factory cell.

    Gains are linear SNR per watt: ``|fading|^2 * 10^(-PL/10) / (N0 W)``.
    ``gains_direct`` is K x M, ``gains_hop1`` is K x N x M (robot to relay)
    and ``gains_hop2`` is N x M (relay to controller).
    """

    layout: FactoryLayout
    system: SystemParams
    robot_positions: np.ndarray
    relay_positions: np.ndarray
    gains_direct: np.ndarray
    gains_hop1: np.ndarray
    gains_hop2: np.ndarray

    def __post_init__(self):
        lay = self.layout
        k, n, m = lay.num_robots, lay.num_relays, lay.num_rbs
        shapes = {
            "robot_positions": (k, 2), "relay_positions": (n, 2),
            "gains_direct": (k, m), "gains_hop1": (k, n, m), "gains_hop2": (n, m),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.size == 0:
                arr = arr.reshape(shape)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("gains_direct", "gains_hop1", "gains_hop2"):
            g = getattr(self, name)
            if not np.all(np.isfinite(g) & (g > 0)):
                raise ValueError(f"{name} must be positive and finite")

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.layout == other.layout and self.system == other.system
                and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _ARRAYS))

    __hash__ = None

    def distances(self):
        """Robot-controller (K), robot-relay (K x N) and relay-controller (N) distances."""
        d_k = np.hypot(*self.robot_positions.T)
        diff = self.robot_positions[:, None, :] - self.relay_positions[None, :, :]
        d_kn = np.sqrt(np.sum(diff ** 2, axis=-1)).reshape(len(d_k), -1)
        d_n = np.hypot(*self.relay_positions.T) if len(self.relay_positions) else np.zeros(0)
        return d_k, d_kn, d_n


_ARRAYS = ("robot_positions", "relay_positions", "gains_direct", "gains_hop1", "gains_hop2")


def generate_scenario(layout: FactoryLayout, system: SystemParams | None = None,
                      robot_positions=None) -> Scenario:
    """Draw a scenario from ``layout.seed``.

    Parameters
    ----------
    layout : FactoryLayout
        Geometry and seed.
    system : SystemParams, optional
        Supplies the per-RB noise power ``N0 * W``.
    robot_positions : array_like, optional
        Fixed K x 2 robot positions. Fading is still drawn from the seed.
    """
    system = system or SystemParams()
    k, n, m = layout.num_robots, layout.num_relays, layout.num_rbs
    seed = layout.seed
    relays = relay_positions(layout)
    if robot_positions is None:
        robots = np.array([_draw_robot(seed, i, layout.radius_m, relays) for i in range(k)])
    else:
        robots = np.asarray(robot_positions, dtype=float)[:k]
        if robots.shape != (k, 2):
            raise ValueError(f"need {k} robot positions, got {robots.shape[0]}")
        if np.any(np.hypot(*robots.T) > layout.radius_m * (1 + 1e-12)):
            raise ValueError("robot positions must lie inside the factory disk")
    robots = robots.reshape(k, 2)

    noise = system.noise_power_w
    d_k = np.hypot(*robots.T)
    d_kn = np.sqrt(np.sum((robots[:, None, :] - relays[None, :, :]) ** 2, axis=-1)).reshape(k, n)
    d_n = np.full(n, layout.distance_factor * layout.radius_m)
    if np.any(d_k <= 0) or np.any(d_kn <= 0):
        raise ValueError("a robot coincides with the controller or a relay")

    def lin(d):
        return 10.0 ** (-path_loss_db(d) / 10.0) / noise

    g_d = np.array([_fading_power([seed, _DIRECT, i], m) for i in range(k)]).reshape(k, m)
    g_1 = np.array([[_fading_power([seed, _HOP1, i, j], m) for j in range(n)]
                    for i in range(k)]).reshape(k, n, m)
    g_2 = np.array([_fading_power([seed, _HOP2, j], m) for j in range(n)]).reshape(n, m)

    return Scenario(
        layout=layout,
        system=system,
        robot_positions=robots,
        relay_positions=relays,
        gains_direct=g_d * lin(d_k)[:, None],
        gains_hop1=g_1 * (lin(d_kn)[:, :, None] if n else 1.0),
        gains_hop2=g_2 * (lin(d_n)[:, None] if n else 1.0),
    )


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "format": FILE_FORMAT,
        "schema_version": SCHEMA_VERSION,
        "units": {
            "radius_m": "m", "positions": "m (controller at origin)",
            "gains": "linear SNR per watt, 1/W", "bandwidth_hz": "Hz",
            "noise_dbm_per_hz": "dBm/Hz", "tau1_s": "s", "tau2_s": "s",
        },
        "layout": asdict(s.layout),
        "system": asdict(s.system),
        "robot_positions": s.robot_positions.tolist(),
        "relay_positions": s.relay_positions.tolist(),
        "gains_direct": s.gains_direct.tolist(),
        "gains_hop1": s.gains_hop1.tolist(),
        "gains_hop2": s.gains_hop2.tolist(),
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("format") != FILE_FORMAT:
        raise ValueError(f"not a scenario file (format={d.get('format')!r})")
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"scenario schema version {version} is not supported (expected {SCHEMA_VERSION})")
    return Scenario(
        layout=FactoryLayout(**d["layout"]),
        system=SystemParams(**d["system"]),
        **{name: np.array(d[name], dtype=float) for name in _ARRAYS},
    )


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1) + "\n")


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
