"""Shipped test networks.

``three_bus``: chain ``0 -> 1 -> 2`` on a 1 kVA base so installed kW equal
per-unit values. One time step, light baseline load. Loads up to 4 p.u. at
each of buses 1 and 2 cross the undervoltage limit along a line running from
the upper left to the lower right of ``[0, 4]^2``.

``demo_feeder``: 15-bus radial feeder on a 100 kVA base, 144 ten-minute steps
with a residential daily shape (evening peak around 19:00).

    0 - 1 - 2 - 3 - 4 - 5 - 6 - 7 - 8      trunk + weak far lateral (6, 7, 8)
        |       |
        9       12 - 13
        |
       10 - 11 - 14                        PV-heavy lateral (10, 11, 14)

Cluster ``A`` = {6, 7, 8} sits at the electrically distant end; cluster
``B`` = {9, 10, 11} sits on the stiff lateral that also hosts the
pre-selected PV buses.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from .grid import BaselineProfiles, Line, Network, load_network
from .oracle import EV, ProfileSet
from .scenarios import Cluster, load_clusters

T_DAY = 144


def three_bus() -> Network:
    buses = ("0", "1", "2")
    lines = (
        Line("0", "1", 0.008, 0.016, 12.0),
        Line("1", "2", 0.006, 0.012, 8.0),
    )
    d = np.array([[0.0], [0.1], [0.1]])
    e = np.array([[0.0], [0.02], [0.02]])
    return Network(buses, lines, "0", BaselineProfiles(d, e), base_kva=1.0)


def three_bus_profiles() -> dict:
    """Single always-on consumption behaviour for the 3-bus example."""
    return {EV: ProfileSet(EV, -np.ones((1, 1)))}


def residential_shape(T: int = T_DAY) -> np.ndarray:
    """Normalised household demand: night trough, morning bump, evening peak."""
    h = np.arange(T) * 24.0 / T
    shape = (
        0.35
        + 0.25 * np.exp(-0.5 * ((h - 7.5) / 1.5) ** 2)
        + 0.65 * np.exp(-0.5 * ((h - 19.0) / 2.5) ** 2)
    )
    return shape / shape.max()


_DEMO_LINES = [
    # from, to, r, x, s_max (p.u. on 100 kVA)
    ("0", "1", 0.0040, 0.0080, 2.2),
    ("1", "2", 0.0060, 0.0100, 1.6),
    ("2", "3", 0.0060, 0.0100, 1.4),
    ("3", "4", 0.0080, 0.0120, 1.0),
    ("4", "5", 0.0080, 0.0120, 0.9),
    ("5", "6", 0.0120, 0.0150, 1.0),
    ("6", "7", 0.0150, 0.0180, 0.8),
    ("7", "8", 0.0150, 0.0180, 0.6),
    ("1", "9", 0.0050, 0.0080, 2.0),
    ("9", "10", 0.0120, 0.0120, 1.8),
    ("10", "11", 0.0160, 0.0160, 1.5),
    ("3", "12", 0.0080, 0.0120, 0.6),
    ("12", "13", 0.0100, 0.0120, 0.4),
    ("11", "14", 0.0200, 0.0200, 1.2),
]

# peak household load per bus, kW
_DEMO_PEAK_KW = {
    "1": 8.0, "2": 8.0, "3": 7.0, "4": 7.0, "5": 6.0, "6": 6.0, "7": 5.0, "8": 5.0,
    "9": 5.0, "10": 4.0, "11": 4.0, "12": 6.0, "13": 5.0, "14": 3.0,
}

DEMO_PV_BUSES = ("10", "11", "14")


def demo_feeder(T: int = T_DAY) -> Network:
    buses = tuple(str(i) for i in range(15))
    lines = tuple(Line(*row) for row in _DEMO_LINES)
    shape = residential_shape(T)
    peak = np.array([_DEMO_PEAK_KW.get(b, 0.0) for b in buses])
    d = peak[:, None] * shape[None, :]
    e = 0.3 * d
    return Network(buses, lines, "0", BaselineProfiles(d, e), base_kva=100.0)


def demo_clusters() -> dict[str, Cluster]:
    return {
        "A": Cluster("A", ("6", "7", "8"), "electrically distant end of the trunk"),
        "B": Cluster("B", ("9", "10", "11"), "stiff lateral next to the PV-heavy buses"),
    }


BUILTIN = {
    "three_bus": "three_bus.json",
    "demo_feeder": "demo_feeder.json",
    "demo_clusters": "demo_clusters.json",
}


def data_path(name: str):
    return resources.files("hostcap") / "data" / BUILTIN[name]


def load_builtin_network(name: str) -> Network:
    with resources.as_file(data_path(name)) as p:
        return load_network(p)


def load_builtin_clusters(name: str = "demo_clusters") -> dict[str, Cluster]:
    with resources.as_file(data_path(name)) as p:
        return load_clusters(p)
