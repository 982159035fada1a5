from __future__ import annotations

import numpy as np
import pytest

from hostcap.grid import BaselineProfiles, Line, Network


def random_radial(rng: np.random.Generator, n_bus: int, load_scale: float = 0.05) -> tuple[Network, np.ndarray, np.ndarray]:
    """Random tree on ``n_bus`` buses with moderate impedances, plus per-unit
    injections (mostly loads) that keep the sweep well inside its basin.

    Buses get shuffled string ids and lines random orientation so that
    nothing relies on the root being bus 0 or lines pointing downstream.
    """
    labels = [f"b{k}" for k in rng.permutation(n_bus)]
    lines = []
    for j in range(1, n_bus):
        i = int(rng.integers(0, j))
        a, b = labels[i], labels[j]
        if rng.random() < 0.5:
            a, b = b, a
        lines.append(Line(a, b, float(rng.uniform(0.001, 0.03)), float(rng.uniform(-0.005, 0.04)), 10.0))
    order = rng.permutation(len(lines))
    lines = tuple(lines[k] for k in order)
    buses = tuple(labels[k] for k in rng.permutation(n_bus))
    root = labels[0]
    net = Network(buses, lines, root, BaselineProfiles.zeros(n_bus), base_kva=1.0)
    p = -rng.uniform(-0.2, 1.0, size=n_bus) * load_scale
    q = -rng.uniform(-0.5, 1.0, size=n_bus) * load_scale * 0.5
    p[net.bus_index(root)] = 0.0
    q[net.bus_index(root)] = 0.0
    return net, p, q


def two_bus(r=0.01, x=0.02, base_kva=1.0) -> Network:
    return Network(("0", "1"), (Line("0", "1", r, x, 5.0),), "0", BaselineProfiles.zeros(2), base_kva=base_kva)


def analytic_two_bus(r, x, p_load, q_load, v0=1.0):
    """Closed-form branch flow for one line feeding a load ``p_load + j q_load``.

    With ``P = p + r l``, ``Q = q + x l`` and ``l = (P^2 + Q^2) / v0`` the
    squared current solves ``(r^2 + x^2) l^2 + (2 p r + 2 q x - v0) l + p^2 + q^2 = 0``;
    the physical branch is the smaller root.
    """
    a = r * r + x * x
    b = 2 * p_load * r + 2 * q_load * x - v0
    c = p_load**2 + q_load**2
    l = (-b - np.sqrt(b * b - 4 * a * c)) / (2 * a)
    P = p_load + r * l
    Q = q_load + x * l
    v1 = v0 - 2 * (r * P + x * Q) + a * l
    return v1, P, Q, l


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    rep = outcome.get_result()
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        verdict = "PASS" if rep.passed else "FAIL"
        _ACCEPTANCE[num] = (title, verdict)
        line = f"ACCEPTANCE {num:>2} {verdict}  {title}"
        reporter = item.config.pluginmanager.get_plugin("terminalreporter")
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:
            print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        title, verdict = _ACCEPTANCE[num]
        terminalreporter.write_line(f"{num:>2}. {verdict}  {title}")
