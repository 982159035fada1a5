"""Direct evaluation of the branch-flow equations on a candidate solution.

Deliberately written with plain loops over the raw line list so that it
shares nothing with the matrix sweep in :mod:`hostcap.grid`.
"""
from __future__ import annotations


def distflow_residuals(net, p_pu, q_pu, v, P, Q, l) -> dict[str, float]:
    """Max absolute violation of each equation family.

    Returns ``{"real": .., "reactive": .., "voltage": .., "current": ..}``
    for, respectively, the real and reactive balance at each receiving bus,
    the voltage drop along each line and the squared-current definition.
    Injections are per-unit, loads negative.
    """
    index = {b: i for i, b in enumerate(net.buses)}
    root = net.root_bus

    # orient each line away from the root by breadth-first search
    nbrs = {b: [] for b in net.buses}
    for k, ln in enumerate(net.lines):
        nbrs[ln.from_bus].append((ln.to_bus, k))
        nbrs[ln.to_bus].append((ln.from_bus, k))
    upstream = {}  # bus -> (parent bus, line index)
    frontier = [root]
    visited = {root}
    while frontier:
        nxt = []
        for b in frontier:
            for other, k in nbrs[b]:
                if other not in visited:
                    visited.add(other)
                    upstream[other] = (b, k)
                    nxt.append(other)
        frontier = nxt

    out_lines = {b: [] for b in net.buses}
    for bus, (par, k) in upstream.items():
        out_lines[par].append(k)

    worst = {"real": 0.0, "reactive": 0.0, "voltage": 0.0, "current": 0.0}
    for j, (i, k) in upstream.items():
        ln = net.lines[k]
        r, x = ln.r, ln.x
        jj, ii = index[j], index[i]
        out_P = sum(P[m] for m in out_lines[j])
        out_Q = sum(Q[m] for m in out_lines[j])
        worst["real"] = max(worst["real"], abs(p_pu[jj] + P[k] - r * l[k] - out_P))
        worst["reactive"] = max(worst["reactive"], abs(q_pu[jj] + Q[k] - x * l[k] - out_Q))
        drop = 2 * (r * P[k] + x * Q[k]) - (r * r + x * x) * l[k]
        worst["voltage"] = max(worst["voltage"], abs(v[ii] - v[jj] - drop))
        worst["current"] = max(worst["current"], abs(l[k] - (P[k] ** 2 + Q[k] ** 2) / v[ii]))
    return worst


def max_residual(net, p_pu, q_pu, v, P, Q, l) -> float:
    return max(distflow_residuals(net, p_pu, q_pu, v, P, Q, l).values())
