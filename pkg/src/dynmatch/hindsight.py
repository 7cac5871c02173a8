"""Optimal-in-hindsight benchmark on realized runs.

Given the full realization of a run (every agent's arrival and shadow
departure), the best any policy could have done is a maximum-weight
matching on the compatibility graph: nodes are agents, edges join pairs
whose presence windows overlap and whose type pair has positive value.
Presence windows are [arrival, departure) half-open, so an impatient agent
(zero-length window) is compatible exactly with agents present at its
arrival instant, which mirrors the simulator's matching rule.

The matcher is exact: branch and bound over edge inclusion, memoized on
the remaining-vertex set of each connected component. Cost is exponential
in component size, not in run length; a market that empties now and then
splits the graph into short busy-period components, which is what makes
long low-load horizons tractable. Components above the threshold raise
MatchingTooLargeError instead of silently falling back to a heuristic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .market import AgentId, MarketInstance, validate_instance
from .randomness import derive_seed
from .simulate import (
    ArrivalEvent,
    DepartureEvent,
    EventTrace,
    Population,
    generate_population,
)


class MatchingTooLargeError(RuntimeError):
    """A connected component exceeds the exact matcher's size threshold."""


@dataclass(frozen=True)
class GraphNode:
    agent: AgentId
    arrival: float
    departure: float  # +inf when the agent outlives the recorded horizon


@dataclass(frozen=True)
class CompatibilityGraph:
    """Agents of one run with pairwise matchability edges.

    Nodes are sorted by (arrival, type, serial). edges[k] = (i, j) with
    i < j indexes into nodes; weights[k] is the pair's match value,
    strictly positive by construction.
    """

    nodes: tuple[GraphNode, ...]
    edges: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    horizon: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def _windows_overlap(ai: float, di: float, aj: float, dj: float) -> bool:
    # [a, d) windows: containment of either arrival instant in the other
    # window; for ai <= aj this is (aj < di) or (ai == aj and aj < dj)
    return (aj <= ai < dj) or (ai <= aj < di)


def _build_graph(
    nodes: list[GraphNode], instance: MarketInstance, horizon: float
) -> CompatibilityGraph:
    values = instance.values
    edges: list[tuple[int, int]] = []
    weights: list[float] = []
    n = len(nodes)
    for i in range(n):
        ai = nodes[i].arrival
        di = nodes[i].departure
        for j in range(i + 1, n):
            aj = nodes[j].arrival
            if aj > ai and aj >= di:
                break  # arrivals ascend, so no later j overlaps i either
            if not _windows_overlap(ai, di, aj, nodes[j].departure):
                continue
            v = values.get(nodes[i].agent.type_id, nodes[j].agent.type_id)
            if v > 0.0:
                edges.append((i, j))
                weights.append(v)
    return CompatibilityGraph(
        nodes=tuple(nodes),
        edges=tuple(edges),
        weights=tuple(weights),
        horizon=horizon,
    )


def build_compatibility_graph(
    trace: EventTrace, instance: MarketInstance
) -> CompatibilityGraph:
    """Read every agent's presence window off a trace and build the graph.

    The trace must carry shadow departures (matched agents keep their
    sampled lifetime). An agent without a departure row is alive past the
    horizon; its window is treated as unbounded, which yields exactly the
    right edges because every other arrival falls inside [0, horizon].
    """
    if not trace.complete:
        raise ValueError("compatibility graph needs a recorded trace")
    arr: dict[AgentId, float] = {}
    dep: dict[AgentId, float] = {}
    for e in trace.events:
        if isinstance(e, ArrivalEvent):
            arr[e.agent] = e.time
        elif isinstance(e, DepartureEvent):
            dep[e.agent] = e.time
    for agent in dep:
        if agent not in arr:
            raise ValueError(f"trace missing lifetime data: {agent.text()} never arrives")
    nodes = [
        GraphNode(agent, t, dep.get(agent, math.inf))
        for agent, t in arr.items()
    ]
    nodes.sort(key=lambda nd: (nd.arrival, nd.agent.type_id, nd.agent.serial))
    return _build_graph(nodes, instance, trace.horizon)


def _graph_from_population(pop: Population, instance: MarketInstance) -> CompatibilityGraph:
    nodes = [
        GraphNode(AgentId(x, s), float(arr[s]), float(dep[s]))
        for x, (arr, dep) in enumerate(zip(pop.arrivals, pop.departures))
        for s in range(len(arr))
    ]
    nodes.sort(key=lambda nd: (nd.arrival, nd.agent.type_id, nd.agent.serial))
    return _build_graph(nodes, instance, pop.horizon)


# ---------------------------------------------------------------------------
# exact matching


def _mask_matching(
    member: list[int], neighbor_mask: list[int], weight: dict[tuple[int, int], float]
) -> tuple[list[tuple[int, int]], float]:
    """Max-weight matching over one component by branch and bound on the
    lowest remaining vertex, memoized on the remaining-vertex bitmask.
    member maps local bit positions to caller indices."""
    m = len(member)
    memo: dict[int, float] = {0: 0.0}

    def dp(mask: int) -> float:
        cached = memo.get(mask)
        if cached is not None:
            return cached
        low = (mask & -mask).bit_length() - 1
        rest = mask & (mask - 1)
        best = dp(rest)  # leave the lowest vertex unmatched
        nb = neighbor_mask[low] & rest
        while nb:
            jb = nb & -nb
            j = jb.bit_length() - 1
            nb ^= jb
            cand = weight[(low, j)] + dp(rest & ~jb)
            if cand > best:
                best = cand
        memo[mask] = best
        return best

    full = (1 << m) - 1
    total = dp(full)

    pairs: list[tuple[int, int]] = []
    mask = full
    while mask:
        low = (mask & -mask).bit_length() - 1
        rest = mask & (mask - 1)
        if dp(mask) == dp(rest):
            mask = rest  # unmatched is optimal; ties prefer unmatched
            continue
        nb = neighbor_mask[low] & rest
        target = dp(mask)
        chosen = -1
        while nb:
            jb = nb & -nb
            j = jb.bit_length() - 1
            nb ^= jb
            if weight[(low, j)] + dp(rest & ~jb) == target:
                chosen = j  # lowest optimal partner
                break
        assert chosen >= 0, "reconstruction lost the optimum"
        pairs.append((member[low], member[chosen]))
        mask = rest & ~(1 << chosen)
    return pairs, total


def _components(n: int, adjacency: list[list[int]]) -> list[list[int]]:
    seen = [False] * n
    out: list[list[int]] = []
    for start in range(n):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        frontier = [start]
        while frontier:
            i = frontier.pop()
            for j in adjacency[i]:
                if not seen[j]:
                    seen[j] = True
                    comp.append(j)
                    frontier.append(j)
        comp.sort()
        out.append(comp)
    return out


def max_weight_matching_exact(
    graph: CompatibilityGraph, exact_threshold: int = 20
) -> tuple[set[tuple[int, int]], float]:
    """Globally optimal matching; returns ((i, j) node-index edges, value).

    The size precondition binds per memoized subproblem, i.e. per connected
    component, since disconnected parts decompose exactly. A component
    larger than exact_threshold raises MatchingTooLargeError.
    """
    n = graph.n_nodes
    adjacency: list[list[int]] = [[] for _ in range(n)]
    wmap: dict[tuple[int, int], float] = {}
    for (i, j), w in zip(graph.edges, graph.weights):
        adjacency[i].append(j)
        adjacency[j].append(i)
        wmap[(i, j)] = w

    matching: set[tuple[int, int]] = set()
    total = 0.0
    for comp in _components(n, adjacency):
        if len(comp) == 1:
            continue
        if len(comp) > exact_threshold:
            raise MatchingTooLargeError(
                f"component of {len(comp)} nodes exceeds the exact threshold "
                f"{exact_threshold}"
            )
        local = {node: k for k, node in enumerate(comp)}
        neighbor_mask = [0] * len(comp)
        weight: dict[tuple[int, int], float] = {}
        for node in comp:
            for other in adjacency[node]:
                li, lj = local[node], local[other]
                neighbor_mask[li] |= 1 << lj
                key = (node, other) if node < other else (other, node)
                weight[(min(li, lj), max(li, lj))] = wmap[key]
                weight[(max(li, lj), min(li, lj))] = wmap[key]
        pairs, value = _mask_matching(comp, neighbor_mask, weight)
        matching.update((min(i, j), max(i, j)) for i, j in pairs)
        total += value
    return matching, total


def max_weight_pool(n: int, weight) -> list[tuple[int, int]]:
    """Exact pool matcher for periodic clearing: n entries, weight(i, j)
    callable, returns disjoint index pairs of an optimal matching. Zero
    and negative weights never enter the graph."""
    adjacency: list[list[int]] = [[] for _ in range(n)]
    pairs_w: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            w = weight(i, j)
            if w > 0.0:
                adjacency[i].append(j)
                adjacency[j].append(i)
                pairs_w[(i, j)] = w
    out: list[tuple[int, int]] = []
    for comp in _components(n, adjacency):
        if len(comp) == 1:
            continue
        local = {node: k for k, node in enumerate(comp)}
        neighbor_mask = [0] * len(comp)
        wlocal: dict[tuple[int, int], float] = {}
        for node in comp:
            for other in adjacency[node]:
                li, lj = local[node], local[other]
                neighbor_mask[li] |= 1 << lj
                key = (node, other) if node < other else (other, node)
                wlocal[(li, lj)] = pairs_w[key]
                wlocal[(lj, li)] = pairs_w[key]
        pairs, _ = _mask_matching(comp, neighbor_mask, wlocal)
        out.extend((min(i, j), max(i, j)) for i, j in pairs)
    out.sort()
    return out


# ---------------------------------------------------------------------------
# Monte Carlo estimate


def hindsight_value_estimate(
    instance: MarketInstance,
    horizon: float,
    replications: int,
    seed: int,
    exact_threshold: int = 20,
) -> tuple[float, float]:
    """Mean and standard error of hindsight value per unit time.

    Each replication samples a fresh population (no policy is run), builds
    the compatibility graph, and solves it exactly. Replication r uses the
    lane derive_seed(seed, r). The caller picks a horizon and load small
    enough for exact solving; an oversized busy period surfaces as
    MatchingTooLargeError rather than a degraded estimate.
    """
    violations = validate_instance(instance)
    if violations:
        raise ValueError("invalid instance: " + "; ".join(v.code for v in violations))
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if replications < 2:
        raise ValueError("need at least 2 replications for a standard error")
    per_time = np.empty(replications)
    for r in range(replications):
        pop = generate_population(instance, horizon, derive_seed(seed, r))
        graph = _graph_from_population(pop, instance)
        _, value = max_weight_matching_exact(graph, exact_threshold)
        per_time[r] = value / horizon
    mean = float(per_time.mean())
    se = float(per_time.std(ddof=1) / math.sqrt(replications))
    return mean, se
