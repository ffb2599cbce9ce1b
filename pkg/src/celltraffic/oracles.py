"""Brute-force ground truth for routing, entity graphs, locking and safety.

Nothing here reads the protocol's own routing or path variables except to
compare against them. Everything is recomputed from cell failures, entity
positions and the partition geometry.
"""
from __future__ import annotations

import math
from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass, field

from . import arbitration
from .geometry import disc_inside, distance_to_side, point_in_polygon, side_normal

INF = math.inf


class OracleError(ValueError):
    pass


class TargetDistanceMap(Mapping):
    """Read-only map cell id -> hop distance to the target (inf if cut off)."""

    def __init__(self, values: dict[int, float]):
        self._v = dict(values)

    def __getitem__(self, i):
        return self._v[i]

    def __iter__(self):
        return iter(self._v)

    def __len__(self):
        return len(self._v)

    def as_list(self) -> list:
        return [self._v[i] for i in sorted(self._v)]

    def __repr__(self):
        return f"TargetDistanceMap({self.as_list()})"


@dataclass(frozen=True)
class GraphSnapshot:
    vertices: frozenset
    edges: frozenset


@dataclass
class Violation:
    kind: str
    cells: tuple = ()
    entities: tuple = ()
    value: float | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "cells": list(self.cells),
                "entities": list(self.entities), "value": self.value}


@dataclass
class InvariantReport:
    round: int
    violations: list = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def extend(self, other: "InvariantReport") -> "InvariantReport":
        self.violations.extend(other.violations)
        self.checked += other.checked
        return self

    def to_dict(self) -> dict:
        return {"round": self.round, "violations": [v.to_dict() for v in self.violations]}

    def __str__(self):
        if self.ok:
            return f"round {self.round}: ok"
        head = ", ".join(f"{v.kind}{list(v.cells)}" for v in self.violations[:5])
        return f"round {self.round}: {len(self.violations)} violation(s): {head}"


# ---------------------------------------------------------------------------
# routing objects

def target_distance(s, c: int) -> TargetDistanceMap:
    """BFS hop distance to tid_c through healthy cells."""
    p = s.partition
    tid = s.config.colors[c].target
    out = {i: INF for i in p.ids}
    if s.cells[tid - 1].failed:
        return TargetDistanceMap(out)
    out[tid] = 0
    q = deque([tid])
    while q:
        u = q.popleft()
        for w in p.neighbors[u]:
            if out[w] == INF and not s.cells[w - 1].failed:
                out[w] = out[u] + 1
                q.append(w)
    return TargetDistanceMap(out)


def target_connected(s, c: int) -> set[int]:
    rho = target_distance(s, c)
    return {i for i, d in rho.items() if d < INF}


def successor(s, c: int, i: int, rho=None) -> int | None:
    """Smallest-id healthy neighbor one hop closer to the target."""
    rho = target_distance(s, c) if rho is None else rho
    r = rho[i]
    if r == INF or r == 0:
        return None
    for j in s.partition.neighbors[i]:
        if rho[j] == r - 1:
            return j
    return None


def routing_graph(s, c: int) -> GraphSnapshot:
    """Healthy cells with edges descending the target distance."""
    rho = target_distance(s, c)
    V = frozenset(i for i in s.partition.ids if not s.cells[i - 1].failed)
    E = set()
    for i in V:
        if rho[i] == INF:
            continue
        for j in s.partition.neighbors[i]:
            if j in V and rho[j] == rho[i] - 1:
                E.add((i, j))
    return GraphSnapshot(V, frozenset(E))


def entity_graph(s, c: int) -> GraphSnapshot:
    """Least set holding the source, the cells with color-c entities, and the
    successor of every member, restricted to healthy cells."""
    rho = target_distance(s, c)
    spec = s.config.colors[c]
    seeds = [i for i in s.partition.ids
             if not s.cells[i - 1].failed and (i == spec.source or s.cells[i - 1].etype == c)]
    V, E = set(), set()
    stack = list(seeds)
    while stack:
        i = stack.pop()
        if i in V:
            continue
        V.add(i)
        j = successor(s, c, i, rho)
        if j is not None:
            E.add((i, j))
            stack.append(j)
    return GraphSnapshot(frozenset(V), frozenset(E))


def _overlap(s):
    sets = [entity_graph(s, c).vertices for c in range(len(s.config.colors))]
    return sets, arbitration._components(sets)


def color_shared_cells(s, c: int) -> set[int]:
    """Union of pairwise entity-graph intersections in c's overlap component."""
    sets, comps = _overlap(s)
    for comp in comps:
        if c in comp:
            return set(arbitration.shared_cells_of(comp, sets)) if len(comp) > 1 else set()
    return set()


def shared_colors(s, c: int) -> set[int]:
    """Other colors in c's overlap component."""
    _, comps = _overlap(s)
    for comp in comps:
        if c in comp:
            return set(comp) - {c}
    return set()


# ---------------------------------------------------------------------------
# safety

def check_invariants(s) -> InvariantReport:
    """Spacing, containment, disjointness and single color per cell."""
    rep = InvariantReport(s.round, checked=1)
    params = s.config.params
    gap = 2 * params.l + params.rs
    seen = {}
    for k, cell in enumerate(s.cells):
        i = k + 1
        ents = cell.entities
        verts = s.partition.cells[k].vertices
        colors = {e.color for e in ents}
        if len(colors) > 1:
            rep.violations.append(Violation("onecolor", (i,), tuple(e.id for e in ents)))
        if (cell.etype is None) != (not ents) or (ents and cell.etype not in colors):
            rep.violations.append(Violation("etype", (i,), tuple(e.id for e in ents)))
        for a in range(len(ents)):
            e = ents[a]
            if e.id in seen:
                rep.violations.append(Violation("disjoint", (seen[e.id], i), (e.id,)))
            seen[e.id] = i
            if not (point_in_polygon((e.x, e.y), verts) and disc_inside((e.x, e.y), verts, params.l)):
                rep.violations.append(Violation("containment", (i,), (e.id,)))
            for b in range(a + 1, len(ents)):
                f = ents[b]
                dd = math.hypot(e.x - f.x, e.y - f.y)
                if dd < gap - 1e-9:
                    rep.violations.append(Violation("safe", (i,), (e.id, f.id), dd))
    return rep


def check_signal_gate(s) -> InvariantReport:
    """Every entity on a signaling cell is at least 3d from the granted side."""
    rep = InvariantReport(s.round, checked=1)
    d3 = 3 * s.config.params.d
    for k, cell in enumerate(s.cells):
        j = cell.signal
        if cell.failed or j is None:
            continue
        side = s.partition.side(k + 1, j)
        for e in cell.entities:
            dd = distance_to_side((e.x, e.y), side)
            if dd < d3 - 1e-9:
                rep.violations.append(Violation("signal_gate", (k + 1, j), (e.id,), dd))
    return rep


# ---------------------------------------------------------------------------
# progress

def ranking(s, e) -> tuple:
    """(target distance of e's cell, distance along the move vector to the
    next side). The second term uses the side's supporting line."""
    where = None
    for i, f in s.entities():
        if f.id == e.id:
            where = i
            break
    if where is None:
        raise OracleError(f"entity {e.id} not in the system")
    rho = target_distance(s, e.color)
    if rho[where] == INF:
        raise OracleError(f"entity {e.id} is on cell {where}, not target-connected")
    j = successor(s, e.color, where, rho)
    if j is None:
        raise OracleError(f"entity {e.id} sits on its target")
    f = next(x for x in s.cells[where - 1].entities if x.id == e.id)
    p = s.partition
    nx, ny = side_normal(p, where, j)
    ux, uy = p.move_vectors[(where, j)]
    ax, ay = p.side(where, j).segment[0]
    ds = ((ax - f.x) * nx + (ay - f.y) * ny) / (ux * nx + uy * ny)
    return (rho[where], ds)


# ---------------------------------------------------------------------------
# stabilization

def comm_diameter(s) -> int:
    return s.partition.diameter(exclude=s.failed_ids)


def check_stabilization(trace, last_fail_round: int) -> InvariantReport:
    """Check convergence after the last failure event.

    ``trace[k]`` must be the state at round k (k >= last_fail_round) with
    the same failed set from ``last_fail_round`` on. Verified:

    * dist equals the target distance from round last_fail_round + rho on;
    * next equals the oracle successor from last_fail_round + 2 Delta on;
    * path and pint equal the entity graph and shared cells of the cell's
      connected component, at every round r >= last_fail_round + 2 Delta
      for which the entity graphs did not change during the preceding
      2 Delta rounds.
    """
    by_round = {x.round: x for x in trace}
    base = by_round.get(last_fail_round)
    if base is None:
        raise OracleError(f"trace has no state for round {last_fail_round}")
    delta = comm_diameter(base)
    last = max(by_round)
    if last < last_fail_round + 2 * delta:
        raise OracleError(f"trace ends at {last}, needs {last_fail_round + 2 * delta}")
    failed = set(base.failed_ids)
    C = len(base.config.colors)
    rep = InvariantReport(last)
    rhos = [target_distance(base, c) for c in range(C)]
    comp = _components_of(base)

    egs = {}
    for r in range(last_fail_round, last + 1):
        x = by_round[r]
        if set(x.failed_ids) != failed:
            raise OracleError(f"failed set changes at round {r}")
        egs[r] = tuple(entity_graph(x, c).vertices for c in range(C))

    for r in range(last_fail_round, last + 1):
        x = by_round[r]
        h = r - last_fail_round
        rep.checked += 1
        for c in range(C):
            rho = rhos[c]
            for i, d in rho.items():
                if d < INF and h >= d and x.cells[i - 1].dist[c] != d:
                    rep.violations.append(Violation(f"dist@{r}", (i,), (), x.cells[i - 1].dist[c]))
            if h >= 2 * delta:
                for i, d in rho.items():
                    if 0 < d < INF and x.cells[i - 1].next[c] != successor(x, c, i, rho):
                        rep.violations.append(Violation(f"next@{r}", (i, x.cells[i - 1].next[c])))
        if h < 2 * delta:
            continue
        if any(egs[q] != egs[r] for q in range(r - 2 * delta, r) if q >= last_fail_round):
            continue
        sets = egs[r]
        comps = arbitration._components(sets)
        for i in base.partition.ids:
            if i in failed:
                continue
            mine = comp[i]
            local = [sets[c] & mine for c in range(C)]
            lcomps = arbitration._components(local)
            for c in range(C):
                if x.cells[i - 1].path[c] != local[c]:
                    rep.violations.append(Violation(f"path@{r}", (i,), (), None))
                want = set()
                for k in lcomps:
                    if c in k and len(k) > 1:
                        want = set(arbitration.shared_cells_of(k, local))
                if set(x.cells[i - 1].pint[c]) != want:
                    rep.violations.append(Violation(f"pint@{r}", (i,), (), None))
        del comps
    return rep


def _components_of(s) -> dict[int, frozenset]:
    """Map each healthy cell to the id set of its healthy component."""
    p = s.partition
    out = {}
    for i in p.ids:
        if s.cells[i - 1].failed or i in out:
            continue
        seen = {i}
        q = deque([i])
        while q:
            u = q.popleft()
            for w in p.neighbors[u]:
                if w not in seen and not s.cells[w - 1].failed:
                    seen.add(w)
                    q.append(w)
        fs = frozenset(seen)
        for u in seen:
            out[u] = fs
    return out


# ---------------------------------------------------------------------------
# brute force

def brute_force_distance(p, failed, target) -> dict[int, float]:
    """Shortest path lengths by enumerating simple paths (tiny grids only)."""
    failed = set(failed)
    out = {i: INF for i in p.ids}
    if target in failed:
        return out

    def dfs(u, seen, depth):
        if depth < out[u]:
            out[u] = depth
        for w in p.neighbors[u]:
            if w not in seen and w not in failed:
                seen.add(w)
                dfs(w, seen, depth + 1)
                seen.discard(w)

    dfs(target, {target}, 0)
    return out
