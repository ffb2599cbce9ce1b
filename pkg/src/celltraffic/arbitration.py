"""Per-intersection lock arbitration.

Colors whose entity graphs overlap form a group. Exactly one color of a
group holds the lock at a time. The lock goes to the least color not yet
served in the current cycle and is released once the holder's traffic has
passed through the shared cells, or after ``lock_timeout`` idle rounds.

The emulation is synchronous and deterministic; it stands in for a
distributed snapshot plus mutual exclusion layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class OverlapGroup:
    colors: tuple[int, ...]
    shared_cells: frozenset[int]
    holder: int | None = None
    exclusion: frozenset[int] = frozenset()
    occupied_since_grant: bool = False
    empty_streak: int = 0

    @property
    def open(self) -> bool:
        """Entry from outside the shared cells is allowed until the holder's
        first entity has reached them."""
        return self.holder is not None and not self.occupied_since_grant


@dataclass
class ArbitrationState:
    groups: list[OverlapGroup] = field(default_factory=list)
    lock_timeout: int = 8

    def group_of(self, c: int) -> OverlapGroup | None:
        for g in self.groups:
            if c in g.colors:
                return g
        return None

    def holder_of(self, c: int) -> bool:
        g = self.group_of(c)
        return g is not None and g.holder == c

    def entry_open(self, c: int) -> bool:
        g = self.group_of(c)
        return g is not None and g.holder == c and g.open


def _components(sets):
    """Connected components of the overlap graph over indices of ``sets``."""
    n = len(sets)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(n):
        for b in range(a + 1, n):
            if sets[a] & sets[b]:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    comps = {}
    for a in range(n):
        comps.setdefault(find(a), []).append(a)
    return [tuple(v) for v in comps.values()]


def shared_cells_of(colors, sets) -> frozenset[int]:
    out = set()
    for x in range(len(colors)):
        for y in range(x + 1, len(colors)):
            out |= sets[colors[x]] & sets[colors[y]]
    return frozenset(out)


def overlap_groups(entity_graphs) -> list[OverlapGroup]:
    """Groups of colors whose vertex sets are linked by overlaps.

    ``entity_graphs[c]`` is the vertex set of color ``c``. Only components
    with at least two colors form groups.
    """
    sets = [frozenset(s) for s in entity_graphs]
    groups = []
    for comp in _components(sets):
        if len(comp) < 2:
            continue
        groups.append(OverlapGroup(comp, shared_cells_of(comp, sets)))
    return groups


def arbitrate(g: OverlapGroup, state=None) -> OverlapGroup:
    """Grant the lock to the least unserved color when nobody holds it."""
    if g.holder is not None:
        return g
    excl = g.exclusion & frozenset(g.colors)
    if excl >= frozenset(g.colors):
        excl = frozenset()
    holder = min(c for c in g.colors if c not in excl)
    return replace(g, holder=holder, exclusion=excl,
                   occupied_since_grant=False, empty_streak=0)


def _occupancy(g: OverlapGroup, state):
    cells = state.cells
    holder_present = False
    empty = True
    for m in g.shared_cells:
        cell = cells[m - 1]
        if cell.entities:
            empty = False
            if cell.etype == g.holder:
                holder_present = True
    return holder_present, empty


def release_check(g: OverlapGroup, state, lock_timeout: int | None = None) -> OverlapGroup:
    """Advance the occupancy latch and release the lock when due."""
    if g.holder is None:
        return g
    if lock_timeout is None:
        lock_timeout = state.arb.lock_timeout
    present, empty = _occupancy(g, state)
    latched = g.occupied_since_grant or present
    streak = g.empty_streak + 1 if empty else 0
    if (latched and empty) or (not latched and streak >= lock_timeout):
        return replace(g, holder=None, exclusion=g.exclusion | {g.holder},
                       occupied_since_grant=False, empty_streak=0)
    return replace(g, occupied_since_grant=latched, empty_streak=streak)


def refresh(arb: ArbitrationState, entity_graphs, state) -> ArbitrationState:
    """Recompute groups, carry lock bookkeeping over, release and grant.

    A new group inherits the record of the old group whose holder it still
    contains. Exclusion sets of all overlapping old groups are merged.
    """
    new = overlap_groups(entity_graphs)
    out = []
    for g in new:
        cs = frozenset(g.colors)
        excl = frozenset()
        carried = None
        for old in arb.groups:
            if cs & frozenset(old.colors):
                excl |= old.exclusion & cs
                if carried is None and old.holder in cs:
                    carried = old
        if carried is not None:
            g = replace(g, holder=carried.holder, exclusion=excl,
                        occupied_since_grant=carried.occupied_since_grant,
                        empty_streak=carried.empty_streak)
        else:
            g = replace(g, exclusion=excl)
        g = release_check(g, state, arb.lock_timeout)
        g = arbitrate(g, state)
        out.append(g)
    return ArbitrationState(out, arb.lock_timeout)
