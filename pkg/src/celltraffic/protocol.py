"""Synchronous cell automaton moving colored entities toward their targets.

One round applies ``route``, ``lock``, ``signal``, ``move`` and ``spawn`` in
that order and is atomic: crash failures and recoveries only happen
between rounds (see :func:`fail` and :func:`recover`).

Colors are integer indices into ``ScenarioConfig.colors``; their order is
the color order used by lock arbitration. Cell ids are 1-based.
"""
from __future__ import annotations

import copy
import math
from collections.abc import Set as AbstractSet
from dataclasses import dataclass, field, replace

import numpy as np

from . import arbitration
from .arbitration import ArbitrationState
from .geometry import (GeometryError, GridSpec, Partition, Point2, RegionParams,
                       disc_inside, inset_polygon, reset_entity_position,
                       validate_partition)

INF = math.inf


class ConfigError(ValueError):
    """Invalid scenario configuration."""


class ProtocolFault(RuntimeError):
    """An internal consistency check failed; indicates a protocol bug."""


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ColorSpec:
    name: str
    source: int
    target: int


@dataclass(frozen=True)
class SpawnPolicy:
    per_round: int = 1


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to build and run one scenario.

    ``initially_failed`` lists cells crashed before the first round; it is
    how corridor scenarios are carved out of a grid and is not part of the
    JSON schema.
    """
    params: RegionParams
    v: float
    colors: tuple[ColorSpec, ...]
    grid: GridSpec = GridSpec()
    K: int = 2500
    p_f: float = 0.0
    p_r: float = 0.0
    seed: int = 0
    spawn: SpawnPolicy = SpawnPolicy()
    lock_timeout: int = 8
    protect_targets: bool = True
    initially_failed: frozenset[int] = frozenset()

    @property
    def l(self) -> float:
        return self.params.l

    @property
    def rs(self) -> float:
        return self.params.rs

    @property
    def targets(self) -> tuple[int, ...]:
        return tuple(c.target for c in self.colors)

    def with_params(self, **kw) -> "ScenarioConfig":
        """Copy with top-level fields replaced; ``l`` and ``rs`` are accepted."""
        l = kw.pop("l", self.params.l)
        rs = kw.pop("rs", self.params.rs)
        return replace(self, params=RegionParams(l, rs), **kw)


def config_violations(cfg: ScenarioConfig, p: Partition | None = None) -> list[str]:
    """Return human readable constraint violations, empty when valid."""
    out = []
    if not cfg.v > 0:
        out.append("v must be > 0")
    if not cfg.v < cfg.params.l:
        out.append("v must be < l")
    if cfg.K < 0:
        out.append("K must be >= 0")
    for name in ("p_f", "p_r"):
        val = getattr(cfg, name)
        if not 0.0 <= val <= 1.0:
            out.append(f"{name} must be in [0, 1]")
    if cfg.spawn.per_round < 0:
        out.append("spawn.per_round must be >= 0")
    if cfg.lock_timeout < 1:
        out.append("lock_timeout must be >= 1")
    if not cfg.colors:
        out.append("at least one color is required")
    names = [c.name for c in cfg.colors]
    if len(set(names)) != len(names):
        out.append("color names must be unique")
    if p is not None:
        N = p.n_cells
        for k, c in enumerate(cfg.colors):
            for fld in ("source", "target"):
                val = getattr(c, fld)
                if not 1 <= val <= N:
                    out.append(f"colors[{k}].{fld}: cell {val} not in 1..{N}")
            if c.source == c.target:
                out.append(f"colors[{k}]: source and target must differ")
        for i in cfg.initially_failed:
            if not 1 <= i <= N:
                out.append(f"initially_failed: cell {i} not in 1..{N}")
            elif cfg.protect_targets and i in cfg.targets:
                out.append(f"initially_failed: target {i} is protected")
    return out


# ---------------------------------------------------------------------------
# state

class Entity:
    """A disc of radius l with a color and a center."""
    __slots__ = ("id", "color", "x", "y")

    def __init__(self, id: int, color: int, x: float, y: float):
        self.id = id
        self.color = color
        self.x = x
        self.y = y

    @property
    def center(self) -> Point2:
        return Point2(self.x, self.y)

    def __repr__(self):
        return f"Entity({self.id}, c={self.color}, ({self.x:.4g}, {self.y:.4g}))"

    def __eq__(self, other):
        return (isinstance(other, Entity) and self.id == other.id
                and self.color == other.color and self.x == other.x and self.y == other.y)

    def __hash__(self):
        return hash(self.id)


@dataclass(slots=True)
class CellState:
    """Protocol variables of one cell; per-color fields are lists indexed by color.

    ``served_color`` remembers the last color granted while the cell was
    empty and ``spawn_turn`` records whether the source's own turn in the
    token rotation came up this round.
    """
    entities: list
    etype: int | None
    failed: bool
    neprev: frozenset
    token: int | None
    signal: int | None
    next: list
    dist: list
    lock: list
    path: list
    pint: list
    lockcolors: list
    served_color: int | None = None
    spawn_turn: bool = False

    def copy(self) -> "CellState":
        return CellState(
            [Entity(e.id, e.color, e.x, e.y) for e in self.entities],
            self.etype, self.failed, self.neprev, self.token, self.signal,
            list(self.next), list(self.dist), list(self.lock), list(self.path),
            list(self.pint), list(self.lockcolors), self.served_color, self.spawn_turn)


class _Static:
    """Lookup tables derived once from a partition and config."""

    def __init__(self, p: Partition, cfg: ScenarioConfig):
        self.N = N = p.n_cells
        self.C = len(cfg.colors)
        self.nbrs = [()] + [p.neighbors[i] for i in p.ids]
        self.targets = cfg.targets
        self.sources = {}
        for c, spec in enumerate(cfg.colors):
            self.sources.setdefault(spec.source, []).append(c)
        self.side = {}
        self.mv = {}
        for (i, j), u in p.move_vectors.items():
            (ax, ay), (bx, by) = p.side(i, j).segment
            self.side[(i, j)] = (ax, ay, bx, by)
            self.mv[(i, j)] = u
        D = max((len(n) for n in self.nbrs), default=0)
        pad = np.full((N, max(D, 1)), N, dtype=np.intp)
        for i in p.ids:
            for k, j in enumerate(p.neighbors[i]):
                pad[i - 1, k] = j - 1
        self.nbr_pad = pad
        self.idx = np.arange(N)
        self.spawn_sites = {i: spawn_sites(p, i, cfg.params) for i in self.sources}


def spawn_sites(p: Partition, i: int, params: RegionParams) -> list[Point2]:
    """Candidate entity centers in cell ``i``.

    A square lattice with spacing 2l + rs anchored at the centroid, ordered
    by distance to the centroid, keeping points whose disc fits inside.
    """
    cell = p.cell(i)
    c = cell.centroid
    step = 2 * params.l + params.rs
    vs = np.asarray(cell.vertices)
    reach = float(np.max(np.hypot(vs[:, 0] - c.x, vs[:, 1] - c.y)))
    m = int(reach // step) + 1
    pts = []
    for a in range(-m, m + 1):
        for b in range(-m, m + 1):
            q = Point2(c.x + a * step, c.y + b * step)
            if disc_inside(q, cell.vertices, params.l):
                pts.append((a * a + b * b, math.atan2(b, a), q))
    pts.sort(key=lambda t: (t[0], t[1]))
    return [q for _, _, q in pts]


class _Gossip:
    """Timestamped successor claims for one color.

    Row ``i`` is cell i's view. ``key[i, o]`` packs the round at which
    origin ``o`` last claimed membership, as far as i knows, with the
    successor it claimed: ``stamp * (N + 1) + succ + 1``, or -1 when
    unknown. A view entry survives only while fresher claims keep arriving;
    ``dropped`` blocks stale copies from coming back. Arrays are replaced,
    never mutated, so old ones can back path snapshots.
    """

    def __init__(self, N):
        self.key = np.full((N, N), -1, dtype=np.int64)
        self.dropped = np.full((N, N), -1, dtype=np.int64)
        self.view = np.zeros((N, N), dtype=bool)

    def copy(self):
        g = _Gossip.__new__(_Gossip)
        g.key, g.dropped, g.view = self.key, self.dropped, self.view
        return g


class RowSet(AbstractSet):
    """Read-only set of 1-based ids backed by one row of a boolean matrix."""
    __slots__ = ("_m", "_r", "_fs")

    def __init__(self, m, r):
        self._m = m
        self._r = r
        self._fs = None

    def _frozen(self):
        if self._fs is None:
            self._fs = frozenset((np.flatnonzero(self._m[self._r]) + 1).tolist())
        return self._fs

    def __contains__(self, i):
        return isinstance(i, (int, np.integer)) and 1 <= i <= self._m.shape[1] and bool(self._m[self._r, i - 1])

    def __iter__(self):
        return iter(sorted(self._frozen()))

    def __len__(self):
        return len(self._frozen())

    def __hash__(self):
        return hash(self._frozen())

    def __repr__(self):
        return f"RowSet({sorted(self._frozen())})"


@dataclass
class SystemState:
    partition: Partition
    config: ScenarioConfig
    round: int
    cells: list
    arb: ArbitrationState
    consumed: list
    spawned: list
    rng: np.random.Generator
    next_entity_id: int = 1
    failures: int = 0
    recoveries: int = 0
    births: dict = field(default_factory=dict)
    deliveries: list = field(default_factory=list)
    _static: _Static = field(default=None, repr=False)
    _gossip: list = field(default=None, repr=False)

    def cell(self, i: int) -> CellState:
        return self.cells[i - 1]

    @property
    def failed_ids(self) -> list[int]:
        return [k + 1 for k, c in enumerate(self.cells) if c.failed]

    def entities(self):
        """Yield (cell id, entity) for every entity in the system."""
        for k, c in enumerate(self.cells):
            for e in c.entities:
                yield k + 1, e

    def copy(self) -> "SystemState":
        return SystemState(
            self.partition, self.config, self.round,
            [c.copy() for c in self.cells],
            ArbitrationState(list(self.arb.groups), self.arb.lock_timeout),
            list(self.consumed), list(self.spawned), copy.deepcopy(self.rng),
            self.next_entity_id, self.failures, self.recoveries,
            dict(self.births), list(self.deliveries),
            self._static, [g.copy() for g in self._gossip])


def initial_state(p: Partition, cfg: ScenarioConfig, seed: int | None = None,
                  validate: bool = True) -> SystemState:
    """All cells empty and healthy, targets at distance 0, round 0.

    Cells in ``cfg.initially_failed`` are crashed before returning.
    """
    errs = config_violations(cfg, p)
    if validate:
        rep = validate_partition(p, cfg.params)
        errs += [f"partition {k}: {v}" for k, fails in rep.checks.items() for v in fails]
    st = _Static(p, cfg)
    for i, sites in st.spawn_sites.items():
        if not sites:
            errs.append(f"source cell {i} has no spawn site for l={cfg.params.l}")
    if errs:
        raise ConfigError("; ".join(errs))
    C = st.C
    cells = []
    for i in p.ids:
        dist = [0 if cfg.colors[c].target == i else INF for c in range(C)]
        cells.append(CellState([], None, False, frozenset(), None, None,
                               [None] * C, dist, [False] * C,
                               [frozenset()] * C, [frozenset()] * C, [frozenset()] * C))
    s = SystemState(p, cfg, 0, cells, ArbitrationState([], cfg.lock_timeout),
                    [0] * C, [0] * C,
                    np.random.Generator(np.random.PCG64(cfg.seed if seed is None else seed)),
                    _static=st, _gossip=[_Gossip(p.n_cells) for _ in range(C)])
    for i in sorted(cfg.initially_failed):
        fail(s, i)
    s.failures = 0
    return s


def add_entity(s: SystemState, i: int, c: int, x: float, y: float) -> Entity:
    """Place a new entity of color ``c`` on cell ``i`` without any checks.

    Meant for hand-built states; it is counted as spawned in the current
    round so that conservation still holds.
    """
    e = Entity(s.next_entity_id, c, float(x), float(y))
    s.next_entity_id += 1
    cell = s.cell(i)
    cell.entities.append(e)
    cell.etype = c
    s.spawned[c] += 1
    s.births[e.id] = s.round
    return e


# ---------------------------------------------------------------------------
# round phases

def route_step(s: SystemState) -> SystemState:
    """Synchronous distance-vector step; ties go to the smallest neighbor id.

    Distances of N or more are treated as infinite, which bounds
    count-to-infinity after a failure disconnects a region.
    """
    st = s._static
    cells = s.cells
    N = st.N
    nbrs = st.nbrs
    for c in range(st.C):
        tid = st.targets[c]
        prev = [None] + [cell.dist[c] for cell in cells]
        for i in range(1, N + 1):
            cell = cells[i - 1]
            if cell.failed:
                continue
            if i == tid:
                cell.dist[c] = 0
                cell.next[c] = None
                continue
            best = INF
            arg = None
            for j in nbrs[i]:
                dj = prev[j]
                if dj < best:
                    best = dj
                    arg = j
            nd = best + 1
            if nd >= N:
                cell.dist[c] = INF
                cell.next[c] = None
            else:
                cell.dist[c] = nd
                cell.next[c] = arg
    return s


def _gossip_color(s: SystemState, c: int, failed: np.ndarray, etype: np.ndarray) -> np.ndarray:
    """One exchange of successor claims for color ``c``; returns changed rows."""
    st = s._static
    g = s._gossip[c]
    N = st.N
    M = N + 1
    key, dropped = g.key, g.dropped
    ext = np.full((N + 1, N), -1, dtype=np.int64)
    ext[:N] = key
    ext[:N][failed] = -1
    # freshest claim among healthy neighbors; equal stamps carry equal claims
    cand = ext[st.nbr_pad].max(axis=1)
    stamp = key // M
    fresh = cand // M > np.maximum(stamp, dropped)
    new_key = np.where(fresh, cand, -1)
    new_dropped = np.where((key >= 0) & ~fresh, stamp, dropped)
    # crashed cells keep their variables
    new_key[failed] = key[failed]
    new_dropped[failed] = dropped[failed]

    # own claims: source, holder of color c entities, or claimed successor
    idx = st.idx
    diag = key[idx, idx]
    new_key[idx, idx] = -1
    live = new_key >= 0
    succ = new_key % M - 1
    claimed = (live & (succ == idx[:, None])).any(axis=1)
    member = claimed | (etype == c)
    member[s.config.colors[c].source - 1] = True
    member &= ~failed
    nxt = np.fromiter((-1 if cell.next[c] is None else cell.next[c] - 1 for cell in s.cells),
                      dtype=np.int64, count=N)
    new_key[idx, idx] = np.where(member, s.round * M + nxt + 1, np.where(failed, diag, -1))
    g.key, g.dropped = new_key, new_dropped

    live = new_key >= 0
    succ = new_key % M - 1
    view = live.copy()
    r, o = np.nonzero(live & (succ >= 0))
    view[r, succ[r, o]] = True
    view[:, failed] = False
    view[failed] = g.view[failed]
    changed = (view != g.view).any(axis=1)
    g.view = view
    return changed


def lock_step(s: SystemState) -> SystemState:
    """Gossip path views, derive shared cells, and run lock arbitration."""
    st = s._static
    cells = s.cells
    N, C = st.N, st.C
    failed = np.fromiter((cell.failed for cell in cells), dtype=bool, count=N)
    etype = np.fromiter((-1 if cell.etype is None else cell.etype for cell in cells),
                        dtype=np.int64, count=N)
    for c in range(C):
        changed = _gossip_color(s, c, failed, etype)
        if changed.any():
            view = s._gossip[c].view
            for i in np.flatnonzero(changed).tolist():
                cells[i].path[c] = RowSet(view, i)
    if C < 2:
        return s

    views = [s._gossip[c].view for c in range(C)]
    pairs = [(a, b) for a in range(C) for b in range(a + 1, C)]
    inter = {(a, b): views[a] & views[b] for a, b in pairs}
    edge = {pr: m.any(axis=1) for pr, m in inter.items()}
    empty = frozenset()
    for i in range(N):
        cell = cells[i]
        if cell.failed:
            continue
        linked = [pr for pr in pairs if edge[pr][i]]
        if not linked:
            for c in range(C):
                cell.pint[c] = empty
                cell.lockcolors[c] = empty
            continue
        sets = [frozenset(np.nonzero(views[c][i])[0].tolist()) for c in range(C)]
        for comp in arbitration._components(sets):
            if len(comp) < 2:
                cell.pint[comp[0]] = empty
                cell.lockcolors[comp[0]] = empty
                continue
            shared = np.zeros(N, dtype=bool)
            for x in range(len(comp)):
                for y in range(x + 1, len(comp)):
                    shared |= inter[(comp[x], comp[y])][i]
            ids = frozenset((np.nonzero(shared)[0] + 1).tolist())
            for c in comp:
                cell.pint[c] = ids
                cell.lockcolors[c] = frozenset(comp) - {c}

    # the group view is the union of all healthy cells' path views
    ok = ~failed
    union = [frozenset((np.nonzero(views[c][ok].any(axis=0))[0] + 1).tolist())
             for c in range(C)]
    s.arb = arbitration.refresh(s.arb, union, s)
    holders = {g.holder for g in s.arb.groups if g.holder is not None}
    for i in range(N):
        cell = cells[i]
        if cell.failed:
            continue
        for c in range(C):
            cell.lock[c] = c in holders and (i + 1) in cell.pint[c]
    return s


def _cyclic_next(cands, after):
    """First candidate strictly after ``after`` in cyclic id order."""
    if after is None:
        return cands[0]
    for x in cands:
        if x > after:
            return x
    return cands[0]


def _lock_gate(s: SystemState, cell: CellState, i: int, j: int | None, c: int) -> bool:
    """Entering a color-shared cell needs the lock, and entering from
    outside the shared cells needs the holder's admission to be open."""
    pint = cell.pint[c]
    if i not in pint:
        return True
    if not cell.lock[c]:
        return False
    if j is None or j not in pint:
        return s.arb.entry_open(c)
    return True


def _wants_spawn(s: SystemState, cell: CellState, i: int) -> bool:
    if s.config.spawn.per_round <= 0:
        return False
    return bool(_spawn_colors(s, cell, i))


def _spawn_colors(s: SystemState, cell: CellState, i: int) -> list[int]:
    """Colors source ``i`` may produce now.

    Besides color and lock compatibility, the source must already see a
    complete route to the target in its path view, so that overlaps with
    other colors are known before the first entity appears.
    """
    st = s._static
    return [c for c in st.sources.get(i, ())
            if (cell.etype is None or cell.etype == c)
            and st.targets[c] in cell.path[c]
            and _lock_gate(s, cell, i, None, c)]


def signal_step(s: SystemState) -> SystemState:
    """Each healthy cell grants at most one requesting neighbor permission to move.

    Requesters are nonempty healthy neighbors routing their color to this
    cell. A source also takes part in the rotation as a requester for its own
    spawning, using its own id in the token. A grant needs every entity on
    the cell to be more than 3d from the shared side, a compatible color, and
    the lock when the cell is color-shared. A blocked token is kept.
    """
    st = s._static
    cells = s.cells
    d3 = 3 * s.config.params.d
    targets = st.targets
    side = st.side
    for i in range(1, st.N + 1):
        cell = cells[i - 1]
        if cell.failed:
            continue
        req = {}
        for j in st.nbrs[i]:
            cj = cells[j - 1]
            if cj.failed or cj.etype is None:
                continue
            cc = cj.etype
            if cj.next[cc] == i:
                # requesters the lock rules out do not compete for the token
                if cell.pint[cc] and not _lock_gate(s, cell, i, j, cc):
                    continue
                req.setdefault(cc, []).append(j)
        et = cell.etype
        if et is not None:
            chosen = et
        elif req:
            colors = sorted(req)
            chosen = _cyclic_next(colors, cell.served_color)
        else:
            chosen = None
        neprev = []
        for cc, js in req.items():
            if cc == chosen or targets[cc] == i:
                neprev.extend(js)
        cell.neprev = frozenset(neprev)
        cands = sorted(neprev)
        if i in st.sources and _wants_spawn(s, cell, i):
            cands.append(i)
            cands.sort()
        cell.spawn_turn = False
        if not cands:
            cell.token = None
            cell.signal = None
            continue
        tok = cell.token
        if tok not in cands:
            tok = _cyclic_next(cands, tok)
        if tok == i:
            cell.spawn_turn = True
            cell.signal = None
            cell.token = _cyclic_next(cands, tok)
            continue
        cc = cells[tok - 1].etype
        ok = et is None or et == cc or targets[cc] == i
        if ok:
            ax, ay, bx, by = side[(i, tok)]
            dx, dy = bx - ax, by - ay
            L2 = dx * dx + dy * dy
            for e in cell.entities:
                t = ((e.x - ax) * dx + (e.y - ay) * dy) / L2
                t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
                if math.hypot(e.x - ax - t * dx, e.y - ay - t * dy) <= d3:
                    ok = False
                    break
        if ok and cell.pint[cc]:
            ok = _lock_gate(s, cell, i, tok, cc)
        if ok:
            cell.signal = tok
            if et is None:
                cell.served_color = cc
            cell.token = _cyclic_next(cands, tok)
        else:
            cell.signal = None
            cell.token = tok
    return s


def move_step(s: SystemState) -> SystemState:
    """Move every granted cell's entities by v along the move vector.

    Entities whose disc reaches the shared side leave the cell; they are
    consumed at their own target and otherwise placed tangent to the side
    inside the next cell.
    """
    st = s._static
    cells = s.cells
    p = s.partition
    params = s.config.params
    l = params.l
    v = s.config.v
    moves = []
    for i in range(1, st.N + 1):
        cell = cells[i - 1]
        if cell.failed or not cell.entities:
            continue
        j = cell.next[cell.etype]
        if j is None:
            continue
        cj = cells[j - 1]
        if cj.failed or cj.signal != i:
            continue
        moves.append((i, j))

    transfers = []
    for i, j in moves:
        cell = cells[i - 1]
        ux, uy = st.mv[(i, j)]
        ax, ay, bx, by = st.side[(i, j)]
        dx, dy = bx - ax, by - ay
        L2 = dx * dx + dy * dy
        stay = []
        for e in cell.entities:
            e.x += v * ux
            e.y += v * uy
            t = ((e.x - ax) * dx + (e.y - ay) * dy) / L2
            t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
            if math.hypot(e.x - ax - t * dx, e.y - ay - t * dy) <= l:
                transfers.append((i, j, e))
            else:
                stay.append(e)
        cell.entities = stay
        if not stay:
            cell.etype = None

    s.round += 1
    for i, j, e in transfers:
        if j == st.targets[e.color]:
            s.consumed[e.color] += 1
            s.deliveries.append((e.id, e.color, s.round))
            continue
        cj = cells[j - 1]
        if cj.etype is not None and cj.etype != e.color:
            raise ProtocolFault(
                f"round {s.round}: entity {e.id} of color {e.color} entering cell {j} "
                f"holding color {cj.etype}")
        q = reset_entity_position((e.x, e.y), p, i, j, params)
        e.x, e.y = q.x, q.y
        cj.entities.append(e)
        cj.etype = e.color
    return s


def spawn_entities(s: SystemState) -> SystemState:
    """Add entities at sources whose turn came up in the token rotation.

    Up to ``spawn.per_round`` entities go to the first lattice sites that
    keep every pair on the cell at least 2l + rs apart. A source serving
    several colors picks one allowed by the cell color and the locks,
    rotating after each spawn.
    """
    st = s._static
    params = s.config.params
    gap = 2 * params.l + params.rs
    per_round = s.config.spawn.per_round
    for i in sorted(st.sources):
        cell = s.cells[i - 1]
        if cell.failed or not cell.spawn_turn:
            continue
        colors = _spawn_colors(s, cell, i)
        if not colors:
            continue
        c = _cyclic_next(colors, cell.served_color) if len(colors) > 1 else colors[0]
        placed = 0
        for q in st.spawn_sites[i]:
            if placed >= per_round:
                break
            if all(math.hypot(q.x - e.x, q.y - e.y) >= gap for e in cell.entities):
                e = Entity(s.next_entity_id, c, q.x, q.y)
                s.next_entity_id += 1
                cell.entities.append(e)
                cell.etype = c
                s.spawned[c] += 1
                s.births[e.id] = s.round
                placed += 1
        if placed and len(colors) > 1:
            cell.served_color = c
    return s


def update(s: SystemState, after_signal=None) -> SystemState:
    """One atomic round.

    ``after_signal(s)`` is called between the signal and move phases, which
    is where the signal gate property is defined.
    """
    route_step(s)
    lock_step(s)
    signal_step(s)
    if after_signal is not None:
        after_signal(s)
    move_step(s)
    spawn_entities(s)
    return s


# ---------------------------------------------------------------------------
# environment transitions

def fail(s: SystemState, i: int) -> SystemState:
    """Crash cell ``i``; its entities stay put and its variables freeze."""
    cell = s.cell(i)
    if cell.failed:
        raise ValueError(f"cell {i} already failed")
    if s.config.protect_targets and i in s._static.targets:
        raise ValueError(f"cell {i} is a protected target")
    cell.failed = True
    C = s._static.C
    cell.dist = [INF] * C
    cell.next = [None] * C
    s.failures += 1
    return s


def recover(s: SystemState, i: int) -> SystemState:
    """Restart cell ``i``; a target immediately knows its own distance."""
    cell = s.cell(i)
    if not cell.failed:
        raise ValueError(f"cell {i} is not failed")
    cell.failed = False
    for c, tid in enumerate(s._static.targets):
        if tid == i:
            cell.dist[c] = 0
    s.recoveries += 1
    return s


# ---------------------------------------------------------------------------
# export

def trace_record(s: SystemState, locks: bool = False) -> dict:
    names = [c.name for c in s.config.colors]
    rec = {
        "round": s.round,
        "consumed": {names[c]: n for c, n in enumerate(s.consumed)},
        "entities": [{"id": e.id, "color": names[e.color], "cell": i, "x": e.x, "y": e.y}
                     for i, e in s.entities()],
        "failed": s.failed_ids,
        "signals": {str(k + 1): c.signal for k, c in enumerate(s.cells)},
    }
    if locks:
        rec["locks"] = {names[g.holder]: sorted(g.shared_cells)
                        for g in s.arb.groups if g.holder is not None}
    return rec
