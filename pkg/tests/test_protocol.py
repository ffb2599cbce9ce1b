import math

import pytest

from celltraffic import oracles
from celltraffic.geometry import RegionParams, build_square_grid
from celltraffic.protocol import (ColorSpec, ConfigError, ProtocolFault, ScenarioConfig,
                                  SpawnPolicy, add_entity, config_violations, fail,
                                  initial_state, lock_step, move_step, recover, route_step,
                                  signal_step, spawn_entities, trace_record, update)

INF = math.inf
P = RegionParams(0.25, 0.05)


def make(rows, cols, colors, v=0.2, **kw):
    p = build_square_grid(rows, cols)
    return initial_state(p, ScenarioConfig(P, v, tuple(colors), **kw))


def dists(s, c=0):
    return [cell.dist[c] for cell in s.cells]


def warm(s, n, phases=(route_step, lock_step)):
    """Run only some phases; the round counter still advances because the
    path gossip stamps claims with it."""
    for _ in range(n):
        for f in phases:
            f(s)
        s.round += 1
    return s


# -- initialization ------------------------------------------------------------

def test_initial_state():
    s = make(2, 2, [ColorSpec("a", 1, 4)])
    assert dists(s) == [INF, INF, INF, 0]
    assert s.round == 0 and not list(s.entities())
    for cell in s.cells:
        assert cell.next == [None] and cell.token is None and cell.signal is None
        assert not cell.lock[0] and not cell.path[0] and not cell.pint[0]
    assert oracles.check_invariants(s).ok


def test_v_must_be_below_l():
    with pytest.raises(ConfigError, match="v must be < l"):
        make(2, 2, [ColorSpec("a", 1, 4)], v=0.25)
    cfg = ScenarioConfig(P, 0.3, (ColorSpec("a", 1, 4),))
    assert "v must be < l" in config_violations(cfg)


def test_config_errors():
    p = build_square_grid(2, 2)
    bad = ScenarioConfig(P, 0.2, (ColorSpec("a", 1, 9), ColorSpec("a", 2, 2)), p_f=1.5)
    msgs = " ".join(config_violations(bad, p))
    for part in ("not in 1..4", "must differ", "unique", "p_f"):
        assert part in msgs
    with pytest.raises(ConfigError):
        initial_state(p, bad)


def test_initially_failed():
    s = make(1, 4, [ColorSpec("a", 1, 4)], initially_failed=frozenset({2}))
    assert s.cell(2).failed and s.failures == 0
    warm(s, 5, (route_step,))
    assert dists(s) == [INF, INF, 1, 0]


# -- routing -------------------------------------------------------------------

def test_route_line_converges_hop_by_hop():
    s = make(1, 4, [ColorSpec("a", 4, 1)])
    route_step(s)
    assert dists(s) == [0, 1, INF, INF]
    route_step(s)
    route_step(s)
    assert dists(s) == [0, 1, 2, 3]
    assert [c.next[0] for c in s.cells] == [None, 1, 2, 3]


def test_route_tie_goes_to_smallest_id():
    # in a 2x4 grid cell 1 touches 2 and 5, both one hop from target 6
    s = make(2, 4, [ColorSpec("a", 8, 6)])
    warm(s, 4, (route_step,))
    assert s.cell(2).dist[0] == s.cell(5).dist[0] == 1
    assert s.cell(1).next[0] == 2


def test_route_disconnected_cell():
    s = make(1, 4, [ColorSpec("a", 4, 1)])
    warm(s, 5, (route_step,))
    fail(s, 2)
    warm(s, 6, (route_step,))
    assert dists(s) == [0, INF, INF, INF]
    assert s.cell(3).next[0] is None


def test_reroute_around_failure():
    s = make(3, 3, [ColorSpec("a", 1, 3)])
    warm(s, 6, (route_step,))
    assert s.cell(1).next[0] == 2
    fail(s, 2)
    warm(s, s.partition.diameter(exclude={2}), (route_step,))
    assert s.cell(1).next[0] == 4
    assert dict(oracles.target_distance(s, 0)) == {i: s.cell(i).dist[0] for i in range(1, 10)}


# -- locking -------------------------------------------------------------------

def test_single_color_has_no_locks():
    s = make(3, 3, [ColorSpec("a", 1, 9)])
    warm(s, 10)
    for cell in s.cells:
        assert not cell.pint[0] and not cell.lockcolors[0] and not cell.lock[0]
    assert s.arb.groups == []
    assert set(s.cell(1).path[0]) == oracles.entity_graph(s, 0).vertices


def test_plus_crossing_one_lock():
    s = make(3, 3, [ColorSpec("a", 4, 6), ColorSpec("b", 2, 8)])
    warm(s, 10)
    for cell in s.cells:
        assert set(cell.pint[0]) == {5} and set(cell.pint[1]) == {5}
    lk = s.cell(5).lock
    assert lk[0] != lk[1]
    assert not any(c.lock[0] or c.lock[1] for i, c in enumerate(s.cells) if i != 4)


def test_six_color_lockcolors():
    from test_oracles import six_color_state
    s = six_color_state()
    warm(s, 40)
    names = [c.name for c in s.config.colors]

    def group(i, c):
        return {names[d] for d in s.cell(i).lockcolors[c] | {c}} if s.cell(i).lockcolors[c] else set()

    # cell 1 sees the whole grid once gossip has settled
    assert group(1, 0) == group(1, 1) == group(1, 2) == {"blue", "red", "green"}
    assert group(1, 3) == group(1, 4) == {"yellow", "purple"}
    assert group(1, 5) == set()
    for c in range(6):
        assert set(s.cell(1).lockcolors[c]) == oracles.shared_colors(s, c)
        assert set(s.cell(1).pint[c]) == oracles.color_shared_cells(s, c)
    holders = sorted(g.holder for g in s.arb.groups)
    assert holders == [0, 3]


# -- signaling -----------------------------------------------------------------

def test_signal_single_requester():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    add_entity(s, 1, 0, 0.5, 0.5)
    warm(s, 3)
    signal_step(s)
    assert s.cell(2).signal == 1
    assert s.cell(2).neprev == {1}


def test_signal_blocked_by_entity_near_side():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    add_entity(s, 1, 0, 0.5, 0.5)
    add_entity(s, 2, 0, 1.0 + 2 * P.d, 0.5)   # 2d from the side shared with cell 1
    warm(s, 3)
    signal_step(s)
    assert s.cell(2).signal is None
    assert s.cell(2).token == 1


def test_signal_alternates_between_two_requesters():
    s = make(3, 3, [ColorSpec("a", 1, 5)])
    add_entity(s, 4, 0, 0.5, 1.5)
    add_entity(s, 6, 0, 2.5, 1.5)
    got = []
    for _ in range(4):
        update(s, lambda x: got.append(x.cell(5).signal))
    assert got == [4, 6, 4, 6]
    assert s.consumed == [2]


def test_signal_color_gate():
    s = make(1, 3, [ColorSpec("a", 1, 3), ColorSpec("b", 2, 1)])
    add_entity(s, 1, 0, 0.5, 0.5)
    add_entity(s, 2, 1, 1.5, 0.5)
    warm(s, 3)
    signal_step(s)
    # cell 2 holds b and is not a's target, so a may not enter
    assert s.cell(2).signal is None


# -- movement ------------------------------------------------------------------

def test_move_without_transfer():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    e = add_entity(s, 1, 0, 0.5, 0.5)
    warm(s, 3, (route_step,))
    s.cell(2).signal = 1
    move_step(s)
    assert (e.x, e.y) == pytest.approx((0.7, 0.5))
    assert 1.0 - e.x == pytest.approx(0.3)
    assert s.cell(1).entities == [e] and s.round == 4


def test_move_with_transfer():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    e = add_entity(s, 1, 0, 0.6, 0.5)
    warm(s, 3, (route_step,))
    s.cell(2).signal = 1
    move_step(s)
    assert not s.cell(1).entities and s.cell(1).etype is None
    assert s.cell(2).entities == [e] and s.cell(2).etype == 0
    assert (e.x, e.y) == pytest.approx((1.25, 0.5))


def test_move_into_target_consumes():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    e = add_entity(s, 2, 0, 1.6, 0.5)
    warm(s, 3, (route_step,))
    s.cell(3).signal = 2
    move_step(s)
    assert s.consumed == [1] and not s.cell(3).entities
    assert s.deliveries == [(e.id, 0, 4)]


def test_move_without_signal_stays():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    e = add_entity(s, 1, 0, 0.5, 0.5)
    warm(s, 3, (route_step,))
    move_step(s)
    assert (e.x, e.y) == (0.5, 0.5)


def test_wrong_color_transfer_is_a_fault():
    s = make(1, 3, [ColorSpec("a", 1, 3), ColorSpec("b", 3, 1)])
    add_entity(s, 1, 0, 0.6, 0.5)
    add_entity(s, 2, 1, 1.5, 0.5)
    warm(s, 3, (route_step,))
    s.cell(2).signal = 1
    with pytest.raises(ProtocolFault):
        move_step(s)


# -- spawning ------------------------------------------------------------------

def test_spawn_at_centroid():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    warm(s, 4)
    s.cell(1).spawn_turn = True
    spawn_entities(s)
    (e,) = s.cell(1).entities
    assert (e.x, e.y) == pytest.approx((0.5, 0.5))
    assert s.spawned == [1]


def test_spawn_blocked_when_crowded():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    warm(s, 4)
    add_entity(s, 1, 0, 0.6, 0.5)
    s.cell(1).spawn_turn = True
    spawn_entities(s)
    assert len(s.cell(1).entities) == 1


def test_spawn_waits_for_route():
    s = make(1, 4, [ColorSpec("a", 1, 4)])
    first = None
    for r in range(10):
        update(s)
        if s.spawned[0] and first is None:
            first = s.round
    # the source must know the whole route before producing anything
    assert first is not None and first > 3


def test_spawn_yields_to_waiting_neighbor():
    s = make(1, 3, [ColorSpec("a", 2, 3)])
    add_entity(s, 1, 0, 0.5, 0.5)
    before = s.spawned[0]
    log = []
    for _ in range(8):
        update(s, lambda x: log.append((x.cell(2).signal, x.cell(2).spawn_turn)))
    assert not any(sig is not None and turn for sig, turn in log)
    assert any(sig == 1 for sig, _ in log)
    assert s.spawned[0] > before


def test_spawn_per_round_zero():
    s = make(1, 3, [ColorSpec("a", 1, 3)], spawn=SpawnPolicy(0))
    for _ in range(20):
        update(s)
    assert s.spawned == [0]


# -- whole rounds --------------------------------------------------------------

def test_empty_system_round():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    update(s)
    assert s.round == 1 and not list(s.entities())


def test_single_entity_reaches_target():
    s = make(1, 3, [ColorSpec("a", 1, 3)], spawn=SpawnPolicy(0))
    add_entity(s, 1, 0, 0.5, 0.5)
    for _ in range(20):
        update(s)
        if s.consumed[0]:
            break
    # 0.5 to the first side plus 1.0 across the middle, plus the 0.25 slack
    assert s.consumed == [1]
    assert s.round <= math.ceil(1.5 / 0.2) + 4


def test_conservation_and_safety():
    s = make(4, 4, [ColorSpec("a", 1, 16), ColorSpec("b", 13, 4)])
    for _ in range(300):
        update(s, lambda x: oracles.check_signal_gate(x).ok or pytest.fail("gate"))
        assert oracles.check_invariants(s).ok
        on = [0, 0]
        for _, e in s.entities():
            on[e.color] += 1
        assert [sp - co for sp, co in zip(s.spawned, s.consumed)] == on
    assert min(s.consumed) > 0


def test_determinism():
    def go():
        s = make(4, 4, [ColorSpec("a", 1, 16), ColorSpec("b", 13, 4)])
        out = []
        for _ in range(120):
            update(s)
            out.append(trace_record(s, locks=True))
        return out
    assert go() == go()


# -- failures ------------------------------------------------------------------

def test_fail_twice_and_protected_target():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    fail(s, 2)
    assert s.cell(2).failed and s.cell(2).dist == [INF]
    with pytest.raises(ValueError):
        fail(s, 2)
    with pytest.raises(ValueError):
        fail(s, 3)
    with pytest.raises(ValueError):
        recover(s, 1)


def test_recover_ordinary_and_target():
    s = make(1, 3, [ColorSpec("a", 1, 3)], protect_targets=False)
    warm(s, 3, (route_step,))
    fail(s, 2)
    recover(s, 2)
    assert s.cell(2).dist == [INF]
    route_step(s)
    assert s.cell(2).dist == [1]
    fail(s, 3)
    recover(s, 3)
    assert s.cell(3).dist == [0]
    assert s.failures == 2 and s.recoveries == 2


def test_failed_cell_entities_freeze():
    s = make(1, 4, [ColorSpec("a", 1, 4)])
    for _ in range(25):
        update(s)
    i = next(k for k in (2, 3) if s.cell(k).entities)
    frozen = [(e.id, e.x, e.y) for e in s.cell(i).entities]
    fail(s, i)
    for _ in range(10):
        update(s)
    assert [(e.id, e.x, e.y) for e in s.cell(i).entities] == frozen


def test_off_path_fail_recover_matches_clean_run():
    def build():
        return make(3, 4, [ColorSpec("a", 1, 4)])

    a, b = build(), build()
    for _ in range(15):
        update(a)
        update(b)
    fail(b, 10)
    update(a)
    update(b)
    recover(b, 10)
    for _ in range(2 * b.partition.diameter() + 2):
        update(a)
        update(b)
    for ca, cb in zip(a.cells, b.cells):
        assert (ca.dist, ca.next, ca.lock, ca.failed) == (cb.dist, cb.next, cb.lock, cb.failed)
        assert set(ca.path[0]) == set(cb.path[0])
    assert a.consumed == b.consumed


def test_copy_is_independent():
    s = make(1, 3, [ColorSpec("a", 1, 3)])
    add_entity(s, 1, 0, 0.5, 0.5)
    t = s.copy()
    for _ in range(5):
        update(s)
    assert t.round == 0 and t.cell(1).entities[0].x == 0.5
    for _ in range(5):
        update(t)
    assert trace_record(t) == trace_record(s)
