"""
Two colors through one intersection
===================================

Color ``a`` crosses the grid along row 4 and color ``b`` climbs column 4.
Both routes pass cell 28. Cells only ever hold one color, so the crossing
needs a lock: one color owns it at a time, lets one wave of entities
through, and hands over once the shared cell is empty again.
"""
# %%
from celltraffic import oracles
from celltraffic.geometry import build_square_grid
from celltraffic.harness import crossing_scenario
from celltraffic.protocol import initial_state, update

cfg = crossing_scenario(K=400)
s = initial_state(build_square_grid(8, 8), cfg)
print("shared cells:", sorted(oracles.color_shared_cells(s, 0)))

# %%
# Follow the lock holder. It only changes hands while cell 28 is empty.
names = [c.name for c in cfg.colors]
last = None
handoffs = 0
for _ in range(cfg.K):
    update(s)
    g = s.arb.groups[0] if s.arb.groups else None
    holder = names[g.holder] if g and g.holder is not None else "-"
    if holder != last:
        handoffs += 1
        if handoffs <= 8:
            print(f"round {s.round:3d}: lock -> {holder}  delivered so far {s.consumed}")
        last = holder

# %%
# Both colors keep arriving, and neither ever shares the crossing.
print("handoffs:", handoffs, "consumed:", dict(zip(names, s.consumed)))
