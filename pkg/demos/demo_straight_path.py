"""
One color on a straight path
============================

A single source at cell 1 feeds entities up the first column of the 8x8
grid to the target at cell 57. Each round every healthy cell refreshes its
routing, decides which neighbor may push entities into it, and moves its
own entities when allowed.
"""
# %%
from celltraffic import oracles
from celltraffic.geometry import build_square_grid
from celltraffic.harness import emit_csv, result_row, run, straight_path
from celltraffic.protocol import initial_state, update

cfg = straight_path(K=60)
s = initial_state(build_square_grid(8, 8), cfg)

# %%
# Distances spread out from the target one hop per round, so the source
# learns its route after seven rounds. It starts producing entities once
# its view of the path also reaches the target.
for r in range(1, 21):
    update(s)
    if r in (1, 4, 7, 20):
        col = [s.cell(i).dist[0] for i in range(1, 58, 8)]
        print(f"round {r:2d}  dist up the column {col}  entities {len(list(s.entities()))}")

# %%
# Safety holds at every step: same-color discs stay at least 2l + rs apart
# and nothing sits across a side.
for _ in range(40):
    update(s, lambda x: oracles.check_signal_gate(x).ok or print("gate!"))
    assert oracles.check_invariants(s).ok
print("consumed after", s.round, "rounds:", s.consumed[0])

# %%
# The harness wraps this loop, adds failure injection and reports the
# K-round throughput: entities delivered divided by K.
res = run(straight_path(K=1000), seed=0, check=True)
print(emit_csv([result_row(res, "K", 1000)]))
