"""
Crashes, recovery and self-stabilization
========================================

Cells may crash at any time between rounds. A crashed cell freezes: its
entities stay where they are and it stops answering. Once crashes stop,
routing and path views settle again without any reset from outside.
"""
# %%
from celltraffic import oracles
from celltraffic.geometry import build_square_grid
from celltraffic.harness import SweepSpec, emit_csv, straight_path, sweep
from celltraffic.protocol import fail, initial_state, update

# %%
# Cut the straight column in the middle after 50 rounds
# -----------------------------------------------------
s = initial_state(build_square_grid(8, 8), straight_path())
for _ in range(50):
    update(s)
fail(s, 25)
delta = oracles.comm_diameter(s)
trace = [s.copy()]
for _ in range(2 * delta + 10):
    update(s)
    trace.append(s.copy())
print("detour from cell 17 goes to", s.cell(17).next[0])
print(oracles.check_stabilization(trace, 50))

# %%
# Random crashes
# --------------
# With per-round crash probability p_f and repair probability p_r, more
# crashes mean fewer deliveries. A short sweep shows the direction.
base = straight_path(K=1500, p_r=0.1)
rows = sweep(SweepSpec(base, "p_f", [0.0, 0.02, 0.05], reps=2))
print(emit_csv(rows))
