"""
Partitions and the movement assumptions
=======================================

Cells are convex polygons that share whole sides. An entity is a disc of
radius ``l``; it moves along a fixed vector per (cell, neighbor) pair and is
handed over once its disc touches the shared side. Two geometric
conditions make this work, and ``validate_partition`` checks both.
"""
# %%
# Three tilings that satisfy everything
# -------------------------------------
from celltraffic.geometry import (RegionParams, build_parallelogram_grid, build_snub_square_patch,
                                  build_square_grid, build_triangular_grid, move_vector,
                                  reset_entity_position, validate_partition)

cases = [
    ("square 8x8", build_square_grid(8, 8), RegionParams(0.25, 0.05)),
    ("triangles 2x6", build_triangular_grid(2, 6), RegionParams(0.1, 0.02)),
    ("parallelograms 3x3", build_parallelogram_grid(3, 3, 1.0, (0.3, 1.0)), RegionParams(0.2, 0.05)),
]
for name, p, params in cases:
    rep = validate_partition(p, params)
    print(f"{name:20s} cells={p.n_cells:3d} sides={len(p.shared_sides):3d} ok={rep.ok}")

# %%
# On parallelograms, vertical moves follow the slanted sides rather than
# the side normal.
p = cases[2][1]
print("move 1 -> 4:", tuple(round(x, 4) for x in move_vector(p, 1, 4)))

# %%
# Handing an entity over
# ----------------------
# A disc at x = 0.9 moving right in the first of two unit squares touches
# the shared side; it reappears tangent to the side on the other side.
two = build_square_grid(1, 2)
print("reset:", reset_entity_position((0.9, 0.5), two, 1, 2, RegionParams(0.25, 0.05)))

# %%
# A tiling that breaks the hand-over
# ----------------------------------
# A square ringed by triangles: the usable strip of the square's side is
# longer than the triangle's, so some discs leaving the square could not be
# placed in the triangle.
rep = validate_partition(build_snub_square_patch(), RegionParams(0.25, 0.05))
print(rep.summary())
