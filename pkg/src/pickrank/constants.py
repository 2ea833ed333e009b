"""Simulation constants and the boosted-tree recipe.

The ground-truth weights are the simulator's hidden physics: the learning
pipeline never reads them.  Height enters as the top-surface elevation, so a
package stacked high is riskier than the same package resting on the belt,
and support is the settled support fraction minus one.  Picks on the shipped
scene mix land around 90 % under height-first heuristics.

Order: cup_fraction, face_fraction, occluder_count, support (fraction - 1),
height (top elevation / height_scale), deformable, centroid_offset.
"""

GT_WEIGHTS = (1.2, 1.6, -0.2, 2.5, -1.6, -0.45, -0.5)
GT_BIAS = 3.3
GT_HEIGHT_SCALE = 250.0

# boosted-tree recipe: five members, depth 6, learning rate 0.05
ENSEMBLE_DEPTH = 6
ENSEMBLE_LEARNING_RATE = 0.05
FULL_TREE_COUNTS = (2236, 1069, 799, 1464, 1208)
# desk scale: counts / 10, rounded
DESK_TREE_COUNTS = tuple(int(round(n / 10)) for n in FULL_TREE_COUNTS)
ENSEMBLE_SEEDS = (11, 23, 37, 41, 53)
HISTOGRAM_BINS = 256
L2_LEAF = 1.0
MIN_SAMPLES_LEAF = 2
SUBSAMPLE = 0.8
