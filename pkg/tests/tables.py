"""Published result tables used as fixed inputs by the tests."""

# final-model and best-seen improvements of 10 fixed-blackbox trials (percent)
FIXED_BLACKBOX_FINAL = [57.0, 67.0, 25.0, 51.0, 5.0, 70.0, 69.0, 47.0, 68.0, 66.0]
FIXED_BLACKBOX_BEST = [69.0, 71.0, 69.0, 73.0, 74.0, 73.0, 69.0, 73.0, 70.0, 69.0]

# best improvements over 6 randomized-blackbox trials (percent)
RANDOMIZED_BEST_BASELINE = [22.6, 37.4, 37.8, 36.7, 37.2, 34.5]
RANDOMIZED_BEST_HIERARCHICAL = [37.4, 38.2, 32.0, 37.4, 41.5, 48.0]

# cross-graph generalization: row = model trained on graph i, column = evaluated on graph j
CROSS_GRAPH_BASELINE = [
    [0.31, 0.35, 0.28, 0.31, 0.27, 0.23],
    [0.31, 0.37, 0.29, 0.32, 0.27, 0.26],
    [0.25, 0.30, 0.23, 0.26, 0.22, 0.18],
    [0.10, 0.15, 0.06, 0.10, 0.06, 0.03],
    [0.16, 0.21, 0.14, 0.16, 0.14, 0.09],
    [0.28, 0.32, 0.26, 0.29, 0.25, 0.21],
]
CROSS_GRAPH_HIERARCHICAL = [
    [0.21, 0.60, 0.54, 0.50, 0.39, 0.19],
    [-0.30, 0.33, 0.24, 0.09, -0.02, -0.22],
    [-0.08, 0.44, 0.36, 0.23, 0.15, 0.05],
    [0.09, 0.34, 0.32, 0.16, 0.05, -0.08],
    [-0.04, 0.45, 0.42, -0.49, -0.62, -0.83],
    [0.39, 0.42, 0.65, 0.58, 0.53, 0.44],
]
