"""Independent reference implementations used as test oracles."""

import numpy as np


def tail_indices(angles, fraction):
    """Order-statistic tails by stable argsort; ties keep the lower index."""
    a = np.asarray(angles, dtype=np.float64)
    t = int(fraction * 1000 * len(a)) // 1000
    low = np.argsort(a, kind="stable")[:t]
    high = np.argsort(-a, kind="stable")[:t]
    return set(low.tolist()) | set(high.tolist())


def confusion(pred, truth):
    """(tn, fp, tp, fn) by direct recount; pred and truth are 0/1."""
    cells = {(0, 0): 0, (0, 1): 0, (1, 1): 0, (1, 0): 0}
    for p, t in zip(pred, truth):
        cells[(int(t), int(p))] += 1
    return cells[(0, 0)], cells[(0, 1)], cells[(1, 1)], cells[(1, 0)]
