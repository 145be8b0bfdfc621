"""Independent reference computations used as test oracles.

Nothing here imports the code paths under test beyond plain data types.
"""

import itertools
import math

import numpy as np


def pascal_binomial(t, n):
    row = [1]
    for _ in range(t):
        row = [a + b for a, b in zip([0] + row, row + [0])]
    return row[n]


def clip_true_confidence(frames, prototypes, label, subset, temperature=1.0):
    """Additive classifier evaluated from first principles: softmax of the mean logit."""
    means = []
    for proto in prototypes:
        vals = [float(np.dot(frames[t], proto)) / temperature for t in subset]
        means.append(sum(vals) / len(vals))
    m = max(means)
    e = [math.exp(v - m) for v in means]
    return e[label] / sum(e)


def brute_force_best(frames, prototypes, label, N):
    T = len(frames)
    best, best_val = None, -1.0
    for subset in itertools.combinations(range(T), N):
        v = clip_true_confidence(frames, prototypes, label, subset)
        if v > best_val:
            best, best_val = subset, v
    return best, best_val


def central_difference(fn, param, h=1e-6):
    """Numerical gradient of scalar ``fn()`` with respect to array ``param`` (modified in place)."""
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        orig = param[idx]
        param[idx] = orig + h
        up = fn()
        param[idx] = orig - h
        down = fn()
        param[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-3):
    """||a - n|| / max(||a||, ||n||, floor); the floor covers exactly-zero gradients."""
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / den)
