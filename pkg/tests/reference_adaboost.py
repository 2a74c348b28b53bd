"""Brute-force AdaBoost written from the textbook description, in plain Python.

Every candidate split is scored by summing weights over the node's rows
directly; nothing is sorted, cached or vectorized. It shares only the
documented decision rules with the package: midpoint thresholds stored as
float32, ties to the lowest feature then lowest threshold, node labels
going to the heavier class (attack on a tie), and splits kept only when
they reduce the node error.
"""
import math
import struct

TIE = 1e-12
EPS_MIN = 1e-10


def f32(v):
    return struct.unpack("<f", struct.pack("<f", v))[0]


def f32_below(v):
    """Largest float32 strictly below the float32 value ``v``."""
    bits = struct.unpack("<I", struct.pack("<f", v))[0]
    if v > 0:
        bits -= 1
    elif v < 0:
        bits += 1
    else:
        bits = 0x80000001
    return struct.unpack("<f", struct.pack("<I", bits))[0]


def midpoint_threshold(a, b):
    t = f32((a + b) / 2)
    return f32_below(b) if t >= b else t


def tree(rows, X, y, eff, depth, tol):
    pos = sum(eff[i] for i in rows if y[i] == 1)
    neg = sum(eff[i] for i in rows if y[i] == -1)
    label = 1 if pos >= neg else -1
    here = min(pos, neg)
    if depth == 0 or here == 0 or len(rows) < 2:
        return ("leaf", label)
    candidates = []
    for f in range(len(X[0])):
        values = sorted({X[i][f] for i in rows})
        for a, b in zip(values, values[1:]):
            lp = sum(eff[i] for i in rows if X[i][f] <= a and y[i] == 1)
            ln = sum(eff[i] for i in rows if X[i][f] <= a and y[i] == -1)
            rp = sum(eff[i] for i in rows if X[i][f] > a and y[i] == 1)
            rn = sum(eff[i] for i in rows if X[i][f] > a and y[i] == -1)
            candidates.append((min(lp, ln) + min(rp, rn), f, a, b))
    if not candidates:
        return ("leaf", label)
    best = min(c[0] for c in candidates)
    if not best < here - tol:
        return ("leaf", label)
    _, f, a, b = next(c for c in candidates if c[0] <= best + tol)
    thr = midpoint_threshold(a, b)
    left = [i for i in rows if X[i][f] <= thr]
    right = [i for i in rows if X[i][f] > thr]
    return ("split", f, thr, tree(left, X, y, eff, depth - 1, tol),
            tree(right, X, y, eff, depth - 1, tol))


def tree_predict(node, x):
    while node[0] == "split":
        node = node[3] if x[node[1]] <= node[2] else node[4]
    return node[1]


def fit(X, labels01, rounds, max_depth):
    """Returns (trees, alphas, weight history); labels are 0/1."""
    n = len(X)
    y = [1 if v else -1 for v in labels01]
    w = [1.0 / n] * n
    trees, alphas, history = [], [], []
    for _ in range(rounds):
        t = tree(list(range(n)), X, y, w, max_depth, TIE * sum(w))
        pred = [tree_predict(t, x) for x in X]
        eps = sum(w[i] for i in range(n) if pred[i] != y[i])
        if eps >= 0.5 and trees:
            break
        e = min(max(eps, EPS_MIN), 1 - EPS_MIN)
        a = 0.5 * math.log((1 - e) / e)
        trees.append(t)
        alphas.append(a)
        if eps >= 0.5 or eps <= EPS_MIN:
            break
        w = [w[i] * math.exp(-y[i] * pred[i] * a) for i in range(n)]
        total = sum(w)
        w = [v / total for v in w]
        history.append(w)
    return trees, alphas, history


def predict(trees, alphas, x):
    margin = sum(a * tree_predict(t, x) for t, a in zip(trees, alphas))
    return (1 if margin >= 0 else 0), margin


def random_fixture(seed, n=50, n_test=200):
    """Float32-valued training and probe points with a noisy linear boundary.

    Feature 2 takes only five values, so tied candidate splits are common.
    """
    import numpy as np
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n + n_test, 3)).astype(np.float32)
    x[:, 2] = rng.integers(0, 5, size=n + n_test)
    score = x[:, 0] + 0.5 * x[:, 1] + 0.3 * x[:, 2] + rng.normal(scale=0.5, size=n + n_test)
    y = (score > np.median(score)).astype(np.int8)
    return x[:n], y[:n], x[n:]
