"""Independent brute-force reference implementations used to check the
optimized library code. Everything here is deliberately naive and O(n*m)."""

import numpy as np


def brute_nn_sq(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    d = X[:, None, :] - Y[None, :, :]
    return (d * d).sum(axis=2).min(axis=1)


def brute_acd(X, Y, normalize=True):
    sq = brute_nn_sq(X, Y)
    return float(sq.mean() if normalize else sq.sum())


def brute_recall(X, Y, t=0.1):
    return float((brute_nn_sq(X, Y) <= t).mean())


def brute_cd(X, Y, normalize=True):
    return brute_acd(X, Y, normalize) + brute_acd(Y, X, normalize)


def brute_fps(points: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy maximin selection; ties broken toward the lowest index."""
    n = len(points)
    k = min(k, n)
    chosen = [start_index]
    d = ((points - points[start_index]) ** 2).sum(axis=1)
    while len(chosen) < k:
        idx = int(np.argmax(d))  # argmax takes the first maximum
        chosen.append(idx)
        d = np.minimum(d, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen]


def ray_triangle_t(origin, direction, a, b, c, eps=1e-12):
    """Scalar Moller-Trumbore; returns the hit parameter t or None."""
    e1, e2 = b - a, c - a
    p = np.cross(direction, e2)
    det = float(e1 @ p)
    if abs(det) < eps:
        return None
    inv = 1.0 / det
    s = origin - a
    u = float(s @ p) * inv
    if u < 0 or u > 1:
        return None
    q = np.cross(s, e1)
    v = float(direction @ q) * inv
    if v < 0 or u + v > 1:
        return None
    t = float(e2 @ q) * inv
    return t if t > eps else None


def brute_first_hit(origin, direction, corners):
    """Smallest positive hit parameter across all triangles, or inf."""
    best = np.inf
    for a, b, c in corners:
        t = ray_triangle_t(origin, direction, a, b, c)
        if t is not None and t < best:
            best = t
    return best


def grad_check(f, xs, eps=1e-6):
    """Max relative error between analytic gradients and central differences.

    f(list of float64 arrays) -> (scalar loss, list of gradient arrays).
    """
    loss, grads = f(xs)
    worst = 0.0
    for i, x in enumerate(xs):
        num = np.zeros_like(x)
        flat = x.reshape(-1)
        nflat = num.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp, _ = f(xs)
            flat[j] = orig - eps
            lm, _ = f(xs)
            flat[j] = orig
            nflat[j] = (lp - lm) / (2 * eps)
        denom = np.maximum(np.abs(num) + np.abs(grads[i]), 1e-8)
        rel = np.abs(num - grads[i]) / denom
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst
