"""Brute-force reference implementations, written with plain loops.

Kept deliberately independent from the vectorized code under test.
"""

import math

import numpy as np


def sq_dist(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def multi_rbf(a, b, gammas):
    d = sq_dist(a, b)
    return sum(math.exp(-g * d) for g in gammas)


def jmmd_loop(acts_s, acts_t, gammas):
    """Term-by-term linear-time JMMD with 1-based pair indices (2i-1, 2i)."""
    n = len(acts_s[0])
    L = len(acts_s)

    def prod_k(x_rows, i, y_rows, j):
        p = 1.0
        for layer in range(L):
            p *= multi_rbf(x_rows[layer][i], y_rows[layer][j], gammas[layer])
        return p

    total = 0.0
    for i in range(1, n // 2 + 1):
        a, b = 2 * i - 2, 2 * i - 1  # zero-based rows of 2i-1 and 2i
        total += prod_k(acts_s, a, acts_s, b) + prod_k(acts_t, a, acts_t, b)
        total -= prod_k(acts_s, a, acts_t, b) + prod_k(acts_t, a, acts_s, b)
    return 2.0 / n * total


def quadratic_mmd_unbiased(xs, xt, gammas):
    """Unbiased quadratic MMD^2 (off-diagonal within-domain means)."""
    n, m = len(xs), len(xt)
    kss = sum(multi_rbf(xs[i], xs[j], gammas) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    ktt = sum(multi_rbf(xt[i], xt[j], gammas) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    kst = sum(multi_rbf(xs[i], xt[j], gammas) for i in range(n) for j in range(m)) / (n * m)
    return kss + ktt - 2 * kst


def triplet_loop(E, labels, margin, reduction="mean"):
    """Batch-all triplet value and subgradient via an explicit triple loop."""
    E = np.asarray(E, dtype=float)
    n, d = E.shape
    grad = np.zeros_like(E)
    total, count = 0.0, 0
    for a in range(n):
        for p in range(n):
            if p == a or labels[p] != labels[a]:
                continue
            for q in range(n):
                if labels[q] == labels[a]:
                    continue
                count += 1
                dap = sq_dist(E[a], E[p])
                daq = sq_dist(E[a], E[q])
                h = margin + dap - daq
                if h > 0:
                    total += h
                    for k in range(d):
                        grad[a, k] += 2 * (E[a, k] - E[p, k]) - 2 * (E[a, k] - E[q, k])
                        grad[p, k] += -2 * (E[a, k] - E[p, k])
                        grad[q, k] += 2 * (E[a, k] - E[q, k])
    if count == 0:
        return 0.0, grad, 0
    denom = count if reduction == "mean" else 1
    return total / denom, grad / denom, count


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. arrays mutated in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            fp = f()
            arr[idx] = old - h
            fm = f()
            arr[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_rel_err(analytic, numeric, floor=1e-8):
    a = np.concatenate([x.ravel() for x in analytic])
    b = np.concatenate([x.ravel() for x in numeric])
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
