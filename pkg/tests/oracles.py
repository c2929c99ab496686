"""Independent reference implementations used to check the fast paths.

Everything here is written for clarity, not speed, and shares no code with
the package beyond plain data types.
"""

import itertools
import math

import numpy as np


# --- matching ---------------------------------------------------------------

def max_matching(n_left, n_right, compatible):
    """Exhaustive maximum bipartite matching size for small graphs."""
    best = 0

    def search(i, used, size):
        nonlocal best
        if size + (n_left - i) <= best:
            return
        if i == n_left:
            best = max(best, size)
            return
        for j in range(n_right):
            if j not in used and compatible(i, j):
                search(i + 1, used | {j}, size + 1)
        search(i + 1, used, size)

    search(0, frozenset(), 0)
    return best


def brute_boundary_matches(hyp, ref, tol):
    return max_matching(len(hyp), len(ref), lambda i, j: abs(hyp[i] - ref[j]) <= tol + 1e-9)


def brute_token_matches(hyp_tokens, ref_tokens, tol):
    def ok(i, j):
        (a, b), (c, d) = hyp_tokens[i], ref_tokens[j]
        return abs(a - c) <= tol + 1e-9 and abs(b - d) <= tol + 1e-9
    return max_matching(len(hyp_tokens), len(ref_tokens), ok)


def prf(m, n_hyp, n_ref):
    p = m / n_hyp if n_hyp else 0.0
    r = m / n_ref if n_ref else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


def brute_boundary_f1(hyp_seg, gold_seg, tol):
    m = nh = nr = 0
    for u in hyp_seg:
        h, g = list(hyp_seg[u]), list(gold_seg[u])
        m += brute_boundary_matches(h, g, tol)
        nh += len(h)
        nr += len(g)
    return prf(m, nh, nr)


def brute_token_f1(hyp_seg, gold_words, tol):
    m = nh = nr = 0
    for u in hyp_seg:
        b = list(hyp_seg[u])
        ht = [(b[k], b[k + 1]) for k in range(len(b) - 1)]
        gt = [(w[1], w[2]) for w in gold_words[u]]
        m += brute_token_matches(ht, gt, tol)
        nh += len(ht)
        nr += len(gt)
    return prf(m, nh, nr)


# --- peaks ------------------------------------------------------------------

def brute_peaks(x, min_height, min_distance):
    """Peak picking straight from the definition."""
    x = list(x)
    n = len(x)
    cands = []
    i = 1
    while i < n - 1:
        # extend over a flat run starting at i
        j = i
        while j + 1 < n and x[j + 1] == x[i]:
            j += 1
        if j < n - 1 and x[i - 1] < x[i] and x[j + 1] < x[i]:
            cands.append((i + j) // 2)
        i = j + 1
    cands = [c for c in cands if x[c] >= min_height]
    cands.sort(key=lambda c: (-x[c], c))
    accepted = []
    for c in cands:
        if all(abs(c - a) >= min_distance for a in accepted):
            accepted.append(c)
    return sorted(accepted)


# --- gradients --------------------------------------------------------------

def central_differences(f, params, h=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. each array in ``params`` (in place)."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        for idx in itertools.product(*map(range, p.shape)):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def naive_bce(p, y):
    p = min(max(p, 1e-7), 1 - 1e-7)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))
