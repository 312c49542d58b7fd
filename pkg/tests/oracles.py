"""Brute-force reference implementations, coded independently of the package.

These favour obviousness over speed: explicit loops, exact fractions where
cheap, and textbook formulas in their most literal form.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction


def mean(xs):
    return math.fsum(xs) / len(xs)


def oracle_sigma(eps):
    return math.sqrt(math.fsum(e * e for e in eps) / len(eps))


def oracle_skew(eps):
    # k-statistic ratio k3 / k2^1.5 written through unbiased cumulants
    n = len(eps)
    m = mean(eps)
    s2 = math.fsum((e - m) ** 2 for e in eps)
    s3 = math.fsum((e - m) ** 3 for e in eps)
    k2 = s2 / (n - 1)
    k3 = n * s3 / ((n - 1) * (n - 2))
    return k3 / k2**1.5


def oracle_kurt(eps):
    # unbiased fourth cumulant over squared unbiased variance
    n = len(eps)
    m = mean(eps)
    s2 = math.fsum((e - m) ** 2 for e in eps)
    s4 = math.fsum((e - m) ** 4 for e in eps)
    k2 = s2 / (n - 1)
    k4 = (n * (n + 1) * s4 - 3 * (n - 1) * s2 * s2) / ((n - 1) * (n - 2) * (n - 3))
    return k4 / (k2 * k2)


def oracle_sortino(eps):
    down = math.sqrt(math.fsum(min(e, 0.0) ** 2 for e in eps) / len(eps))
    return mean(eps) / down


def oracle_ols(y, columns):
    """Normal equations solved by Gauss-Jordan elimination on exact fractions."""
    X = [[Fraction(1)] + [Fraction(c[t]) for c in columns] for t in range(len(y))]
    Y = [Fraction(v) for v in y]
    k = len(X[0])
    A = [[sum(X[t][i] * X[t][j] for t in range(len(Y))) for j in range(k)] for i in range(k)]
    b = [sum(X[t][i] * Y[t] for t in range(len(Y))) for i in range(k)]
    for col in range(k):
        piv = next(r for r in range(col, k) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        b[col], b[piv] = b[piv], b[col]
        for r in range(k):
            if r != col and A[r][col] != 0:
                f = A[r][col] / A[col][col]
                A[r] = [a - f * c for a, c in zip(A[r], A[col])]
                b[r] -= f * b[col]
    return [float(b[i] / A[i][i]) for i in range(k)]


def oracle_tau_b(x, y):
    nc = nd = tx = ty = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tx += 1
        elif dy == 0:
            ty += 1
        elif (dx > 0) == (dy > 0):
            nc += 1
        else:
            nd += 1
    return (nc - nd) / math.sqrt((nc + nd + tx) * (nc + nd + ty))


def midranks(v):
    ranks = []
    for a in v:
        below = sum(1 for b in v if b < a)
        equal = sum(1 for b in v if b == a)
        ranks.append(below + (equal + 1) / 2)
    return ranks


def oracle_spearman(x, y):
    rx, ry = midranks(x), midranks(y)
    mx, my = mean(rx), mean(ry)
    num = math.fsum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(math.fsum((a - mx) ** 2 for a in rx) * math.fsum((b - my) ** 2 for b in ry))
    return num / den


def oracle_macro_f1(pred, true):
    f1s = []
    for c in range(3):
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return 100.0 * sum(f1s) / 3


def oracle_percentile_bins(values):
    """Linear-interpolation 30th/70th percentile thresholds, then compare."""
    s = sorted(values)
    n = len(s)

    def pct(q):
        pos = q * (n - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, n - 1)
        return s[lo] + (pos - lo) * (s[hi] - s[lo])

    p30, p70 = pct(0.3), pct(0.7)
    return [0 if v <= p30 else (2 if v > p70 else 1) for v in values]
