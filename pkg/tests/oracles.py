"""Independent brute-force reference implementations used by the tests.

Everything here is written from the textbook definitions with plain Python
loops, sharing no code with the package.
"""

from __future__ import annotations

import math
from collections import defaultdict

# two-sided 95% Student-t critical values t_{0.975, df}, from standard tables
T_975 = {
    1: 12.706205, 2: 4.302653, 3: 3.182446, 4: 2.776445, 5: 2.570582,
    6: 2.446912, 7: 2.364624, 8: 2.306004, 9: 2.262157, 10: 2.228139,
}


def mean(xs):
    return math.fsum(xs) / len(xs)


def mse(p, t):
    return math.fsum((a - b) ** 2 for a, b in zip(p, t)) / len(p)


def pearson(x, y):
    mx, my = mean(x), mean(y)
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def midranks(x):
    """rank_i = (# values below x_i) + (# values equal to x_i + 1) / 2."""
    out = []
    for v in x:
        below = sum(1 for w in x if w < v)
        equal = sum(1 for w in x if w == v)
        out.append(below + (equal + 1) / 2.0)
    return out


def spearman(x, y):
    return pearson(midranks(x), midranks(y))


def normal_equations(x, y):
    """Solve [[n, Σx], [Σx, Σx²]] [a, b]ᵀ = [Σy, Σxy]ᵀ by Cramer's rule."""
    n = len(x)
    sx, sy = math.fsum(x), math.fsum(y)
    sxx = math.fsum(v * v for v in x)
    sxy = math.fsum(a * b for a, b in zip(x, y))
    det = n * sxx - sx * sx
    return (sy * sxx - sx * sxy) / det, (n * sxy - sx * sy) / det


def group_means(keys, *columns):
    acc = defaultdict(lambda: [0.0] * (len(columns) + 1))
    for i, k in enumerate(keys):
        for j, col in enumerate(columns):
            acc[k][j] += col[i]
        acc[k][-1] += 1
    return {k: tuple(v[j] / v[-1] for j in range(len(columns))) + (int(v[-1]),) for k, v in acc.items()}


def t_interval(values):
    n = len(values)
    m = mean(values)
    if n == 1:
        return m, 0.0
    sd = math.sqrt(math.fsum((v - m) ** 2 for v in values) / (n - 1))
    return m, T_975[n - 1] * sd / math.sqrt(n)


def anova(groups):
    allv = [v for g in groups for v in g]
    grand = mean(allv)
    ssb = math.fsum(len(g) * (mean(g) - grand) ** 2 for g in groups)
    ssw = math.fsum((v - mean(g)) ** 2 for g in groups for v in g)
    dfb, dfw = len(groups) - 1, len(allv) - len(groups)
    return ssb, ssw, (ssb / dfb) / (ssw / dfw), dfb, dfw


def pooled_t(a, b):
    na, nb = len(a), len(b)
    sp2 = (math.fsum((v - mean(a)) ** 2 for v in a) + math.fsum((v - mean(b)) ** 2 for v in b)) / (na + nb - 2)
    return (mean(a) - mean(b)) / math.sqrt(sp2 * (1 / na + 1 / nb)), na + nb - 2


def linear_percentile(values, q):
    """Percentile q in [0, 100] with linear interpolation between closest ranks."""
    s = sorted(values)
    pos = (len(s) - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def midranks_sorted(x):
    """Mid-ranks by sorting then walking runs of equal values (1-based)."""
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks
