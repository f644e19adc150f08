"""Independent reference implementations used only by the tests."""

from fractions import Fraction

import mpmath
import numpy as np
from scipy.optimize import linprog

mpmath.mp.dps = 50


def lp_w1(p, q):
    """Optimal-transport cost between two pmfs on 1..5 with ground metric |i - j|."""
    n = 5
    cost = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).ravel().astype(float)
    a_eq = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1
        a_eq.append(row.ravel())
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1
        a_eq.append(col.ravel())
    b_eq = np.concatenate([p, q])
    # one marginal constraint is redundant; drop it to keep the system full rank
    res = linprog(cost, A_eq=np.array(a_eq[:-1]), b_eq=b_eq[:-1], bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0
    return res.fun


def count_modes(counts):
    """Brute-force mode count: collapse equal runs, then count strict local peaks."""
    counts = list(counts)
    if len(set(counts)) == 1:
        return 5
    runs = []
    for c in counts:
        if not runs or runs[-1] != c:
            runs.append(c)
    modes = 0
    for i, c in enumerate(runs):
        left = runs[i - 1] if i > 0 else -1
        right = runs[i + 1] if i + 1 < len(runs) else -1
        if c > 0 and c > left and c > right:
            modes += 1
    return modes


def frac_mean_var(ratings):
    n = len(ratings)
    mean = Fraction(sum(ratings), n)
    var = sum((Fraction(r) - mean) ** 2 for r in ratings) / (n - 1)
    return mean, var


def mp_gauss_pmf(center, sigma):
    w = [mpmath.exp(-((r - center) ** 2) / (2 * mpmath.mpf(sigma) ** 2)) for r in range(1, 6)]
    total = mpmath.fsum(w)
    return [x / total for x in w]


def mp_welch_p(a, b):
    """One-tailed p for mean(b) < mean(a), in 50-digit arithmetic."""
    a = [mpmath.mpf(x) for x in a]
    b = [mpmath.mpf(x) for x in b]
    na, nb = len(a), len(b)
    ma, mb = mpmath.fsum(a) / na, mpmath.fsum(b) / nb
    va = mpmath.fsum((x - ma) ** 2 for x in a) / (na - 1) / na
    vb = mpmath.fsum((x - mb) ** 2 for x in b) / (nb - 1) / nb
    t = (ma - mb) / mpmath.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    tail = mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, df / (df + t**2), regularized=True) / 2
    return float(tail if t >= 0 else 1 - tail)


def mp_pearson(x, y):
    x = [mpmath.mpf(v) for v in x]
    y = [mpmath.mpf(v) for v in y]
    mx, my = mpmath.fsum(x) / len(x), mpmath.fsum(y) / len(y)
    sxy = mpmath.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = mpmath.fsum((a - mx) ** 2 for a in x)
    syy = mpmath.fsum((b - my) ** 2 for b in y)
    return float(sxy / mpmath.sqrt(sxx * syy))


def sample_pl_rankings(pmf, n, rng):
    """Plackett-Luce rankings by sequential draws without replacement."""
    out = []
    for _ in range(n):
        order = list(rng.choice(5, size=5, replace=False, p=pmf) + 1)
        out.append(tuple(int(r) for r in order))
    return out
