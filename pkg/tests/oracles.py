"""Independent reference computations used by the tests.

Nothing here imports gupkit: losses are re-derived from their definitions
and differentiated numerically in 40-digit arithmetic.
"""

import mpmath as mp

mp.mp.dps = 40


def laplace_nll_mp(mu, sigma, target):
    mu, sigma, target = mp.mpf(mu), mp.mpf(sigma), mp.mpf(target)
    return mp.sqrt(2) / sigma * abs(mu - target) + mp.log(sigma)


def depth_loss_mp(f, mu_h, log_sigma_h, mu_b, log_sigma_b, h2d, d_gt):
    f, mu_h, mu_b, h2d = (mp.mpf(v) for v in (f, mu_h, mu_b, h2d))
    sigma_p = f * mp.exp(mp.mpf(log_sigma_h)) / h2d
    sigma_b = mp.exp(mp.mpf(log_sigma_b))
    mu_d = f * mu_h / h2d + mu_b
    sigma_d = mp.sqrt(sigma_p**2 + sigma_b**2)
    return laplace_nll_mp(mu_d, sigma_d, d_gt)


def central_diff(fn, args, i, rel_step=mp.mpf("1e-15")):
    """d fn / d args[i] by central difference in high precision."""
    args = [mp.mpf(a) for a in args]
    h = rel_step * max(mp.mpf(1), abs(args[i]))
    up = list(args)
    dn = list(args)
    up[i] += h
    dn[i] -= h
    return (fn(*up) - fn(*dn)) / (2 * h)


def average_ranks(xs):
    order = sorted(range(len(xs)), key=lambda k: xs[k])
    ranks = [0.0] * len(xs)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_bruteforce(x, y):
    rx, ry = average_ranks(list(x)), average_ranks(list(y))
    n = len(rx)
    mx, my = sum(rx) / n, sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    if vx == 0 or vy == 0:
        return None
    return cov / (vx * vy) ** 0.5


def auroc_bruteforce(scores, correct):
    pos = [s for s, c in zip(scores, correct) if c]
    neg = [s for s, c in zip(scores, correct) if not c]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))
