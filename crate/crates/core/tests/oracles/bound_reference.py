"""Arbitrary-precision reference values for the recovery error bound.

Evaluates the bound constants directly (no log-space tricks) at 50 digits and
prints Rust array literals that are frozen into tests/theory.rs.
"""
from mpmath import mp, mpf, sqrt, exp

mp.dps = 50


def bound(m, n, x_min, x_max, r, delta, eps):
    t = sqrt(mpf(m) / n)
    gamma = ((1 + 2 * t) / (1 - 2 * t)) ** 2
    alpha = mpf(x_max) / mpf(x_min)
    rho1 = 4 * sqrt(2) * alpha**8 * gamma**5 * (1 + 2 * alpha**2 * gamma) ** 2 * (1 + 2 * t) ** 2
    rho2 = (1 + 2 * alpha**2 * gamma) ** 2 * gamma**7 * alpha**14
    mse = rho1 * sqrt((1 + eps) * n * r / m) + rho2 * mpf(x_max) ** 2 * delta
    fail = n * exp(-mpf("0.09") * m) + n * exp(-mpf("0.84") * m) + mpf(2) ** (-n * r * eps + 1) + 2 * exp(-mpf(m) / 2)
    return gamma, rho1, rho2, mse, fail


cases = [
    (1, 16, 1.0, 1.0, 0.5, 0.01, 0.1),
    (64, 1024, 0.5, 2.0, 0.05, 1.0 / 1024, 0.5),
    (10, 100, 1.0, 3.0, 0.2, 0.001, 1.0),
    (48, 256, 0.5, 2.0, 0.15, 2.0**-12, 0.25),
    (200, 1000, 0.25, 4.0, 0.01, 1e-4, 2.0),
    (5, 1000, 1.0, 1.5, 1.0, 0.5, 0.01),
]
for c in cases:
    g, r1, r2, mse, fail = bound(*c)
    print(
        "    (%d, %d, %r, %r, %r, %r, %r, %s, %s, %s, %s, %s),"
        % (c + tuple(mp.nstr(v, 17, min_fixed=-1, max_fixed=-1) for v in (g, r1, r2, mse, fail)))
    )
