"""Boundary behaviour and Kotani verdicts for a small catalog of coefficients.

Prints two tidy CSV tables: scale-function boundary finiteness per
diffusion, and the martingale verdict per volatility function.
"""

import math

from gbmembed.minimality import DiffusionSpec, classify_boundaries, kotani_test

DIFFUSIONS = [
    ("brownian", "0", "1", -math.inf, math.inf, 0.0),
    ("drift_up", "1", "1", -math.inf, math.inf, 0.0),
    ("drift_down_half", "-0.5", "1", -math.inf, math.inf, 0.0),
    ("ornstein_uhlenbeck", "-x", "1", -math.inf, math.inf, 0.0),
    ("gbm_natural", "0", "x", 0.0, math.inf, 1.0),
    ("bessel3", "1/x", "1", 0.0, math.inf, 1.0),
    ("bessel2", "0.5/x", "1", 0.0, math.inf, 1.0),
    ("arctan_scale", "x/(1+x^2)", "1", -math.inf, math.inf, 0.0),
    ("cubic_drift", "x^3", "1", -math.inf, math.inf, 0.0),
]

VOLATILITIES = ["1", "exp(-x)", "sqrt(1+x^2)", "1+x^2", "1+abs(x)", "exp(x^2)", "(1+x^2)^0.75"]


def flag(v):
    return "inconclusive" if v.value is None else ("finite" if v.value else "infinite")


def main():
    print("name,mu,sigma,l,r,s_at_l,s_at_r,case,method_l,method_r")
    for name, mu, sigma, l, r, c in DIFFUSIONS:
        cls = classify_boundaries(DiffusionSpec(mu, sigma, l=l, r=r, c=c))
        print(f"{name},{mu},{sigma},{l},{r},{flag(cls.left)},{flag(cls.right)},{cls.case},{cls.left.method},{cls.right.method}")
    print()
    print("kappa,verdict,right_diverges,left_diverges")
    for k in VOLATILITIES:
        res = kotani_test(k)
        print(f"{k},{res.verdict},{res.right.value},{res.left.value}")


if __name__ == "__main__":
    main()
