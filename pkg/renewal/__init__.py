"""
Weighted renewal sums h(x, D) = sum_n a_n P(S_n in [x, x + D)) and
H(x) = sum_n a_n P(S_n < x): exact lattice evaluation with certified
truncation, Monte Carlo for continuous laws, asymptotic predictors and an
experiment harness comparing the two.
"""

__version__ = "1.0.0"
