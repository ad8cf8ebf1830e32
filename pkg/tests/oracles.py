"""Brute-force selection oracles, independent of the numpy code paths."""

import math
from fractions import Fraction


def topk_oracle(scores, rho):
    n = len(scores)
    k = max(1, int(math.floor(rho * n + 0.5)))
    ranked = sorted(range(n), key=lambda i: (-scores[i], i))
    chosen = set(ranked[:k])
    return [i in chosen for i in range(n)]


def global_topk_oracle(pool, rho):
    flat = [(-s, si, pi) for si, vec in enumerate(pool) for pi, s in enumerate(vec)]
    n = len(flat)
    # smallest integer >= rho * n, in exact arithmetic
    budget = math.ceil(Fraction(rho).limit_denominator(10**6) * n)
    chosen = {(si, pi) for _, si, pi in sorted(flat)[:budget]}
    return [[(si, pi) in chosen for pi in range(len(vec))] for si, vec in enumerate(pool)]
