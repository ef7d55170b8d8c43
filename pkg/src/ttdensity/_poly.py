"""Sparse multivariate polynomials as ``{exponent tuple: coefficient}`` dicts.

Used to expand polynomial transport maps so that moments reduce to
monomial integrals.
"""
from collections import defaultdict


def constant(value, dim):
    return {(0,) * dim: float(value)} if value != 0 else {}


def variable(i, dim):
    exp = [0] * dim
    exp[i] = 1
    return {tuple(exp): 1.0}


def add(p, q, alpha=1.0, beta=1.0):
    out = defaultdict(float)
    for e, c in p.items():
        out[e] += alpha * c
    for e, c in q.items():
        out[e] += beta * c
    return {e: c for e, c in out.items() if c != 0.0}


def mul(p, q):
    out = defaultdict(float)
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            out[tuple(a + b for a, b in zip(e1, e2))] += c1 * c2
    return {e: c for e, c in out.items() if c != 0.0}


def power(p, k, dim):
    out = constant(1.0, dim)
    for _ in range(k):
        out = mul(out, p)
    return out


def compose(p, inner, dim):
    """Substitute the polynomial vector ``inner`` for the variables of ``p``."""
    out = {}
    cache = {}
    for e, c in p.items():
        term = constant(c, dim)
        for i, k in enumerate(e):
            if k:
                key = (i, k)
                if key not in cache:
                    cache[key] = power(inner[i], k, dim)
                term = mul(term, cache[key])
        out = add(out, term)
    return out


def monomial_product(components, alpha, dim):
    """Expand ``prod_k components[k] ** alpha[k]``."""
    out = constant(1.0, dim)
    for comp, a in zip(components, alpha):
        if a:
            out = mul(out, power(comp, a, dim))
    return out


def degree(p):
    return max((sum(e) for e in p), default=0)
