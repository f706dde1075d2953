"""Shared fixtures and independent reference implementations.

The reference evaluators here are written with plain Python loops and
ints, on purpose: they are the oracles the package is checked against and
must not share code with it.
"""

from __future__ import annotations

import numpy as np
import pytest

import bnnverify as bv


# ---------------------------------------------------------------------------
# independent reference network evaluator (pure Python, no numpy math)

def ref_sign(total: int) -> int:
    if total == 0:
        raise ValueError("zero sum reached a sign neuron")
    return 1 if total > 0 else -1


def ref_forward(layers, x):
    """(label, activations_per_layer, scores) via plain loops.

    ``layers`` is a list of weight matrices as nested lists; ``x`` is a
    list of +-1 ints.  Argmax breaks ties toward the lowest index.
    """
    acts = []
    cur = list(x)
    for w in layers[:-1]:
        nxt = [ref_sign(sum(int(wi) * int(xi) for wi, xi in zip(row, cur)))
               for row in w]
        acts.append(nxt)
        cur = nxt
    scores = [sum(int(wi) * int(xi) for wi, xi in zip(row, cur))
              for row in layers[-1]]
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best, acts, scores


def ref_qubo_energy(poly_constant, linear, quadratic, assignment):
    """Evaluate c + sum l_i x_i + sum q_ij x_i x_j by brute iteration."""
    total = poly_constant
    for v, c in linear.items():
        total += c * int(assignment[v])
    for (i, j), c in quadratic.items():
        total += c * int(assignment[i]) * int(assignment[j])
    return total


def ref_enumerate_minimum(q):
    """Exact QUBO minimum by plain enumeration (small instances only)."""
    n = q.num_vars
    assert n <= 20
    best_e, best_x = None, None
    for bits in range(1 << n):
        x = [(bits >> (n - 1 - k)) & 1 for k in range(n)]
        e = ref_qubo_energy(q.poly.constant, q.poly.linear, q.poly.quadratic, x)
        if best_e is None or e < best_e:
            best_e, best_x = e, x
    return best_e, best_x


# ---------------------------------------------------------------------------
# random models

VALID_WIDTHS = (3, 7, 15, 31)


def random_model(rng, input_width=7, hidden=(3,), classes=2):
    widths = [input_width, *hidden]
    layers = []
    for fan_out, fan_in in zip(widths[1:], widths[:-1]):
        layers.append(rng.choice([-1, 1], size=(fan_out, fan_in)).astype(np.int8))
    layers.append(rng.choice([-1, 1], size=(classes, widths[-1])).astype(np.int8))
    geo = bv.InputGeometry(1, input_width, input_width)
    return bv.BnnModel(layers, geometry=geo)


def random_input(rng, width):
    return rng.choice([-1, 1], size=width).astype(np.int8)


def random_qubo(rng, n, density=0.5, lo=-5, hi=5):
    """Random integer QUBO wrapped as a QuboInstance with no constraints."""
    from bnnverify.ir import ConstraintSystem, QuadPoly, assemble_qubo

    cs = ConstraintSystem()
    for _ in range(n):
        cs.new_var(None)
    poly = QuadPoly(int(rng.integers(lo, hi + 1)))
    for i in range(n):
        if rng.random() < density:
            poly.add_linear(i, int(rng.integers(lo, hi + 1)))
        for j in range(i + 1, n):
            if rng.random() < density:
                poly.add_quadratic(i, j, int(rng.integers(lo, hi + 1)))
    return assemble_qubo(poly, [], cs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
