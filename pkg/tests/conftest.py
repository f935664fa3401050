import itertools
import math

import numpy as np
import pytest

from labelmoments import calibrate, diagnostics

SYNTH_ACCURACIES = [
    0.6893, 0.6072, 0.5954, 0.6603, 0.6939,
    0.6346, 0.7462, 0.6870, 0.6462, 0.6284,
]
SYNTH_EDGES = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]


@pytest.fixture(scope="session")
def synth_model_dep():
    """Ten-source ground truth with five dependent pairs at gap 0.1."""
    return calibrate(SYNTH_ACCURACIES, SYNTH_EDGES, 0.1)


@pytest.fixture(scope="session")
def synth_model_indep():
    """The same accuracy targets without any dependencies."""
    return calibrate(SYNTH_ACCURACIES, [], 0.0)


@pytest.fixture(scope="session")
def synth_diag_dep(synth_model_dep):
    return diagnostics(synth_model_dep)


@pytest.fixture(scope="session")
def synth_diag_indep(synth_model_indep):
    return diagnostics(synth_model_indep)


# ---------------------------------------------------------------------------
# Independent brute-force oracle, deliberately sharing no code with the
# package's vectorized enumeration.
# ---------------------------------------------------------------------------


def brute_joint(theta, edges=(), theta_y=0.0):
    """Dict {(y, s-tuple): probability} via per-state evaluation."""
    m = len(theta)
    table = {}
    total = 0.0
    for state in itertools.product((-1, 1), repeat=m + 1):
        y, s = state[-1], state[:-1]
        energy = theta_y * y + sum(theta[i] * s[i] * y for i in range(m))
        energy += sum(t * s[i] * s[j] for i, j, t in edges)
        w = math.exp(energy)
        table[(y, s)] = w
        total += w
    return {k: v / total for k, v in table.items()}, total


def brute_moment(table, fn):
    return sum(p * fn(y, s) for (y, s), p in table.items())


def brute_accuracies(table, m):
    return np.array(
        [brute_moment(table, lambda y, s, i=i: s[i] * y) for i in range(m)]
    )


def brute_pair_moments(table, m):
    out = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = brute_moment(
                table, lambda y, s, i=i, j=j: s[i] * s[j]
            )
    return out


def random_valid_edges(rng, m, max_edges=None):
    """Random set of disjoint source pairs respecting the degree constraint."""
    order = list(rng.permutation(m))
    limit = m // 2 if max_edges is None else min(max_edges, m // 2)
    k = int(rng.integers(0, limit + 1))
    return [
        (min(order[2 * t], order[2 * t + 1]), max(order[2 * t], order[2 * t + 1]))
        for t in range(k)
    ]
