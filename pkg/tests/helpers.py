"""Random valid models for property and acceptance tests.

Each transient state carries a label: the set of exit indices it has already
entered. A transition i -> j is allowed only when the label of i is contained
in the label of j, which makes every exit set closed. No transient state may
carry the full label, so the exit sets meet only at absorption.
"""

from __future__ import annotations

import itertools

import numpy as np

from phmix.matrix_core import rcond
from phmix.model import MixtureModel, from_psi
from phmix.observation import NoInfo, update


def _random_sub(rng, labels, allowed, exit_prob):
    m = len(labels)
    M = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i != j and allowed[i, j] and rng.random() < 0.6:
                M[i, j] = rng.uniform(0.2, 2.0)
        out = rng.uniform(0.1, 1.5) if (labels[i] or rng.random() < exit_prob) else 0.0
        M[i, i] = -(M[i].sum() + out)
    return M


def random_model(rng, m=None, n_exits=None, psi=None, exit_prob=0.5, min_survivors=1) -> MixtureModel:
    """A random valid model with ``m <= 6`` transient states and ``n_exits <= 3`` exit sets.

    ``psi=True`` builds the switched regime by row scaling, ``False`` draws it
    independently on the same transition pattern, ``None`` picks at random.
    """
    n = int(rng.integers(1, 4)) if n_exits is None else n_exits
    while True:
        size = int(rng.integers(2, 7)) if m is None else m
        proper = [frozenset(c) for r in range(n) for c in itertools.combinations(range(n), r)]
        survivors = max(min_survivors, 1)
        labels = [frozenset()] * survivors + [proper[int(rng.integers(len(proper)))] for _ in range(size - survivors)]
        allowed = np.array([[a <= b for b in labels] for a in labels])
        A = _random_sub(rng, labels, allowed, exit_prob)
        use_psi = bool(rng.integers(2)) if psi is None else psi
        if use_psi:
            B = from_psi(A, rng.uniform(0.3, 3.0, size)).B
        else:
            B = _random_sub(rng, labels, allowed, exit_prob)
        if min(rcond(A), rcond(B)) < 1e-6:
            continue
        start = np.array([not lab for lab in labels], dtype=float)
        pi = start * rng.uniform(0.2, 1.0, size)
        pi /= pi.sum()
        s = rng.uniform(0.05, 0.95, size)
        sets = [[j for j in range(size) if k in labels[j]] for k in range(n)]
        model = MixtureModel.build(A, B, pi, s, sets)
        return model.check()


def random_belief_state(model, rng):
    """A belief at a positive time obtained from survival-only information."""
    return update(model, NoInfo(float(rng.uniform(0.1, 1.0))))
