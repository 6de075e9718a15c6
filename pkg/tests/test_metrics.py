import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moef import _kernels
from moef.errors import ContractError, UndefinedMetricError
from moef.harness.metrics import auc, category_entropy


def brute_force_auc(labels, scores):
    pos = [s for l, s in zip(labels, scores) if l == 1]
    neg = [s for l, s in zip(labels, scores) if l == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect(self):
        assert auc([1, 0], [0.9, 0.1]) == 1.0

    def test_all_tied(self):
        assert auc([1, 0, 1, 0, 0], [0.3] * 5) == 0.5

    def test_pair_count(self):
        assert auc([1, 1, 0, 0], [0.8, 0.4, 0.6, 0.2]) == 0.75

    def test_single_class(self):
        with pytest.raises(UndefinedMetricError):
            auc([1, 1], [0.2, 0.3])
        with pytest.raises(UndefinedMetricError):
            auc([], [])

    def test_bad_input(self):
        with pytest.raises(ContractError):
            auc([1, 2], [0.1, 0.2])
        with pytest.raises(ContractError):
            auc([1, 0], [0.1])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 6)), min_size=2, max_size=40))
    def test_matches_brute_force_with_ties(self, pairs):
        labels = [p[0] for p in pairs]
        scores = [p[1] / 6 for p in pairs]
        if len(set(labels)) < 2:
            return
        assert auc(labels, scores) == pytest.approx(brute_force_auc(labels, scores), abs=1e-12)

    def test_backends_agree(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, 5000).astype(np.int8)
        scores = rng.integers(0, 50, 5000) / 50.0
        counts = [b.auc_pair_counts(labels, scores) for b in _kernels.available_backends().values()]
        assert all(c == counts[0] for c in counts)

    def test_flip_symmetry(self):
        rng = np.random.default_rng(1)
        y, s = rng.integers(0, 2, 300), rng.normal(size=300)
        assert auc(y, s) + auc(1 - y, s) == pytest.approx(1.0, abs=1e-12)


class TestEntropy:
    def test_single_category(self):
        assert category_entropy([7, 7, 7]) == 0.0

    def test_uniform_four(self):
        assert abs(category_entropy([1, 2, 3, 4] * 25) - math.log(4)) < 1e-12

    def test_hand_value(self):
        assert abs(category_entropy([0, 0, 1, 2]) - 1.039721) < 1e-6

    def test_empty(self):
        with pytest.raises(ContractError):
            category_entropy([])
