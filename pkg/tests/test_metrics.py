"""Metric tests, including an exhaustive brute-force rank oracle."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codonfusion.metrics import accuracy, average_ranks, spearman


def brute_force_ranks(values):
    """Independent oracle: rank = 1 + count(smaller) + (count(equal) - 1) / 2."""
    values = list(values)
    ranks = []
    for v in values:
        smaller = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        ranks.append(smaller + (equal - 1) / 2.0 + 1.0)
    return np.array(ranks)


def brute_force_spearman(a, b):
    ra, rb = brute_force_ranks(a), brute_force_ranks(b)
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float((ra * rb).sum() / math.sqrt((ra * ra).sum() * (rb * rb).sum()))


class TestSpearman:
    def test_monotone_is_one(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)

    def test_reversed_is_minus_one(self):
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)

    def test_tied_inputs_match_oracle(self):
        a, b = [1, 1, 2], [0.3, 0.7, 0.9]
        assert spearman(a, b) == pytest.approx(brute_force_spearman(a, b), abs=1e-12)

    def test_exhaustive_small_vectors_with_ties(self):
        # all integer label patterns up to relabeling for n <= 6, crossed with
        # a fixed counterpart that has ties of its own
        for n in range(2, 7):
            partner = [(i % 3) + 0.5 * (i % 2) for i in range(n)]
            if len(set(partner)) < 2:
                partner[0] += 7.0
            for pattern in itertools.product(range(3), repeat=n):
                if len(set(pattern)) < 2:
                    continue  # zero variance is an error case, checked separately
                got = spearman(list(pattern), partner)
                want = brute_force_spearman(list(pattern), partner)
                assert got == pytest.approx(want, abs=1e-12), (pattern, partner)

    def test_zero_variance_raises(self):
        with pytest.raises(ValueError, match="undefined correlation"):
            spearman([1, 1, 1], [1, 2, 3])
        with pytest.raises(ValueError, match="undefined correlation"):
            spearman([1, 2, 3], [5, 5, 5])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            spearman([1, 2], [1, 2, 3])

    @given(st.lists(st.integers(-50, 50), min_size=3, max_size=12, unique=True),
           st.randoms(use_true_random=False))
    @settings(max_examples=60, deadline=None)
    def test_monotone_transform_invariance(self, xs, rnd):
        xs = [float(x) for x in xs]
        ys = list(xs)
        rnd.shuffle(ys)
        if len(set(average_ranks(ys))) < 2:
            return
        base = spearman(xs, ys)
        assert spearman(np.exp(np.asarray(xs) / 25.0), ys) == pytest.approx(base, abs=1e-12)
        assert spearman(3.0 * np.asarray(xs) + 11.0, ys) == pytest.approx(base, abs=1e-12)
        assert spearman(ys, xs) == pytest.approx(base, abs=1e-12)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 0, 2], [1, 0, 2]) == 1.0

    def test_none_correct(self):
        assert accuracy([1, 1], [0, 0]) == 0.0

    def test_half_correct(self):
        assert accuracy([0, 1, 0, 1], [0, 1, 1, 0]) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            accuracy([], [])
