import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semapower import radio


def naive_rates(alloc, gains, assoc, noise):
    n, c = len(alloc), len(alloc[0])
    out = []
    for i in range(n):
        b = assoc[i]
        total = 0.0
        for ch in range(c):
            interf = 0.0
            for j in range(n):
                if j != i:
                    interf += alloc[j][ch] * gains[j][b]
            total += math.log2(1.0 + alloc[i][ch] * gains[i][b] / (interf + noise))
        out.append(total)
    return out


def random_instance(rng, n=None, c=None, b=None):
    n = n or int(rng.integers(1, 7))
    c = c or int(rng.integers(1, 4))
    b = b or int(rng.integers(1, 4))
    gains = rng.uniform(1e-4, 3e-3, size=(n, b))
    alloc = rng.choice([0.0, 5.0, 10.0], size=(n, c))
    return alloc, gains, radio.associate_bs(gains)


class TestPathGain:
    def test_vertical_distance(self):
        assert radio.path_gain((0, 0, 10), (0, 0, 0), 2) == pytest.approx(0.01, rel=1e-15)

    def test_three_four_five(self):
        assert radio.path_gain((0, 3, 4), (0, 0, 0), 2) == pytest.approx(0.04, rel=1e-15)

    def test_alpha_zero(self):
        assert radio.path_gain((1, 2, 3), (40, -5, 0), 0) == 1.0

    def test_coincident(self):
        with pytest.raises(ValueError, match="coincident positions"):
            radio.path_gain((1, 1, 1), (1, 1, 1))

    def test_table_matches_scalar(self):
        u = np.array([[10, 20, 20], [50, 50, 20]])
        b = np.array([[25, 50, 0], [75, 50, 0]])
        table = radio.gain_table(u, b)
        for i in range(2):
            for k in range(2):
                assert table[i, k] == pytest.approx(radio.path_gain(u[i], b[k]), rel=1e-14)


class TestAssociation:
    def test_argmax(self):
        assert radio.associate_bs(np.array([[0.1, 0.3]]), 0) == 1

    def test_tie_lowest_index(self):
        assert radio.associate_bs(np.array([[0.2, 0.2]]), 0) == 0

    def test_single_bs(self):
        assert radio.associate_bs(np.array([[0.5]]), 0) == 0


class TestSinrAndRates:
    def test_single_uav_sinr(self):
        assert radio.sinr(0, 0, [[10.0]], [[0.01]], [0], 1e-9) == pytest.approx(1e8, rel=1e-12)

    def test_zero_power_sinr(self):
        assert radio.sinr(0, 0, [[0.0], [10.0]], [[0.01], [0.01]], [0, 0], 1e-9) == 0.0

    def test_symmetric_pair_sinr(self):
        s = radio.sinr(0, 0, [[10.0], [10.0]], [[0.01], [0.01]], [0, 0], 1e-12)
        assert s == pytest.approx(1.0, rel=1e-9)

    def test_single_rate(self):
        r = radio.rates([[10.0]], [[0.01]], [0], 1e-9)
        assert r[0] == pytest.approx(math.log2(1 + 1e8), rel=1e-13)
        assert r[0] == pytest.approx(26.5754, abs=1e-4)

    def test_zero_powers(self):
        alloc = np.zeros((3, 2))
        gains = np.full((3, 1), 1e-3)
        assert np.all(radio.rates(alloc, gains, [0, 0, 0], 1e-9) == 0.0)

    def test_symmetric_pair_rate(self):
        r = radio.rates([[10.0], [10.0]], [[0.01], [0.01]], [0, 0], 1e-12)
        assert r == pytest.approx([1.0, 1.0], rel=1e-9)

    def test_interference_measured_at_own_bs(self):
        # UAV 1 is served by BS 1; UAV 0's interference uses its gain to BS 1
        gains = np.array([[0.3, 0.05], [0.1, 0.2]])
        alloc = np.array([[5.0], [10.0]])
        assoc = radio.associate_bs(gains)
        assert list(assoc) == [0, 1]
        expected = 10.0 * 0.2 / (5.0 * 0.05 + 1e-9)
        assert radio.sinr(1, 0, alloc, gains, assoc, 1e-9) == pytest.approx(expected, rel=1e-14)

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            radio.rates([[1.0]], [[1.0]], [0], 0.0)

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            alloc, gains, assoc = random_instance(rng)
            got = radio.rates(alloc, gains, assoc, 1e-9)
            ref = naive_rates(alloc.tolist(), gains.tolist(), assoc.tolist(), 1e-9)
            np.testing.assert_allclose(got, ref, rtol=1e-12, atol=0)

    def test_batched_allocations(self):
        rng = np.random.default_rng(1)
        alloc, gains, assoc = random_instance(rng, n=3, c=2, b=2)
        batch = np.stack([alloc, alloc * 0.5, np.zeros_like(alloc)])
        got = radio.rates(batch, gains, assoc, 1e-9)
        for k in range(3):
            np.testing.assert_allclose(got[k], radio.rates(batch[k], gains, assoc, 1e-9), rtol=1e-15)

    def test_rate_zero_iff_silent(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            alloc, gains, assoc = random_instance(rng)
            r = radio.rates(alloc, gains, assoc, 1e-9)
            assert np.all(r >= 0)
            np.testing.assert_array_equal(r == 0, alloc.sum(axis=1) == 0)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), k=st.floats(1e-3, 1e3))
def test_sinr_scale_invariance(seed, k):
    rng = np.random.default_rng(seed)
    alloc, gains, assoc = random_instance(rng)
    a = radio.sinr_matrix(alloc, gains, assoc, 1e-9)
    b = radio.sinr_matrix(alloc * k, gains, assoc, 1e-9 * k)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_monotone_in_own_power(seed):
    rng = np.random.default_rng(seed)
    alloc, gains, assoc = random_instance(rng)
    i = int(rng.integers(alloc.shape[0]))
    c = int(rng.integers(alloc.shape[1]))
    bumped = alloc.copy()
    bumped[i, c] += float(rng.uniform(0.1, 10.0))
    before = radio.rates(alloc, gains, assoc, 1e-9)
    after = radio.rates(bumped, gains, assoc, 1e-9)
    assert after[i] >= before[i]
    others = np.arange(len(before)) != i
    assert np.all(after[others] <= before[others])
