"""Attention-map locality and sparsity metrics."""

import math

import numpy as np
import pytest

from dilatevit import metrics
from dilatevit.errors import ValidationError
from dilatevit.swda import SwdaConfig, swda_forward
from dilatevit.tensor import softmax


def identity_map(h, w):
    return metrics.from_dense(np.eye(h * w), h, w)


def uniform_map(h, w):
    n = h * w
    return metrics.from_dense(np.full((n, n), 1.0 / n), h, w)


def swda_map(h, w, cfg, seed=0):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((h, w, cfg.d_k)) for _ in range(3))
    _, weights = swda_forward(q, k, v, cfg, return_weights=True)
    return metrics.from_swda_weights(weights, cfg)


class TestLocalityMass:
    def test_identity_attention_radius_zero(self):
        _, mean = metrics.locality_mass(identity_map(4, 5), 0)
        assert mean == 1.0

    def test_uniform_attention_full_radius(self):
        amap = uniform_map(4, 4)
        _, mean = metrics.locality_mass(amap, 3)
        assert mean == pytest.approx(1.0)

    @pytest.mark.parametrize("rate", [1, 2, 3])
    def test_swda_mass_inside_tap_radius(self, rate):
        cfg = SwdaConfig(w=3, r=rate, d_k=3, edge_mode="masked")
        amap = swda_map(7, 7, cfg)
        radius = (cfg.w - 1) * cfg.r // 2
        # exactness: every key outside the tap radius carries weight 0.0,
        # so the in-radius mass IS the full row mass
        from dilatevit.metrics import _chebyshev_table

        outside = _chebyshev_table(7, 7) > radius
        assert np.all(amap.weights[outside] == 0.0)
        per_query, mean = metrics.locality_mass(amap, radius)
        assert np.array_equal(per_query, amap.weights.sum(axis=1))
        assert np.abs(per_query - 1.0).max() < 1e-12
        assert mean == pytest.approx(1.0, abs=1e-12)
        if radius > 0:
            _, tighter = metrics.locality_mass(amap, radius - 1)
            assert tighter < 1.0

    def test_monotone_in_radius_and_saturates(self):
        rng = np.random.default_rng(1)
        h = w = 5
        amap = metrics.from_dense(softmax(rng.standard_normal((25, 25))), h, w)
        means = [metrics.locality_mass(amap, r)[1] for r in range(max(h, w))]
        assert all(b >= a for a, b in zip(means, means[1:]))
        assert means[max(h, w) - 1] == pytest.approx(1.0)

    def test_negative_radius_rejected(self):
        with pytest.raises(ValidationError):
            metrics.locality_mass(identity_map(2, 2), -1)


class TestSparsityProfile:
    def test_one_hot_rows(self):
        stats = metrics.sparsity_profile(identity_map(3, 3), 0.5)
        assert stats.mean_active_keys == 1.0
        assert stats.participation_ratio == pytest.approx(1.0)
        assert stats.entropy_nats == pytest.approx(0.0)

    def test_uniform_rows(self):
        n = 16
        stats = metrics.sparsity_profile(uniform_map(4, 4), 1.0 / (2 * n))
        assert stats.mean_active_keys == n
        assert stats.participation_ratio == pytest.approx(n)
        assert stats.entropy_nats == pytest.approx(math.log(n))

    def test_against_direct_summation_oracle(self):
        rng = np.random.default_rng(2)
        rows = softmax(rng.standard_normal((9, 9)) * 2.0)
        amap = metrics.from_dense(rows, 3, 3)
        stats = metrics.sparsity_profile(amap, 0.05)

        active, pr, ent = 0.0, 0.0, 0.0
        for row in rows:
            active += sum(1 for a in row if a > 0.05)
            pr += 1.0 / sum(a * a for a in row)
            ent += -sum(a * math.log(a) for a in row if a > 0)
        assert abs(stats.mean_active_keys - active / 9) < 1e-10
        assert abs(stats.participation_ratio - pr / 9) < 1e-10
        assert abs(stats.entropy_nats - ent / 9) < 1e-10

    def test_bounds_and_uniform_maximum(self):
        rng = np.random.default_rng(3)
        n = 25
        for _ in range(10):
            amap = metrics.from_dense(softmax(rng.standard_normal((n, n)) * 3), 5, 5)
            stats = metrics.sparsity_profile(amap, 0.01)
            assert 1.0 <= stats.participation_ratio <= n
            assert 0.0 <= stats.entropy_nats <= math.log(n) + 1e-12
        uni = metrics.sparsity_profile(uniform_map(5, 5), 0.01)
        assert uni.participation_ratio == pytest.approx(n)
        assert uni.entropy_nats == pytest.approx(math.log(n))

    @pytest.mark.parametrize("mode", ["zero_pad", "masked"])
    def test_swda_maps_never_exceed_window_keys(self, mode):
        for w, rate in ((3, 1), (3, 3), (5, 2)):
            cfg = SwdaConfig(w=w, r=rate, d_k=2, edge_mode=mode)
            amap = swda_map(8, 8, cfg, seed=w * rate)
            stats = metrics.sparsity_profile(amap, 1e-9)
            assert stats.mean_active_keys <= w * w
            assert stats.participation_ratio <= w * w

    def test_threshold_bounds(self):
        amap = identity_map(2, 2)
        with pytest.raises(ValidationError):
            metrics.sparsity_profile(amap, 0.0)
        with pytest.raises(ValidationError):
            metrics.sparsity_profile(amap, 1.0)


class TestValidation:
    def test_rejects_non_row_stochastic(self):
        bad = np.full((4, 4), 0.5)
        with pytest.raises(ValidationError, match="sum to 1"):
            metrics.from_dense(bad, 2, 2)

    def test_rejects_negative_weights(self):
        bad = np.eye(4)
        bad[0, 0] = -1.0
        bad[0, 1] = 2.0
        with pytest.raises(ValidationError, match="nonnegative"):
            metrics.from_dense(bad, 2, 2)

    def test_rejects_wrong_grid(self):
        with pytest.raises(ValidationError, match="grid"):
            metrics.from_dense(np.eye(4), 2, 3)

    def test_tolerates_small_row_sum_error(self):
        rows = np.eye(4) + 5e-5
        rows /= rows.sum(axis=1, keepdims=True)
        rows[0, 0] += 5e-5  # still within 1e-4
        metrics.from_dense(rows, 2, 2)
