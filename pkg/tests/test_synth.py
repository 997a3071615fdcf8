"""Synthetic calibration data and toy-network initialization."""

import numpy as np
import pytest

from quantsim.synth import (
    GenConfig,
    default_model_spec,
    gen_data,
    init_model,
    load_data,
    sample_steps,
)


class TestSampleSteps:
    def test_flat_stream_moments(self):
        cfg = GenConfig(T=4, N=2048, C=8, sigma_base=1.5, gamma=0.0, outlier_prob=0.0, seed=3)
        steps = sample_steps(cfg)
        assert len(steps) == 4
        for x in steps:
            assert x.shape == (2048, 8)
            assert abs(float(x.std()) - 1.5) <= 0.05 * 1.5
            assert abs(float(x.mean())) <= 0.05

    def test_drift_doubles_late_stddev(self):
        cfg = GenConfig(T=10, N=4096, C=4, sigma_base=1.0, gamma=1.0, outlier_prob=0.0, seed=5)
        steps = sample_steps(cfg)
        early = float(steps[0].std())  # sigma = 1 + 1/10
        late = float(steps[-1].std())  # sigma = 2
        assert abs(late - 2.0) <= 0.10 * 2.0
        assert abs(late / early - 2.0 / 1.1) <= 0.10 * (2.0 / 1.1)

    def test_unit_outlier_scale_is_noop(self):
        a = sample_steps(GenConfig(T=3, N=64, C=4, outlier_prob=1.0, outlier_scale=1.0, seed=11))
        b = sample_steps(GenConfig(T=3, N=64, C=4, outlier_prob=0.0, outlier_scale=4.0, seed=11))
        for xa, xb in zip(a, b):
            np.testing.assert_array_equal(xa, xb)

    def test_outliers_widen_range_in_every_channel(self):
        base = GenConfig(T=1, N=4096, C=6, outlier_prob=0.0, outlier_scale=16.0, seed=7)
        spiked = GenConfig(T=1, N=4096, C=6, outlier_prob=0.02, outlier_scale=16.0, seed=7)
        x0 = sample_steps(base)[0]
        x1 = sample_steps(spiked)[0]
        assert np.all(np.abs(x1).max(axis=0) > np.abs(x0).max(axis=0))

    def test_deterministic(self):
        cfg = GenConfig(T=2, N=32, C=4, seed=9)
        for xa, xb in zip(sample_steps(cfg), sample_steps(cfg)):
            np.testing.assert_array_equal(xa, xb)

    def test_validation(self):
        with pytest.raises(ValueError, match=">= 1"):
            GenConfig(T=0, N=1, C=1)
        with pytest.raises(ValueError, match="outlier_prob"):
            GenConfig(T=1, N=1, C=1, outlier_prob=1.5)
        with pytest.raises(ValueError, match="outlier_scale"):
            GenConfig(T=1, N=1, C=1, outlier_scale=0.5)
        with pytest.raises(ValueError, match="sigma_base"):
            GenConfig(T=1, N=1, C=1, sigma_base=0.0)


class TestGenLoadData:
    def test_round_trip(self, tmp_path):
        cfg = GenConfig(T=3, N=16, C=4, seed=13)
        names = gen_data(cfg, tmp_path)
        assert names == ["act_t1.tns", "act_t2.tns", "act_t3.tns"]
        assert (tmp_path / "manifest.json").exists()
        back_cfg, steps = load_data(tmp_path)
        assert back_cfg == cfg
        for x, y in zip(sample_steps(cfg), steps):
            np.testing.assert_array_equal(x, y)

    def test_unwritable_path(self):
        with pytest.raises(OSError):
            gen_data(GenConfig(T=1, N=2, C=2), "/proc/nope/data")


class TestDefaultSpec:
    def test_shape(self):
        spec = default_model_spec()
        assert spec.T == 10
        assert len(spec.blocks) == 2
        for blk in spec.blocks:
            assert len(blk.layers) == 3
            assert [l.act for l in blk.layers] == ["silu", "silu", "none"]
            assert all(l.in_dim == 32 and l.out_dim == 32 and l.bias for l in blk.layers)

    def test_custom_dims(self):
        spec = default_model_spec(T=4, width=8, blocks=3, layers_per_block=2)
        assert len(spec.blocks) == 3
        assert [l.act for l in spec.blocks[0].layers] == ["silu", "none"]


class TestInitModel:
    def test_reproducible_and_seed_sensitive(self):
        spec = default_model_spec(T=2, width=8, blocks=2, layers_per_block=2)
        a = init_model(spec, 1)
        b = init_model(spec, 1)
        c = init_model(spec, 2)
        np.testing.assert_array_equal(a.weights[0][0], b.weights[0][0])
        assert not np.array_equal(a.weights[0][0], c.weights[0][0])

    def test_row_spread_leaves_unsaturated_rows(self):
        from quantsim.scaling import wd_plan

        spec = default_model_spec(T=2, width=32, blocks=1, layers_per_block=1)
        m = init_model(spec, 42)
        plan = wd_plan(m.weights[0][0])
        # the log-uniform row magnitudes should leave most rows room to grow
        assert np.mean(plan.s > 1.0) > 0.3

    def test_biases_follow_spec(self):
        spec = default_model_spec(T=2, width=4, blocks=1, layers_per_block=2)
        m = init_model(spec, 0)
        assert m.biases[0][0].shape == (4,)
        assert np.abs(m.biases[0][0]).max() < 0.1

    def test_validation(self):
        spec = default_model_spec(T=2, width=4, blocks=1, layers_per_block=1)
        with pytest.raises(ValueError, match="row_scale"):
            init_model(spec, 0, row_scale_lo=0.0)
