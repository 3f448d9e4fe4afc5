import numpy as np
import pytest

from sphere_grouping.errors import InputError, MissingCache, ShapeMismatch, ZeroColumn
from sphere_grouping.gbms import KernelConfig, gbms_unroll, gbms_unroll_backward
from sphere_grouping.loss import InstanceLabeling, LossConfig, instance_weights
from sphere_grouping.synthetic import GaussianMixSpec, ShapeSceneSpec, gen_1d_gaussians, gen_instance_scene
from sphere_grouping.toy import (
    FixedRegressor,
    LossMode,
    PerPixelNet,
    ToyTrainConfig,
    evaluate_net,
    loop_weights,
    mean_shift_modes,
    net_backward,
    net_forward,
    toy_1d_descent,
    toy_1d_gradient,
    train_toy_instances,
)

from conftest import central_diff, rel_err

REG = FixedRegressor()


def three_bump_data(seed=0):
    return gen_1d_gaussians(GaussianMixSpec.three_bumps(), seed)


class TestLoopWeights:
    def test_modes(self):
        np.testing.assert_array_equal(loop_weights(3, LossMode.ALL_LOOPS), [1, 1, 1, 1])
        np.testing.assert_array_equal(loop_weights(3, "final_loop_only"), [0, 0, 0, 1])


class TestRegressor:
    def test_targets(self):
        assert REG(3.0) == pytest.approx(1.0)
        assert REG(5.0) == pytest.approx(2.0)
        np.testing.assert_allclose(REG.target_embedding([1, 2]), [3.0, 5.0])


class TestToy1D:
    def test_optimum_is_stationary(self):
        x = np.repeat([3.0, 5.0], 10)
        y = np.repeat([1, 2], 10)
        for gbms in (None, KernelConfig(loops=5)):
            res = toy_1d_descent(x, y, REG, ToyTrainConfig(gbms=gbms))
            for state in res.trajectory:
                np.testing.assert_allclose(state, x, atol=1e-12)
            assert res.final_mse == pytest.approx(0.0, abs=1e-20)

    @pytest.mark.parametrize("mode", list(LossMode))
    @pytest.mark.parametrize("loops", [1, 3])
    def test_gradient_finite_differences(self, mode, loops):
        x, y = three_bump_data(1)
        idx = np.arange(0, 300, 15)
        x, y = x[idx], y[idx]
        cfg = ToyTrainConfig(gbms=KernelConfig(loops=loops), loss_mode=mode)
        _, g, _ = toy_1d_gradient(x, y, REG, cfg)
        numeric = central_diff(lambda v: toy_1d_gradient(v, y, REG, cfg)[0], x)
        assert rel_err(g, numeric) < 1e-5

    def test_no_gbms_gradient(self):
        x, y = three_bump_data(2)
        cfg = ToyTrainConfig(gbms=None)
        _, g, _ = toy_1d_gradient(x, y, REG, cfg)
        np.testing.assert_allclose(g, 2 * cfg.loss_scale * REG.a * (REG(x) - y))

    def test_three_modes_without_grouping(self):
        x, y = three_bump_data()
        res = toy_1d_descent(x, y, REG, ToyTrainConfig(gbms=None))
        assert len(mean_shift_modes(res.trajectory[-1], 0.2)) == 3

    def test_two_clusters_on_target_with_grouping(self):
        x, y = three_bump_data()
        res = toy_1d_descent(x, y, REG, ToyTrainConfig(gbms=KernelConfig(loops=5)))
        assert np.max(np.abs(res.outputs[-1] - REG.target_embedding(y))) < 0.1
        modes = mean_shift_modes(res.outputs[-1], 0.2)
        np.testing.assert_allclose(np.sort(modes), [3.0, 5.0], atol=0.1)

    def test_trajectory_length(self):
        x, y = three_bump_data()
        res = toy_1d_descent(x, y, REG, ToyTrainConfig(steps=7))
        assert len(res.trajectory) == 8 and res.losses.shape == (8,)

    def test_shape_check(self):
        with pytest.raises(ShapeMismatch):
            toy_1d_descent(np.zeros(3), np.zeros(4), REG, ToyTrainConfig())

    def test_config_validation(self):
        with pytest.raises(InputError):
            ToyTrainConfig(steps=0)


class TestMeanShiftModes:
    def test_two_bumps(self, rng):
        x = np.concatenate([rng.normal(0, 0.05, 50), rng.normal(2, 0.05, 50)])
        np.testing.assert_allclose(np.sort(mean_shift_modes(x, 0.2)), [0, 2], atol=0.05)

    def test_small_groups_ignored(self, rng):
        x = np.concatenate([rng.normal(0, 0.05, 98), [5.0, 5.01]])
        assert len(mean_shift_modes(x, 0.2, min_fraction=0.05)) == 1


class TestNet:
    def test_zero_net(self):
        net = PerPixelNet(np.zeros((3, 2)), np.zeros(3), np.zeros((4, 3)), np.zeros(4))
        with pytest.raises(ZeroColumn):
            net_forward(net, np.ones((2, 5)))

    def test_identity(self, rng):
        net = PerPixelNet(np.eye(4), np.zeros(4), np.eye(4), np.zeros(4))
        F = rng.uniform(0.1, 1.0, (4, 6))
        np.testing.assert_allclose(net_forward(net, F), F / np.linalg.norm(F, axis=0))

    def test_unit_outputs(self, rng):
        net = PerPixelNet.init(5, 16, 8, seed=3)
        X = net_forward(net, rng.standard_normal((5, 30)))
        np.testing.assert_allclose(np.linalg.norm(X, axis=0), 1.0, atol=1e-12)

    def test_zero_upstream(self, rng):
        net = PerPixelNet.init(3, 4, 2, seed=0)
        X, cache = net_forward(net, rng.standard_normal((3, 7)), return_cache=True)
        for g in net_backward(net, cache, np.zeros_like(X)).values():
            assert np.all(g == 0)

    def test_dead_unit(self, rng):
        net = PerPixelNet.init(3, 4, 2, seed=0)
        net.b1[:] = 10.0
        net.b1[2] = -100.0
        X, cache = net_forward(net, rng.standard_normal((3, 7)), return_cache=True)
        g = net_backward(net, cache, rng.standard_normal(X.shape))
        assert np.all(g["W1"][2] == 0) and g["b1"][2] == 0

    def test_finite_differences(self, rng):
        net = PerPixelNet.init(3, 5, 4, seed=1)
        net.b1 = 0.3 * rng.standard_normal(5)
        net.b2 = 0.3 * rng.standard_normal(4)
        F = rng.standard_normal((3, 9))
        G = rng.standard_normal((4, 9))
        X, cache = net_forward(net, F, return_cache=True)
        assert np.all(np.abs(cache.pre_hidden) > 1e-4)
        grads = net_backward(net, cache, G)
        for name, value in net.params.items():
            def f(v, name=name):
                p = dict(net.params)
                p[name] = v
                return np.sum(G * net_forward(PerPixelNet(**p), F))
            assert rel_err(grads[name], central_diff(f, value.copy())) < 1e-5, name

    def test_through_grouping(self, rng):
        net = PerPixelNet.init(3, 6, 4, seed=2)
        net.b1 = 0.3 * rng.standard_normal(6)
        F = rng.standard_normal((3, 8))
        lab = InstanceLabeling(np.array([0, 0, 0, 1, 1, 2, 2, 2]))
        w = instance_weights(lab)
        kcfg, lcfg = KernelConfig(beta=2.0, loops=2), LossConfig(alpha=0.5, sample_size=8)
        X, cache = net_forward(net, F, return_cache=True)
        traj = gbms_unroll(X, kcfg, lab, w, lcfg)
        grads = net_backward(net, cache, gbms_unroll_backward(traj).dX)

        def f(v):
            p = dict(net.params)
            p["W2"] = v
            return gbms_unroll(net_forward(PerPixelNet(**p), F), kcfg, lab, w, lcfg).total_loss

        assert rel_err(grads["W2"], central_diff(f, net.W2.copy())) < 1e-4

    def test_missing_cache(self):
        net = PerPixelNet.init(2, 2, 2)
        with pytest.raises(MissingCache):
            net_backward(net, None, np.zeros((2, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            net_forward(PerPixelNet.init(3, 2, 2), np.zeros((4, 2)))
        with pytest.raises(ShapeMismatch):
            PerPixelNet(np.zeros((3, 2)), np.zeros(2), np.zeros((2, 3)), np.zeros(2))

    def test_copy_is_independent(self):
        net = PerPixelNet.init(2, 3, 2)
        other = net.copy()
        other.W1 += 1
        assert not np.allclose(net.W1, other.W1)


def small_scenes(count, seed0, shapes=1):
    return [gen_instance_scene(ShapeSceneSpec(width=16, height=16, num_shapes=shapes, seed=seed0 + s)) for s in range(count)]


class TestTraining:
    def test_zero_lr_constant_loss(self):
        data = small_scenes(1, 0)
        cfg = ToyTrainConfig(steps=5, lr=0.0, gbms=KernelConfig(loops=2), loss=LossConfig(sample_size=10_000))
        res = train_toy_instances(data, PerPixelNet.init(5, 8, 4), cfg)
        np.testing.assert_allclose(res.loss_curve, res.loss_curve[0])

    def test_input_net_untouched(self):
        net = PerPixelNet.init(5, 8, 4)
        before = net.W1.copy()
        train_toy_instances(small_scenes(2, 0), net, ToyTrainConfig(steps=3, lr=1.0, gbms=None))
        np.testing.assert_array_equal(net.W1, before)

    def test_deterministic(self):
        data = small_scenes(2, 0)
        cfg = ToyTrainConfig(steps=6, lr=1.0, gbms=KernelConfig(loops=2), loss=LossConfig(sample_size=64))
        a = train_toy_instances(data, PerPixelNet.init(5, 8, 4), cfg)
        b = train_toy_instances(data, PerPixelNet.init(5, 8, 4), cfg)
        np.testing.assert_array_equal(a.loss_curve, b.loss_curve)

    def test_final_loop_curve(self):
        data = small_scenes(1, 0)
        cfg = ToyTrainConfig(steps=3, lr=0.0, gbms=KernelConfig(loops=2), loss_mode=LossMode.FINAL_LOOP_ONLY)
        res = train_toy_instances(data, PerPixelNet.init(5, 8, 4), cfg)
        np.testing.assert_allclose(res.loss_curve, res.final_loop_curve)

    def test_empty_dataset(self):
        with pytest.raises(InputError):
            train_toy_instances([], PerPixelNet.init(5, 4, 4), ToyTrainConfig())

    def test_all_loops_reaches_thresholds_first(self):
        from sphere_grouping.synthetic import gen_scene_set

        data = gen_scene_set(20, 1)
        curves = {}
        for mode in LossMode:
            cfg = ToyTrainConfig(steps=150, lr=1.0, gbms=KernelConfig(beta=6.0, loops=5), loss_mode=mode,
                                 loss=LossConfig(sample_size=256))
            res = train_toy_instances(data, PerPixelNet.init(5, 32, 8), cfg)
            curves[mode] = np.convolve(res.final_loop_curve, np.ones(20) / 20, "valid")

        def first(curve, level):
            hit = np.flatnonzero(curve <= level)
            return hit[0] if hit.size else np.inf

        for level in np.linspace(0.003, 0.008, 11):
            assert first(curves[LossMode.ALL_LOOPS], level) <= first(curves[LossMode.FINAL_LOOP_ONLY], level)

    def test_two_instance_training(self):
        cfg = ToyTrainConfig(steps=500, lr=3.0, gbms=KernelConfig(beta=6.0, loops=3),
                             loss=LossConfig(alpha=0.5, sample_size=128))
        res = train_toy_instances(small_scenes(10, 0), PerPixelNet.init(5, 16, 4), cfg)
        ev = evaluate_net(res.net, small_scenes(5, 100), cfg.gbms)
        assert ev.mean_best_iou >= 0.9
