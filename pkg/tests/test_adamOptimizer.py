# tests/test_adamOptimizer.py
import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.adamOptimizer import AdamOptimizer
from src.errors import ShapeError
from src.loadConfig import Hyperparams
from src.snnNetwork import NetworkSpec, copy_network, init_network
from src.spatiotemporalBackprop import GradientSet


def random_grads(net, seed):
    rng = np.random.default_rng(seed)
    return GradientSet(
        dW=[rng.normal(size=layer.weights.shape) for layer in net.layers],
        dTh=[rng.normal(size=layer.thresholds.shape) for layer in net.layers],
    )


class TestAdamOptimizer(unittest.TestCase):

    def setUp(self):
        self.hp = Hyperparams()
        self.net = init_network(NetworkSpec((6, 4, 3)), self.hp, 7)

    def test_frozen_thresholds(self):
        hp = self.hp.replace(lr_th=0.0)
        net = init_network(NetworkSpec((6, 4, 3)), hp, 7)
        optimizer = AdamOptimizer(net)
        before = copy_network(net)
        for step in range(5):
            optimizer.step(net, random_grads(net, step))
        for now, start in zip(net.layers, before.layers):
            self.assertEqual(now.thresholds.tobytes(), start.thresholds.tobytes())
            self.assertFalse(np.array_equal(now.weights, start.weights))
        # moments are still tracked
        self.assertTrue(optimizer.m_th[0].any())

    def test_first_step_moves_by_learning_rate(self):
        optimizer = AdamOptimizer(self.net)
        before = copy_network(self.net)
        grads = random_grads(self.net, 1)
        optimizer.step(self.net, grads)
        for now, start, g in zip(self.net.layers, before.layers, grads.dW):
            delta = now.weights - start.weights
            np.testing.assert_array_equal(np.sign(delta), -np.sign(g))
            np.testing.assert_allclose(np.abs(delta), self.hp.lr_w, rtol=1e-4)
        for now, start, g in zip(self.net.layers, before.layers, grads.dTh):
            np.testing.assert_allclose(now.thresholds - start.thresholds, -self.hp.lr_th * np.sign(g), rtol=1e-4)

    def test_zero_gradients(self):
        optimizer = AdamOptimizer(self.net)
        optimizer.step(self.net, random_grads(self.net, 2))
        m_before = [m.copy() for m in optimizer.m_w]
        before = copy_network(self.net)
        optimizer.step(self.net, GradientSet.zeros_like(self.net))
        for m_now, m_then in zip(optimizer.m_w, m_before):
            np.testing.assert_allclose(m_now, 0.9 * m_then)
        # parameters still move while the first moment is non-zero
        self.assertFalse(np.array_equal(self.net.layers[0].weights, before.layers[0].weights))

        fresh = init_network(NetworkSpec((6, 4, 3)), self.hp, 7)
        untouched = copy_network(fresh)
        AdamOptimizer(fresh).step(fresh, GradientSet.zeros_like(fresh))
        for now, start in zip(fresh.layers, untouched.layers):
            np.testing.assert_array_equal(now.weights, start.weights)
            np.testing.assert_array_equal(now.thresholds, start.thresholds)

    def test_threshold_clamp(self):
        hp = self.hp.replace(lr_th=0.5, th_clamp_min=1.0)
        net = init_network(NetworkSpec((6, 4, 3)), hp, 7)
        grads = GradientSet.zeros_like(net)
        for g in grads.dTh:
            g[:] = 1.0
        optimizer = AdamOptimizer(net)
        for _ in range(3):
            optimizer.step(net, grads)
        for layer in net.layers:
            np.testing.assert_array_equal(layer.thresholds, 1.0)

    def test_clamp_skipped_for_baseline(self):
        hp = self.hp.replace(lr_th=0.0, th_init=0.5, th_clamp_min=1.0)
        net = init_network(NetworkSpec((6, 4, 3)), hp, 7)
        AdamOptimizer(net).step(net, random_grads(net, 1))
        for layer in net.layers:
            np.testing.assert_array_equal(layer.thresholds, 0.5)

    def test_deterministic(self):
        a = copy_network(self.net)
        b = copy_network(self.net)
        opt_a, opt_b = AdamOptimizer(a), AdamOptimizer(b)
        for step in range(3):
            opt_a.step(a, random_grads(a, step))
            opt_b.step(b, random_grads(b, step))
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weights, lb.weights)
            np.testing.assert_array_equal(la.thresholds, lb.thresholds)

    def test_state_round_trip(self):
        optimizer = AdamOptimizer(self.net)
        optimizer.step(self.net, random_grads(self.net, 3))
        restored = AdamOptimizer.from_state_arrays(self.net, optimizer.state_arrays())
        self.assertEqual(restored.k, 1)
        for key in ("m_w", "v_w", "m_th", "v_th"):
            for a, b in zip(getattr(optimizer, key), getattr(restored, key)):
                np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self):
        optimizer = AdamOptimizer(self.net)
        grads = GradientSet.zeros_like(self.net)
        grads.dW[0] = np.zeros((2, 2))
        with self.assertRaises(ShapeError):
            optimizer.step(self.net, grads)
        with self.assertRaises(ShapeError):
            optimizer.step(self.net, GradientSet(dW=grads.dW[:1], dTh=grads.dTh[:1]))
        other = init_network(NetworkSpec((5, 2)), self.hp, 1)
        with self.assertRaises(ShapeError):
            AdamOptimizer.from_state_arrays(other, optimizer.state_arrays())


if __name__ == '__main__':
    unittest.main()
