import math

import numpy as np
import pytest

from exitbert.errors import ConfigError
from exitbert.optim import AdamW, RMSprop, SGD, adamw_step, make_optimizer, rmsprop_step, sgd_step
from exitbert.tensor import Tensor


class TestSgd:
    def test_zero_grad(self):
        assert sgd_step(1.5, 0.0, 0.1) == 1.5

    def test_worked(self):
        assert sgd_step(1.0, 0.5, 0.1) == pytest.approx(0.95, abs=1e-12)

    def test_affine_in_grad(self):
        w, g1, g2, lr = 2.0, 0.3, -1.1, 0.05
        two = sgd_step(sgd_step(w, g1, lr), g2, lr)
        assert two == pytest.approx(sgd_step(w, g1 + g2, lr), abs=1e-15)


class TestRmsprop:
    def test_zero_grad_decays(self):
        w, v = rmsprop_step(np.array(1.0), np.array(0.0), np.array(0.4), 0.1, gamma=0.9)
        assert w == 1.0 and v == pytest.approx(0.36, abs=1e-15)

    def test_first_step(self):
        w, v = rmsprop_step(0.0, 1.0, 0.0, 0.1, gamma=0.9, eps=0.0)
        assert v == pytest.approx(0.1, abs=1e-15)
        assert -w == pytest.approx(0.1 / math.sqrt(0.1), abs=1e-12)
        assert -w == pytest.approx(0.3162, abs=1e-4)

    @pytest.mark.parametrize("g", [1e-3, -2.0, 37.5])
    def test_sign_step(self, g):
        w, _ = rmsprop_step(0.0, g, 0.0, 0.2, gamma=0.0, eps=0.0)
        assert abs(w) == pytest.approx(0.2, abs=1e-12)


class TestAdamw:
    def test_no_grad_no_decay(self):
        w, m, v = adamw_step(1.0, 0.0, 0.0, 0.0, 1, 0.1, weight_decay=0.0)
        assert w == 1.0

    def test_decay_only(self):
        w, _, _ = adamw_step(1.0, 0.0, 0.0, 0.0, 1, 0.1, weight_decay=0.01)
        assert w == pytest.approx(0.999, abs=1e-12)

    @pytest.mark.parametrize("g", [0.5, -3.0])
    def test_first_step_is_sign(self, g):
        w, m, v = adamw_step(0.0, g, 0.0, 0.0, 1, 0.01, eps=1e-12)
        assert w == pytest.approx(-0.01 * math.copysign(1, g), abs=1e-12)

    def test_second_step_closed_form(self):
        b1, b2, lr = 0.9, 0.999, 0.01
        w, m, v = adamw_step(0.0, 1.0, 0.0, 0.0, 1, lr, (b1, b2), 0.0, 0.0)
        w, m, v = adamw_step(w, 3.0, m, v, 2, lr, (b1, b2), 0.0, 0.0)
        m_ref = b1 * (1 - b1) * 1 + (1 - b1) * 3
        v_ref = b2 * (1 - b2) * 1 + (1 - b2) * 9
        step = (m_ref / (1 - b1 ** 2)) / math.sqrt(v_ref / (1 - b2 ** 2))
        assert m == pytest.approx(m_ref, abs=1e-15) and v == pytest.approx(v_ref, abs=1e-15)
        assert w == pytest.approx(-lr - lr * step, abs=1e-12)


class TestOptimizerClasses:
    def params(self):
        return {"a": Tensor(np.ones(3), requires_grad=True),
                "b": Tensor(np.ones(2), requires_grad=True)}

    def test_masked_step(self):
        p = self.params()
        opt = AdamW(p, 0.1)
        p["a"].grad = np.ones(3)
        p["b"].grad = np.ones(2)
        opt.step(["a"])
        assert (p["b"].data == 1.0).all() and (p["a"].data < 1.0).all()
        assert opt.steps == {"a": 1}

    def test_skips_missing_grads(self):
        p = self.params()
        opt = SGD(p, 0.1)
        p["a"].grad = np.full(3, 2.0)
        opt.step()
        np.testing.assert_allclose(p["a"].data, 0.8)
        np.testing.assert_array_equal(p["b"].data, 1.0)

    def test_step_counts_increase(self):
        p = self.params()
        opt = RMSprop(p, 0.1)
        for _ in range(3):
            p["a"].grad = np.ones(3)
            opt.step()
        assert opt.steps["a"] == 3 and opt.v["a"].shape == (3,)

    def test_matches_rule(self):
        p = self.params()
        opt = RMSprop(p, 0.1, gamma=0.5, eps=0.0)
        p["a"].grad = np.array([1.0, -2.0, 0.5])
        opt.step(["a"])
        w, _ = rmsprop_step(np.ones(3), np.array([1.0, -2.0, 0.5]), np.zeros(3), 0.1, 0.5, 0.0)
        np.testing.assert_array_equal(p["a"].data, w)

    def test_clip(self):
        p = self.params()
        opt = SGD(p, 1.0, clip_norm=1.0)
        p["a"].grad = np.array([3.0, 0.0, 0.0])
        p["b"].grad = np.array([0.0, 4.0])
        opt.step()
        np.testing.assert_allclose(p["a"].data, [0.4, 1.0, 1.0])
        np.testing.assert_allclose(p["b"].data, [1.0, 0.2])

    def test_factory(self):
        p = self.params()
        assert isinstance(make_optimizer("rmsprop", p, 0.1), RMSprop)
        assert make_optimizer("adamw", p, 0.1).weight_decay == 0.01
        with pytest.raises(ConfigError):
            make_optimizer("lion", p, 0.1)
        with pytest.raises(ConfigError):
            SGD(p, 0.0)
