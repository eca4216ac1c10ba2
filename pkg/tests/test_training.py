import math

import numpy as np
import pytest

from weakseg import training
from weakseg.model import backward, forward
from weakseg.pseudolabel import masked_labels
from weakseg.training import (
    Adam,
    NumericalError,
    TrainConfig,
    TrainState,
    alignment_loss,
    classification_loss,
    instance_step,
    pseudo_label,
    select_threshold,
    train,
)
from helpers import full_loss_fd_check, perturbed_model, small_splits
from oracles import central_diff, rel_err


class TestClassificationLoss:
    def test_values(self):
        assert classification_loss(0.5, 1) == pytest.approx(0.693147, abs=1e-6)
        assert classification_loss(0.1, 0) == pytest.approx(0.105361, abs=1e-6)

    def test_clamped(self):
        assert classification_loss(1 - 1e-7, 1) == pytest.approx(1e-7, rel=1e-6)


class TestAlignmentLoss:
    def _patch(self, monkeypatch, pos_cost, neg_cost, T):
        """Make soft-DTW return fixed totals so only the hinge arithmetic is exercised."""

        def fake_forward(costs, gamma):
            is_pos = costs[0, 0] < 1.0  # pos label [1] against scores near one
            return (pos_cost if is_pos else neg_cost) * T, None

        monkeypatch.setattr(training.dtw, "sdtw_forward", fake_forward)
        monkeypatch.setattr(training.dtw, "sdtw_backward", lambda c, ws: np.ones_like(c))

    def test_inactive_hinge(self, monkeypatch):
        self._patch(monkeypatch, 0.2, 0.9, 4)
        v, g = alignment_loss(np.full(4, 0.9), [1], [0], 0.5, 0.1)
        assert v == 0.0
        assert np.all(g == 0)

    def test_active_hinge(self, monkeypatch):
        self._patch(monkeypatch, 0.9, 0.2, 4)
        v, _ = alignment_loss(np.full(4, 0.9), [1], [0], 0.5, 0.1)
        assert v == pytest.approx(1.2)

    def test_both_zero_is_skipped(self):
        v, g = alignment_loss(np.full(6, 0.3), [0, 0], [0, 0], 0.5, 0.1)
        assert v == 0.0 and not g.any()

    def test_real_values_match_definition(self):
        s = np.array([0.1, 0.8, 0.9, 0.2, 0.1, 0.15])
        pos, neg = np.array([0, 1, 0]), np.zeros(3, dtype=int)
        v, _ = alignment_loss(s, pos, neg, 0.5, 0.1)
        from weakseg import dtw

        vp = dtw.sdtw_forward(dtw.build_cost_matrix(pos, s), 0.1)[0]
        vn = dtw.sdtw_forward(dtw.build_cost_matrix(neg, s), 0.1)[0]
        assert v == pytest.approx(max(0.0, vp / 6 - vn / 6 + 0.5), abs=1e-15)

    def test_too_long(self):
        with pytest.raises(ValueError):
            alignment_loss(np.full(2, 0.5), [0, 1, 0], [0, 0, 0], 0.5, 0.1)

    @pytest.mark.parametrize("y", [0, 1])
    def test_gradient_on_w_matches_finite_differences(self, y):
        rng = np.random.default_rng(y)
        m = perturbed_model(3, D=2, d=3, n=1)
        x = rng.normal(size=(2, 10))
        pos, neg = masked_labels([0, 1, 0], y)
        beta = 2.0  # large margin keeps the hinge active

        def f(w):
            saved = m.anomaly_weight.copy()
            m.anomaly_weight[:] = w
            v = alignment_loss(forward(m, x)[1], pos, neg, beta, 0.1)[0]
            m.anomaly_weight[:] = saved
            return v

        _, scores, tape = forward(m, x)
        v, g = alignment_loss(scores, pos, neg, beta, 0.1)
        assert v > 0
        analytic = backward(m, tape, g, 0.0).anomaly_weight
        fd = central_diff(f, m.anomaly_weight.copy(), 1e-6)
        assert rel_err(analytic, fd) < 1e-3


class TestEndToEndGradient:
    def test_one_layer_T8_L2(self):
        rng = np.random.default_rng(0)
        m = perturbed_model(0, D=2, d=3, n=1)
        x = rng.normal(size=(2, 8))
        cfg = TrainConfig(L=2, tau=0.5, beta=2.0, gamma=0.1)
        rep, err = full_loss_fd_check(m, x, 1, cfg)
        assert err < 1e-3
        assert rep.alignment > 0

    def test_branches_add_up(self):
        rng = np.random.default_rng(1)
        m = perturbed_model(1)
        x = rng.normal(size=(2, 16))
        cfg = TrainConfig(L=4, tau=0.3, beta=2.0, gamma=0.1)
        _, total, _ = instance_step(m, x, 1, cfg)
        _, cls_only, _ = instance_step(m, x, 1, cfg, use_alignment=False)
        _, scores, tape = forward(m, x)
        pos, neg = masked_labels(pseudo_label(m, tape, cfg.L, cfg.tau), 1)
        _, g_loc = alignment_loss(scores, pos, neg, cfg.beta, cfg.gamma)
        align_only = backward(m, tape, g_loc, 0.0)
        np.testing.assert_allclose(total.flat(), (cls_only + align_only).flat(), rtol=1e-12, atol=1e-15)


class TestAdam:
    def test_zero_learning_rate(self):
        p = [np.array([1.0, -2.0]), np.array([[0.5]])]
        before = [a.copy() for a in p]
        opt = Adam(p, 0.0)
        opt.step(p, [np.array([3.0, 1.0]), np.array([[2.0]])])
        for a, b in zip(p, before):
            np.testing.assert_array_equal(a, b)

    def test_first_step_moves_by_lr(self):
        p = [np.array([1.0, -2.0])]
        Adam(p, 0.1).step(p, [np.array([5.0, -0.3])])
        # bias-corrected first step is lr * sign(g) up to eps
        np.testing.assert_allclose(p[0], [0.9, -1.9], atol=1e-8)

    def test_state_round_trip(self):
        p = [np.zeros(3)]
        opt = Adam(p, 0.01)
        opt.step(p, [np.ones(3)])
        opt2 = Adam([np.zeros(3)], 0.01)
        opt2.load_state_dict(opt.state_dict())
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m[0], opt.m[0])


class TestSelectThreshold:
    def test_perfect_split(self):
        sel = select_threshold([0.2, 0.8], [0, 1])
        assert sel.tau_star == pytest.approx(0.5) and sel.validation_f1 == 1.0

    def test_inverted(self):
        sel = select_threshold([0.9, 0.1], [0, 1])
        assert sel.validation_f1 == pytest.approx(2 / 3)
        assert sel.tau_star < 0.1

    def test_exhaustive(self):
        rng = np.random.default_rng(0)
        s = rng.uniform(size=15)
        y = rng.integers(0, 2, size=15)
        sel = select_threshold(s, y)
        best = 0.0
        for c in np.concatenate([[-1], s]):
            p = s >= c
            tp = np.sum(p & (y == 1))
            f1 = 2 * tp / (2 * tp + np.sum(p & (y == 0)) + np.sum(~p & (y == 1)))
            best = max(best, f1)
        assert sel.validation_f1 == pytest.approx(best)

    def test_single_class(self):
        sel = select_threshold([0.2, 0.3], [0, 0])
        assert sel.tau_star > 0.3 and sel.warning


class TestConfig:
    @pytest.mark.parametrize("field,value", [("tau", 0.0), ("tau", 1.0), ("gamma", 0.0), ("beta", -1.0),
                                             ("L", 0), ("batch_size", 0), ("pooling", "sum")])
    def test_rejects(self, field, value):
        with pytest.raises(ValueError):
            TrainConfig(**{field: value}).validate()

    def test_defaults(self):
        c = TrainConfig()
        assert (c.L, c.tau, c.beta, c.gamma, c.patience) == (16, 0.5, 0.5, 0.1, 20)


QUICK = dict(L=4, max_epochs=3, batch_size=4, learning_rate=1e-2)


class TestTrainLoop:
    def test_deterministic(self):
        sp = small_splits(0)
        results = []
        for _ in range(2):
            m = perturbed_model(5, scale=0.0, n=3)
            results.append(train(m, sp["train"], sp["valid"], TrainConfig(seed=4, **QUICK)))
        for a, b in zip(results[0].model.parameters(), results[1].model.parameters()):
            np.testing.assert_array_equal(a, b)
        assert results[0].threshold == results[1].threshold

    def test_history_finite(self):
        sp = small_splits(1)
        res = train(perturbed_model(1, scale=0.0), sp["train"], sp["valid"], TrainConfig(**QUICK))
        assert len(res.history) == 3
        for r in res.history:
            assert all(math.isfinite(v) for v in (r.classification, r.alignment, r.total))
            assert r.total == r.classification + r.alignment
            assert 0 <= r.validation_f1 <= 1

    def test_resume_matches_uninterrupted(self):
        sp = small_splits(2)
        full = train(perturbed_model(2, scale=0.0), sp["train"], sp["valid"], TrainConfig(seed=1, **QUICK))
        cfg2 = TrainConfig(seed=1, **{**QUICK, "max_epochs": 2})
        part = train(perturbed_model(2, scale=0.0), sp["train"], sp["valid"], cfg2)
        state = TrainState.from_dict(part.state.to_dict())
        resumed = train(perturbed_model(2, scale=0.0), sp["train"], sp["valid"], TrainConfig(seed=1, **QUICK), state=state)
        assert [r.epoch for r in resumed.history] == [1, 2, 3]
        for a, b in zip(full.model.parameters(), resumed.model.parameters()):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(full.state.last_params, resumed.state.last_params):
            np.testing.assert_array_equal(a, b)

    def test_nan_aborts(self, monkeypatch):
        sp = small_splits(0)
        monkeypatch.setattr(training, "classification_loss", lambda s, y: float("nan"))
        with pytest.raises(NumericalError, match="non-finite loss"):
            train(perturbed_model(0, scale=0.0), sp["train"], sp["valid"], TrainConfig(**QUICK))

    def test_empty_split(self):
        sp = small_splits(0)
        from weakseg.series import Dataset

        with pytest.raises(ValueError, match="empty"):
            train(perturbed_model(0), sp["train"], Dataset([], [], split_tag="valid"), TrainConfig(**QUICK))

    def test_dimension_mismatch(self):
        sp = small_splits(0)
        with pytest.raises(ValueError, match="dimension mismatch"):
            train(perturbed_model(0, D=3), sp["train"], sp["valid"], TrainConfig(**QUICK))

    def test_loss_decreases(self):
        sp = small_splits(3)
        cfg = TrainConfig(L=4, max_epochs=15, batch_size=4, learning_rate=1e-2, seed=0)
        res = train(perturbed_model(3, scale=0.0, n=3), sp["train"], sp["valid"], cfg)
        assert res.history[-1].classification < res.history[0].classification
