import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from framelab import policies as pol
from framelab.classifier import (REDUNDANCY_PENALIZED, GeneratorConfig, SyntheticVideo, classify_clip,
                                 confidence_matrix, generate_corpus, generate_video, make_classifier)
from framelab.core import InvalidArgumentError
from framelab.sampler import (MSE, RANKING, LossSetup, MomentumSGD, SamplerModel, TrainConfig,
                              TrainingDivergedError, cosine_lr, forward, infer, init_model,
                              label_guidance_loss, make_heldout, evaluate_sampler, mse_loss,
                              pca_projection, ranking_loss, total_loss, train)
from oracles import central_difference, relative_error

G = GeneratorConfig()
SPEC = make_classifier(REDUNDANCY_PENALIZED, G.C, G.D)


class TestForward:
    def test_identical_frames_uniform_importance(self):
        model = init_model(G.D, G.C, 16, 0)
        model.view_noise = 0.0
        f = np.random.default_rng(0).standard_normal(G.D)
        v = SyntheticVideo(np.tile(f, (7, 1)), 0, np.ones(7, bool), 0.0, 0, G.C)
        np.testing.assert_allclose(forward(model, v).importance, 1 / 7, atol=1e-15)

    def test_single_frame(self):
        v = generate_video(GeneratorConfig(T=1))
        assert forward(init_model(G.D, G.C, 8, 1), v).importance.tolist() == [1.0]

    def test_normalized(self):
        model = init_model(G.D, G.C, 32, 2)
        for v in generate_corpus(G, 10, 0):
            fp = forward(model, v)
            assert abs(fp.importance.sum() - 1) < 1e-9
            assert abs(fp.video_prediction.sum() - 1) < 1e-9
            assert fp.frame_logits.shape == (v.T, G.C)

    def test_video_prediction_averages_logits(self):
        model = init_model(G.D, G.C, 8, 3)
        fp = forward(model, generate_video(G))
        e = np.exp(fp.frame_logits.mean(axis=0))
        np.testing.assert_allclose(fp.video_prediction, e / e.sum(), rtol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            forward(init_model(8, G.C, 4, 0), generate_video(G))


class TestRankingLoss:
    def test_example(self):
        loss, _ = ranking_loss([0.7, 0.3], [0.2, 0.8], gamma=0.1)
        assert loss == pytest.approx(0.7, abs=1e-15)

    def test_respected_order_is_free(self):
        loss, grad = ranking_loss([0.5, 0.3, 0.2], [3.0, 2.0, 1.0], gamma=0.1)
        assert loss == 0.0 and not grad.any()

    def test_equal_targets_have_no_pairs(self):
        loss, grad = ranking_loss([0.25] * 4, [4.0, -1.0, 0.3, 2.0], gamma=0.5)
        assert loss == 0.0 and not grad.any()

    def test_brute_force_sum(self):
        rng = np.random.default_rng(5)
        p, s = rng.random(8), rng.standard_normal(8)
        expected = sum(max(0.05 - (s[i] - s[j]), 0.0) for i in range(8) for j in range(8) if p[i] > p[j])
        assert ranking_loss(p, s, 0.05)[0] == pytest.approx(expected, abs=1e-12)

    def test_printed_sign_variant(self):
        loss, grad = ranking_loss([0.7, 0.3], [0.2, 0.8], gamma=0.1, printed_sign=True)
        assert loss == 0.0
        loss, grad = ranking_loss([0.7, 0.3], [0.8, 0.2], gamma=0.1, printed_sign=True)
        assert loss == pytest.approx(0.7) and grad.tolist() == [1.0, -1.0]

    def test_kink_takes_zero_branch(self):
        loss, grad = ranking_loss([0.7, 0.3], [0.1, 0.0], gamma=0.1)
        assert loss == 0.0 and not grad.any()

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            ranking_loss([0.1, 0.2], [0.1, 0.2, 0.3])
        with pytest.raises(InvalidArgumentError):
            ranking_loss([0.1, 0.2], [0.1, 0.2], gamma=-1)

    @given(st.lists(st.integers(0, 16), min_size=2, max_size=12), st.data())
    def test_invariances(self, ticks, data):
        targets = [k / 16 for k in ticks]
        n = len(targets)
        scores = np.array(data.draw(st.lists(st.integers(-40, 40), min_size=n, max_size=n))) / 8
        c = data.draw(st.integers(-40, 40)) / 4
        base = ranking_loss(targets, scores)[0]
        assert ranking_loss(targets, scores + c)[0] == pytest.approx(base, abs=1e-9)
        t = np.asarray(targets)
        assert ranking_loss(np.exp(3 * t) - 7, scores)[0] == base


class TestLabelGuidance:
    def test_examples(self):
        assert label_guidance_loss([0.0, 1.0, 0.0], 1)[0] == 0.0
        assert label_guidance_loss([0.25] * 4, 2)[0] == pytest.approx(math.log(4))
        assert label_guidance_loss([math.exp(-1), 1 - math.exp(-1)], 0)[0] == pytest.approx(1.0)

    def test_gradient(self):
        _, g = label_guidance_loss([0.2, 0.5, 0.3], 1)
        np.testing.assert_allclose(g, [0.2, -0.5, 0.3])

    def test_bad_label(self):
        with pytest.raises(InvalidArgumentError):
            label_guidance_loss([0.5, 0.5], 2)


def test_mse_gradient():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(6))
    s = rng.standard_normal(6)
    _, g = mse_loss(p, s)
    num = central_difference(lambda: mse_loss(p, s)[0], s)
    assert relative_error(g, num) < 1e-6


class TestTotalLoss:
    def setup_method(self):
        self.video = generate_video(GeneratorConfig(seed=21))
        self.model = init_model(G.D, G.C, 16, 4)
        self.teacher = confidence_matrix(SPEC, self.video)

    def parts(self):
        fp = forward(self.model, self.video)
        p = np.exp(self.teacher.max(axis=1))
        r, _ = ranking_loss(p / p.sum(), fp.scores, 0.05)
        lg, _ = label_guidance_loss(fp.video_prediction, self.video.label)
        return r, lg

    def test_endpoints(self):
        r, lg = self.parts()
        assert total_loss(self.model, self.video, self.teacher, LossSetup(lam=1.0))[0] == r
        assert total_loss(self.model, self.video, self.teacher, LossSetup(lam=0.0))[0] == lg

    def test_linear_in_lambda(self):
        r, lg = self.parts()
        for lam in np.linspace(0, 1, 7):
            got = total_loss(self.model, self.video, self.teacher, LossSetup(lam=lam))[0]
            assert got == pytest.approx(lam * r + (1 - lam) * lg, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("lam", [0.0, 0.99, 1.0])
    @pytest.mark.parametrize("kind", [RANKING, MSE])
    @pytest.mark.parametrize("mode", list(pol.AggregationMode))
    def test_gradient_check(self, lam, kind, mode):
        setup = LossSetup(lam=lam, importance_loss=kind, mode=mode)
        _, grads = total_loss(self.model, self.video, self.teacher, setup)
        for name, param in self.model.params().items():
            num = central_difference(lambda: total_loss(self.model, self.video, self.teacher, setup)[0], param)
            assert relative_error(grads[name], num) <= 1e-5, name

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            total_loss(self.model, self.video, self.teacher[:-1])
        with pytest.raises(InvalidArgumentError):
            LossSetup(lam=1.5)


class TestOptimizer:
    def test_zero_gradient_is_identity(self):
        model = init_model(G.D, G.C, 8, 0)
        before = model.copy()
        opt = MomentumSGD(model, momentum=0.9, weight_decay=0.0)
        opt.step(model, {k: np.zeros_like(v) for k, v in model.params().items()}, lr=0.1)
        for k in model.params():
            assert np.array_equal(model.params()[k], before.params()[k])

    def test_momentum_accumulates(self):
        model = init_model(2, 2, 2, 0)
        w0 = model.b_c.copy()
        opt = MomentumSGD(model, momentum=0.5, weight_decay=0.0)
        g = {k: np.zeros_like(v) for k, v in model.params().items()}
        g["b_c"] = np.ones(2)
        opt.step(model, g, lr=1.0)
        opt.step(model, g, lr=1.0)
        np.testing.assert_allclose(model.b_c, w0 - 1.0 - 1.5)

    def test_decoupled_weight_decay(self):
        model = init_model(2, 2, 2, 0)
        w0 = model.W_c.copy()
        opt = MomentumSGD(model, momentum=0.9, weight_decay=0.5)
        opt.step(model, {k: np.zeros_like(v) for k, v in model.params().items()}, lr=0.1)
        np.testing.assert_allclose(model.W_c, w0 * (1 - 0.05))

    def test_cosine_schedule(self):
        epochs = 50
        lrs = [cosine_lr(1e-3, e, epochs) for e in range(epochs)]
        assert lrs[0] == 1e-3
        assert lrs[-1] <= 1e-3 * 1e-3
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        assert cosine_lr(1e-3, 0, 1) == 1e-3


def test_checkpoint_round_trip(tmp_path):
    model = init_model(G.D, G.C, 12, 9, corpus=generate_corpus(G, 5, 0))
    path = tmp_path / "ckpt.json"
    model.save(path)
    loaded = SamplerModel.load(path)
    for name, value in {"projection": model.projection, **model.params()}.items():
        assert np.array_equal(getattr(loaded, name), value)
    assert loaded.to_dict() == model.to_dict()


def test_pca_projection_is_orthonormal_and_deterministic():
    corpus = generate_corpus(G, 20, 1)
    a, b = pca_projection(corpus, 8), pca_projection(corpus, 8)
    assert np.array_equal(a, b)
    np.testing.assert_allclose(a.T @ a, np.eye(8), atol=1e-12)


class TestTrain:
    def test_zero_epochs(self):
        model = init_model(G.D, G.C, 8, 0)
        res = train(model, generate_corpus(G, 3, 0), SPEC, TrainConfig(epochs=0))
        assert res.log == []
        assert all(np.array_equal(res.model.params()[k], v) for k, v in model.params().items())

    def test_deterministic(self):
        corpus = generate_corpus(G, 12, 0)
        cfg = TrainConfig(epochs=3, batch_size=4, seed=5)
        a = train(init_model(G.D, G.C, 8, 0), corpus, SPEC, cfg)
        b = train(init_model(G.D, G.C, 8, 0), corpus, SPEC, cfg)
        assert a.log_csv() == b.log_csv()
        assert a.model.to_dict() == b.model.to_dict()

    def test_nan_aborts_with_context(self):
        model = init_model(G.D, G.C, 8, 0)
        model.W_f[:] = np.nan
        with pytest.raises(TrainingDivergedError, match="epoch 0, batch 0"):
            train(model, generate_corpus(G, 4, 0), SPEC, TrainConfig(epochs=1, batch_size=2))

    def test_loss_decreases(self):
        corpus = generate_corpus(G, 200, 0, tag="train")
        res = train(init_model(G.D, G.C, 64, 0, corpus=corpus), corpus, SPEC, TrainConfig())
        assert res.log[-1].train_loss < res.log[0].train_loss

    def test_bad_config(self):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(learning_rate=0)
        with pytest.raises(InvalidArgumentError):
            TrainConfig(lam=2)
        with pytest.raises(ValueError):
            TrainConfig(mode="mean")


class TestInfer:
    def test_one_classifier_call(self):
        spec = make_classifier(REDUNDANCY_PENALIZED, G.C, G.D)
        v = generate_video(G)
        res = infer(init_model(G.D, G.C, 8, 0), v, 6, spec)
        assert res.classifier_calls == 1 and spec.calls.value == 1
        assert res.clip_confidence == classify_clip(spec, v, res.selected)[v.label]

    def test_all_frames(self):
        v = generate_video(G)
        res = infer(init_model(G.D, G.C, 8, 0), v, v.T, SPEC)
        assert res.clip_confidence == pol.run_policy(pol.ALL_FRAMES, SPEC, v, v.T).clip_confidence

    def test_teacher_ordering_reproduces_semi_optimal(self):
        # with D_h >= T the hidden activations have full row rank, so least
        # squares can make the importance head output the teacher scores
        v = generate_video(GeneratorConfig(seed=4))
        model = init_model(G.D, G.C, 64, 0)
        mode = pol.AggregationMode.MAX_OVER_CLASSES
        teacher = mode.reduce(confidence_matrix(SPEC, v), v.label)
        hidden = forward(model, v).hidden
        coef, *_ = np.linalg.lstsq(np.hstack([hidden, np.ones((v.T, 1))]), teacher, rcond=None)
        model.w_s, model.b_s = coef[:-1], coef[-1:]
        np.testing.assert_allclose(forward(model, v).scores, teacher, atol=1e-10)
        expected = pol.semi_optimal_policy(SPEC, v, 4, mode).selected
        assert infer(model, v, 4, SPEC).selected == expected

    def test_bad_n(self):
        with pytest.raises(InvalidArgumentError):
            infer(init_model(G.D, G.C, 8, 0), generate_video(G), 11, SPEC)

    def test_untrained_model_is_near_chance(self):
        corpus = generate_corpus(G, 500, 11)
        mode = pol.AggregationMode.MAX_OVER_CLASSES
        fids = []
        for seed in range(5):
            held = make_heldout(SPEC, corpus[seed * 100:(seed + 1) * 100], 6, mode)
            fids.append(evaluate_sampler(init_model(G.D, G.C, 64, seed), SPEC, held)[0])
        assert np.mean(fids) == pytest.approx(0.6, abs=0.05)
