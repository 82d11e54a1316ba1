import numpy as np
import pytest

from slicedrnn.slicing import SliceConfig, build_plan
from slicedrnn.tensor import SeededRng
from slicedrnn.text import make_toy_corpus
from slicedrnn.training import (
    AdamState,
    ClassifierHead,
    TrainConfig,
    adam_update,
    batch_loss_and_grads,
    build_model,
    evaluate_accuracy,
    model_parameters,
    nll_loss,
    predict,
    predicted_label,
    restore_params,
    train,
)


def toy_model(corpus, vocab, T, n, k, hidden=12, embed_dim=16, seed=0):
    plan = build_plan(SliceConfig(T=T, n=n, k=k))
    return build_model(vocab.size, corpus.classes, plan, hidden, embed_dim, seed)


class TestPredict:
    def test_zero_head_is_uniform(self):
        head = ClassifierHead.zeros(4, 3)
        np.testing.assert_allclose(predict(head, np.ones(3)), [0.25] * 4)

    def test_bias_gap_two_classes(self):
        head = ClassifierHead(W_F=np.zeros((2, 3)), b_F=np.array([10.0, 0.0]))
        p = predict(head, np.zeros(3))
        assert p[0] == pytest.approx(0.9999546, abs=1e-6)
        assert p[1] == pytest.approx(4.54e-5, abs=1e-6)

    def test_tie_breaks_to_lowest_index(self):
        head = ClassifierHead(W_F=np.zeros((3, 2)), b_F=np.array([1.0, 1.0, 1.0]))
        assert predicted_label(predict(head, np.zeros(2))) == 0

    def test_shape_check(self):
        from slicedrnn.errors import DimensionError

        with pytest.raises(DimensionError):
            predict(ClassifierHead.zeros(2, 3), np.zeros(4))


class TestNllLoss:
    def test_uniform_five_classes(self):
        loss, _ = nll_loss(np.full(5, 0.2), 3)
        assert loss == pytest.approx(np.log(5.0), abs=1e-12)

    def test_confident_correct_prediction(self):
        loss, _ = nll_loss(np.array([0.0, 1.0, 0.0]), 1)
        assert loss == 0.0

    def test_dlogits_sums_to_zero(self):
        rng = SeededRng(70)
        from slicedrnn.tensor import softmax

        for _ in range(5):
            p = softmax(rng.uniform(-3, 3, (6,)))
            _, dlogits = nll_loss(p, 2)
            assert abs(dlogits.sum()) < 1e-12

    def test_dlogits_matches_finite_differences(self):
        from slicedrnn.tensor import softmax

        rng = SeededRng(71)
        logits = rng.uniform(-2, 2, (5,))
        label = 3
        _, dlogits = nll_loss(softmax(logits), label)
        eps = 1e-6
        for i in range(5):
            up, down = logits.copy(), logits.copy()
            up[i] += eps
            down[i] -= eps
            numeric = (
                -np.log(softmax(up)[label]) + np.log(softmax(down)[label])
            ) / (2 * eps)
            assert abs(dlogits[i] - numeric) < 1e-7

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nll_loss(np.full(3, 1 / 3), 3)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        state = AdamState.for_params(params)
        before = params["w"].copy()
        adam_update(state, params, {"w": np.zeros(3)})
        assert np.array_equal(params["w"], before)

    def test_first_step_magnitude_is_alpha_sign(self):
        params = {"w": np.zeros(3)}
        state = AdamState.for_params(params)
        g = np.array([0.5, -2.0, 1e-3])
        adam_update(state, params, {"w": g})
        np.testing.assert_allclose(np.abs(params["w"]), state.alpha, rtol=1e-4)
        assert np.array_equal(np.sign(params["w"]), -np.sign(g))

    def test_shape_mismatch_rejected(self):
        from slicedrnn.errors import DimensionError

        params = {"w": np.zeros(3)}
        state = AdamState.for_params(params)
        with pytest.raises(DimensionError):
            adam_update(state, params, {"w": np.zeros(4)})

    def test_identical_seeds_identical_trajectories(self):
        def run():
            rng = SeededRng(72)
            params = {"w": rng.uniform(-1, 1, (4,))}
            state = AdamState.for_params(params)
            for step in range(10):
                grad = rng.uniform(-1, 1, (4,))
                adam_update(state, params, {"w": grad})
            return params["w"]

        assert np.array_equal(run(), run())


class TestTrainLoop:
    def test_one_step_reduces_loss_on_learnable_batch(self):
        corpus, vocab = make_toy_corpus(80, docs=60, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)
        ids = np.array([doc.ids for doc in corpus.train[:20]])
        labels = np.array([doc.label for doc in corpus.train[:20]])
        params = model_parameters(model)
        adam = AdamState.for_params(params, alpha=0.01)
        loss_before, grads = batch_loss_and_grads(model, ids, labels)
        assert np.isfinite(loss_before) and loss_before >= 0
        adam_update(adam, params, grads)
        loss_after, _ = batch_loss_and_grads(model, ids, labels)
        assert loss_after < loss_before

    def test_initial_loss_is_ln_classes(self):
        corpus, vocab = make_toy_corpus(81, docs=40, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)  # head starts at zero
        ids = np.array([doc.ids for doc in corpus.train[:10]])
        labels = np.array([doc.label for doc in corpus.train[:10]])
        loss, _ = batch_loss_and_grads(model, ids, labels)
        assert loss == pytest.approx(np.log(corpus.classes), abs=1e-12)

    def test_deterministic_rerun(self):
        corpus, vocab = make_toy_corpus(82, docs=50, T=16)
        cfg = TrainConfig(epochs=2, batch_size=16, seed=9)

        def run():
            model = toy_model(corpus, vocab, T=16, n=4, k=1)
            result = train(model, corpus, cfg)
            return result, model_parameters(model)

        first, params_first = run()
        second, params_second = run()
        for a, b in zip(first.log, second.log):
            assert a.train_loss == b.train_loss
            assert a.val_acc == b.val_acc
        for name in params_first:
            assert np.array_equal(params_first[name], params_second[name]), name

    def test_best_checkpoint_restorable(self):
        corpus, vocab = make_toy_corpus(83, docs=50, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)
        result = train(model, corpus, TrainConfig(epochs=3, batch_size=16, seed=4))
        assert 0 <= result.best_epoch < 3
        assert result.best_val_acc == max(stats.val_acc for stats in result.log)
        restore_params(model, result.best_params)
        acc = evaluate_accuracy(model, corpus.val)
        assert acc == pytest.approx(result.best_val_acc)

    def test_learns_small_keyword_corpus(self):
        corpus, vocab = make_toy_corpus(84, docs=300, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)
        result = train(model, corpus, TrainConfig(epochs=5, batch_size=16, seed=1, alpha=0.01))
        assert result.best_val_acc >= 0.85

    def test_epoch_log_line_format(self):
        corpus, vocab = make_toy_corpus(85, docs=40, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)
        result = train(model, corpus, TrainConfig(epochs=1, batch_size=16, seed=2))
        fields = result.log[0].line().split("\t")
        assert fields[0] == "0"
        assert len(fields) == 4

    def test_partial_final_batch_is_kept(self):
        corpus, vocab = make_toy_corpus(86, docs=40, T=16)  # 32 train docs
        model = toy_model(corpus, vocab, T=16, n=4, k=1)
        # batch 20 -> one full batch of 20 plus a partial batch of 12;
        # adam step counter proves both batches were consumed
        params = model_parameters(model)
        adam = AdamState.for_params(params)
        ids = np.array([doc.ids for doc in corpus.train])
        labels = np.array([doc.label for doc in corpus.train])
        for start in range(0, 32, 20):
            loss, grads = batch_loss_and_grads(model, ids[start : start + 20],
                                               labels[start : start + 20])
            adam_update(adam, params, grads)
        assert adam.t == 2

    def test_empty_split_rejected(self):
        corpus, vocab = make_toy_corpus(87, docs=40, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)
        corpus.val.clear()
        with pytest.raises(ValueError):
            train(model, corpus, TrainConfig(epochs=1))

    def test_accuracy_tie_breaks_to_lowest_index(self):
        corpus, vocab = make_toy_corpus(88, docs=40, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)  # zero head: all ties
        share_label_zero = np.mean([doc.label == 0 for doc in corpus.val])
        assert evaluate_accuracy(model, corpus.val) == pytest.approx(share_label_zero)

    def test_padding_row_stays_zero_through_training(self):
        corpus, vocab = make_toy_corpus(89, docs=50, T=16)
        model = toy_model(corpus, vocab, T=16, n=4, k=1)
        train(model, corpus, TrainConfig(epochs=2, batch_size=16, seed=3))
        assert not model.embed[0].any()
