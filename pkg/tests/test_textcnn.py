"""Tests for the CNN classifier: forward pass, gradients, training, I/O.

The head gradient is checked against a central finite-difference oracle,
and the batched forward pass is checked against the single-document one.
"""

import numpy as np
import pytest

from textexplain.corpus import Document, EmbeddingTable, tokenize
from textexplain.textcnn import (
    CnnModel,
    DenseHead,
    FilterBank,
    ModelIOError,
    TrainConfig,
    TrainError,
    conv_features,
    encode_tokens,
    evaluate,
    forward,
    forward_many,
    head_forward,
    head_gradient,
    init_model,
    load_model,
    save_model,
    softmax,
    train,
)


def toy_table():
    """Four tokens in 2-d: 'good'=[1,0], 'bad'=[0,1], filler axes tiny."""
    return EmbeddingTable(["good", "bad", "the", "item"],
                          np.array([[1.0, 0.0], [0.0, 1.0],
                                    [0.1, 0.1], [0.05, 0.0]]))


def keyword_model():
    """Hand-built model that classifies by 'good' vs 'bad' presence."""
    table = toy_table()
    fb = FilterBank(sizes=[1], per_size=2,
                    weights=[np.array([[[1.0, 0.0]], [[0.0, 1.0]]])],
                    biases=[np.zeros(2)])
    head = DenseHead(w1=np.eye(2), b1=np.zeros(2),
                     w2=np.array([[0.0, 1.0], [1.0, 0.0]]), b2=np.zeros(2))
    return CnnModel(embedding=table, filters=fb, head=head,
                    classes=("negative", "positive"))


def random_model(seed=0, vocab=40, dim=8):
    rng = np.random.default_rng(seed)
    tokens = [f"w{i}" for i in range(vocab)]
    table = EmbeddingTable(tokens, rng.normal(size=(vocab, dim)))
    return init_model(table, ("a", "b"), sizes=(2, 3, 4), per_size=5,
                      hidden=7, seed=seed)


def random_docs(rng, n, vocab=40, classes=2):
    docs = []
    for i in range(n):
        words = [f"w{rng.integers(0, vocab)}"
                 for _ in range(rng.integers(1, 30))]
        docs.append(Document(id=f"r{i}", text=" ".join(words),
                             label=int(rng.integers(0, classes))))
    return docs


class TestForward:
    def test_hand_computed_max_and_span(self):
        # one size-2 filter over 4 tokens; position activations are
        # [0, 5, 3] by direct dot products, so v=[5] at start 1
        table = EmbeddingTable(["a", "b", "c", "d"],
                               np.array([[1.0, 0.0], [0.0, -1.0],
                                         [0.0, 5.0], [3.0, 0.0]]))
        fb = FilterBank(sizes=[2], per_size=1,
                        weights=[np.array([[[0.0, 0.0], [0.0, 1.0]]])],
                        biases=[np.zeros(1)])
        head = DenseHead(w1=np.eye(1), b1=np.zeros(1),
                         w2=np.eye(1), b2=np.zeros(1))
        model = CnnModel(table, fb, head, classes=("x",))
        pred = forward(model, ["a", "b", "c", "d"])
        np.testing.assert_allclose(pred.feature.v, [5.0])
        assert pred.feature.spans == [(1, 2)]

    def test_short_input_zero_padded(self):
        model = random_model()
        pred = forward(model, ["w0"])  # shorter than every filter size
        assert pred.feature.v.shape == (15,)
        for start, size in pred.feature.spans:
            assert start == 0 and size in (2, 3, 4)

    def test_empty_input_is_head_of_padded_zeros(self):
        model = random_model()
        pred = forward(model, [])
        # all-zero rows: activations are ReLU(bias) = 0 since biases start 0
        np.testing.assert_allclose(pred.feature.v, np.zeros(15))

    def test_softmax_symmetry(self):
        np.testing.assert_allclose(softmax(np.zeros(2)), [0.5, 0.5])

    def test_probabilities_sum_to_one(self):
        model = random_model()
        rng = np.random.default_rng(1)
        for doc in random_docs(rng, 20):
            pred = forward(model, tokenize(doc.text))
            assert abs(pred.p.sum() - 1.0) < 1e-9
            assert pred.predicted_class == int(np.argmax(pred.logits))
            assert pred.predicted_class == int(np.argmax(pred.p))

    def test_span_recompute_matches_pooled_value(self):
        model = random_model(seed=5)
        rng = np.random.default_rng(2)
        for doc in random_docs(rng, 30):
            seq = tokenize(doc.text)
            pred = forward(model, seq)
            ids = encode_tokens(model, seq)
            mat = model.embedding.matrix[ids]
            max_n = max(model.filters.sizes)
            if mat.shape[0] < max_n:
                mat = np.vstack([mat, np.zeros((max_n - mat.shape[0],
                                                mat.shape[1]))])
            for k, (start, size) in enumerate(pred.feature.spans):
                i = model.filters.sizes.index(size)
                c = k - i * model.filters.per_size
                window = mat[start:start + size]
                act = max(0.0, float(np.sum(window *
                                            model.filters.weights[i][c]) +
                                     model.filters.biases[i][c]))
                assert abs(act - pred.feature.v[k]) < 1e-9

    def test_batched_forward_matches_single(self):
        model = random_model(seed=3)
        rng = np.random.default_rng(4)
        docs = random_docs(rng, 25)
        id_lists = [encode_tokens(model, tokenize(d.text)) for d in docs]
        logits, v = forward_many(model, id_lists, batch_size=7)
        for i, d in enumerate(docs):
            single = forward(model, tokenize(d.text))
            np.testing.assert_allclose(logits[i], single.logits, atol=1e-9)
            np.testing.assert_allclose(v[i], single.feature.v, atol=1e-9)

    def test_long_input_truncated(self):
        model = random_model()
        many = ["w1"] * (model.max_tokens + 50)
        assert len(encode_tokens(model, many)) == model.max_tokens


class TestHeadGradient:
    def test_linear_case_returns_weight_row(self):
        model = keyword_model()
        v = np.array([2.0, 3.0])  # both hidden units active
        np.testing.assert_allclose(head_gradient(model, v, 0), [0.0, 1.0])
        np.testing.assert_allclose(head_gradient(model, v, 1), [1.0, 0.0])

    def test_dead_unit_contributes_zero(self):
        head = DenseHead(w1=np.array([[1.0, 0.0], [0.0, -1.0]]),
                         b1=np.zeros(2),
                         w2=np.array([[1.0, 1.0]]), b2=np.zeros(1))
        model = keyword_model()
        model.head = head
        # second unit pre-activation is -3 (dead), so only first passes
        np.testing.assert_allclose(head_gradient(model, np.array([2.0, 3.0]), 0),
                                   [1.0, 0.0])

    def test_matches_finite_differences(self):
        """Central differences as the oracle, away from ReLU kinks."""
        rng = np.random.default_rng(11)
        h = 1e-4
        checked = 0
        while checked < 100:
            k, hidden, classes = 6, 5, 3
            head = DenseHead(w1=rng.normal(size=(hidden, k)),
                             b1=rng.normal(size=hidden),
                             w2=rng.normal(size=(classes, hidden)),
                             b2=rng.normal(size=classes))
            v = rng.normal(size=k)
            z1 = head.w1 @ v + head.b1
            if np.min(np.abs(z1)) < 1e-2:  # too close to a kink
                continue
            j = int(rng.integers(0, classes))
            model = keyword_model()
            model.head = head
            grad = head_gradient(model, v, j)
            fd = np.zeros(k)
            for i in range(k):
                vp, vm = v.copy(), v.copy()
                vp[i] += h
                vm[i] -= h
                fd[i] = (head_forward(head, vp)[2][j] -
                         head_forward(head, vm)[2][j]) / (2 * h)
            denom = max(np.linalg.norm(fd), 1e-12)
            assert np.linalg.norm(grad - fd) / denom < 1e-4
            checked += 1


class TestTrain:
    def separable_docs(self):
        texts = {1: "good the item", 0: "bad the item"}
        return [Document(id=f"t{i}", text=texts[i % 2], label=i % 2)
                for i in range(20)]

    def test_loss_decreases_on_separable_toy_set(self):
        model = init_model(toy_table(), ("neg", "pos"), sizes=(1, 2),
                           per_size=4, hidden=6, seed=0)
        docs = self.separable_docs()
        _, history = train(model, docs, docs[:4],
                           TrainConfig(max_epochs=3, patience=5, seed=0,
                                       batch_size=4))
        losses = [h["train_loss"] for h in history]
        assert len(losses) == 3
        assert losses[0] > losses[1] > losses[2]

    def test_max_epochs_one_runs_exactly_one_epoch(self):
        model = init_model(toy_table(), ("neg", "pos"), sizes=(1, 2),
                           per_size=2, hidden=4, seed=0)
        docs = self.separable_docs()
        _, history = train(model, docs, docs[:4],
                           TrainConfig(max_epochs=1, seed=0))
        assert len(history) == 1

    def test_same_seed_gives_identical_weights(self):
        docs = self.separable_docs()

        def run():
            model = init_model(toy_table(), ("neg", "pos"), sizes=(1, 2),
                               per_size=4, hidden=6, seed=9)
            train(model, docs, docs[:6],
                  TrainConfig(max_epochs=4, seed=9, batch_size=8))
            return model

        a, b = run(), run()
        for pa, pb in zip(_params(a), _params(b)):
            np.testing.assert_array_equal(pa, pb)

    def test_embedding_frozen(self):
        model = init_model(toy_table(), ("neg", "pos"), sizes=(1, 2),
                           per_size=4, hidden=6, seed=0)
        before = model.embedding.matrix.copy()
        train(model, self.separable_docs(), self.separable_docs()[:4],
              TrainConfig(max_epochs=3, seed=0))
        np.testing.assert_array_equal(model.embedding.matrix, before)

    def test_early_stop_restores_best_epoch(self):
        rng = np.random.default_rng(0)
        docs = random_docs(rng, 40, vocab=4)  # noise labels: val loss jitters
        for d in docs:
            d.text = " ".join(["good", "bad", "the", "item"][i % 4]
                              for i in range(rng.integers(2, 8)))
        model = init_model(toy_table(), ("neg", "pos"), sizes=(1, 2),
                           per_size=3, hidden=4, seed=1)
        _, history = train(model, docs[:30], docs[30:],
                           TrainConfig(max_epochs=30, patience=2, seed=1,
                                       batch_size=8))
        val = [h["val_loss"] for h in history]
        best = min(val)
        # stopped within patience epochs of the best
        assert len(val) <= val.index(best) + 1 + 2
        from textexplain.textcnn import cross_entropy
        ids = [encode_tokens(model, tokenize(d.text)) for d in docs[30:]]
        labels = np.array([d.label for d in docs[30:]])
        np.testing.assert_allclose(cross_entropy(model, ids, labels), best,
                                   atol=1e-9)

    def test_empty_training_split_errors(self):
        model = init_model(toy_table(), ("neg", "pos"), sizes=(1,),
                           per_size=2, hidden=2, seed=0)
        with pytest.raises(TrainError):
            train(model, [], [], TrainConfig())


def _params(model):
    fb, head = model.filters, model.head
    return fb.weights + fb.biases + [head.w1, head.b1, head.w2, head.b2]


class TestEvaluate:
    def test_perfect_classifier_all_ones(self):
        model = keyword_model()
        docs = [Document("a", "good item", 1), Document("b", "bad item", 0),
                Document("c", "the good", 1), Document("d", "the bad", 0)]
        report = evaluate(model, docs)
        np.testing.assert_allclose(report.precision, 1.0)
        np.testing.assert_allclose(report.recall, 1.0)
        np.testing.assert_allclose(report.f1, 1.0)
        assert report.macro_f1 == 1.0 and report.micro == 1.0

    def test_degenerate_predictor_macro_third(self):
        # always predicts class 0 on balanced labels: macro-F1 = 1/3
        model = keyword_model()
        model.head = DenseHead(w1=np.zeros((2, 2)), b1=np.zeros(2),
                               w2=np.zeros((2, 2)), b2=np.array([1.0, 0.0]))
        docs = [Document("a", "good", 1), Document("b", "bad", 0),
                Document("c", "good", 1), Document("d", "bad", 0)]
        report = evaluate(model, docs)
        np.testing.assert_allclose(report.macro_f1, 1.0 / 3.0)

    def test_absent_class_warns_and_zero(self):
        model = keyword_model()
        docs = [Document("a", "good", 1), Document("b", "good", 1)]
        with pytest.warns(UserWarning, match="absent"):
            report = evaluate(model, docs)
        assert report.f1[0] == 0.0

    def test_report_text_has_per_class_and_average_rows(self):
        model = keyword_model()
        docs = [Document("a", "good", 1), Document("b", "bad", 0)]
        text = evaluate(model, docs).to_text()
        for needle in ("negative", "positive", "micro avg", "macro avg",
                       "Prec.", "Recall", "F1", "Support"):
            assert needle in text


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        model = random_model(seed=8)
        rng = np.random.default_rng(9)
        probes = [tokenize(d.text) for d in random_docs(rng, 10)]
        path = tmp_path / "model.npz"
        save_model(model, path)
        loaded = load_model(path)
        for seq in probes:
            a, b = forward(model, seq), forward(loaded, seq)
            np.testing.assert_array_equal(a.logits, b.logits)
            np.testing.assert_array_equal(a.p, b.p)
        assert loaded.classes == model.classes
        assert loaded.max_tokens == model.max_tokens

    def test_corrupted_file_errors(self, tmp_path):
        path = tmp_path / "model.npz"
        path.write_bytes(b"not a model at all")
        with pytest.raises(ModelIOError):
            load_model(path)

    def test_version_mismatch_errors(self, tmp_path):
        import json
        model = random_model()
        path = tmp_path / "model.npz"
        save_model(model, path)
        data = dict(np.load(path))
        cfg = json.loads(bytes(data["config"]).decode())
        cfg["format_version"] = 999
        data["config"] = np.frombuffer(json.dumps(cfg).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **data)
        with pytest.raises(ModelIOError, match="version"):
            load_model(path)

    def test_default_geometry_stored(self, tmp_path):
        import json
        rng = np.random.default_rng(0)
        table = EmbeddingTable([f"w{i}" for i in range(30)],
                               rng.normal(size=(30, 200)))
        model = init_model(table, ("negative", "positive"), seed=0)
        path = tmp_path / "model.npz"
        save_model(model, path)
        cfg = json.loads(bytes(np.load(path)["config"]).decode())
        assert cfg["sizes"] == [2, 3, 4]
        assert cfg["per_size"] == 50
        assert cfg["hidden"] == 150
