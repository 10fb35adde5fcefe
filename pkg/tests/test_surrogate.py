"""Tests for decision-tree extraction, pruning, correlation, and the
path-based local explanations.

The root split of CART is checked against an exhaustive enumeration of
all (feature, midpoint) candidates on small random datasets.
"""

import copy

import numpy as np
import pytest

from textexplain.corpus import Document, EmbeddingTable, tokenize
from textexplain.surrogate import (
    ExtractedTree,
    SurrogateError,
    SurrogateModel,
    TreeNode,
    _gini,
    build_feature_dataset,
    cart_train,
    correlate_features,
    dt_local_explain,
    extract_trees,
    fidelity,
    load_surrogate,
    measure_tree,
    prune,
    save_surrogate,
    surrogate_predict,
    tree_apply,
    tree_predict,
    tree_report,
)
from textexplain.textcnn import CnnModel, DenseHead, FilterBank, forward, init_model


def keyword_model():
    table = EmbeddingTable(["good", "bad", "the", "item"],
                           np.array([[1.0, 0.0], [0.0, 1.0],
                                     [0.1, 0.1], [0.05, 0.0]]))
    fb = FilterBank(sizes=[1], per_size=2,
                    weights=[np.array([[[1.0, 0.0]], [[0.0, 1.0]]])],
                    biases=[np.zeros(2)])
    head = DenseHead(w1=np.eye(2), b1=np.zeros(2),
                     w2=np.array([[0.0, 1.0], [1.0, 0.0]]), b2=np.zeros(2))
    return CnnModel(embedding=table, filters=fb, head=head,
                    classes=("negative", "positive"))


def keyword_docs(n=30):
    texts = {0: "bad the item", 1: "good the item"}
    return [Document(id=f"d{i}", text=texts[i % 2], label=i % 2)
            for i in range(n)]


def oracle_best_split(x, y, min_leaf):
    """Exhaustive enumeration of every (feature, midpoint) split."""
    n = len(y)
    parent = _gini(float(y.sum()), n)
    best = None
    for k in range(x.shape[1]):
        for thr_pair in sorted(set(zip(np.sort(x[:, k])[:-1],
                                       np.sort(x[:, k])[1:]))):
            if thr_pair[0] == thr_pair[1]:
                continue
            thr = (thr_pair[0] + thr_pair[1]) / 2.0
            mask = x[:, k] <= thr
            nl, nr = int(mask.sum()), int((~mask).sum())
            if nl < min_leaf or nr < min_leaf:
                continue
            g_l = _gini(float(y[mask].sum()), nl)
            g_r = _gini(float(y[~mask].sum()), nr)
            dec = parent - (nl / n) * g_l - (nr / n) * g_r
            cand = (dec, k, thr)
            if best is None or cand[0] > best[0]:
                best = cand
    return best


class TestCart:
    def test_gini_even_split(self):
        assert _gini(2, 4) == 0.5

    def test_one_dimensional_fixture(self):
        x = np.array([[0.1], [0.2], [0.8], [0.9]])
        y = np.array([0, 0, 1, 1])
        tree = cart_train(x, y, target_class=1, min_leaf=1, max_depth=5)
        root = tree.root
        assert not root.is_leaf
        assert root.feature == 0
        assert root.threshold == pytest.approx(0.5)
        assert root.left.is_leaf and root.left.label == 0
        assert root.right.is_leaf and root.right.label == 1

    def test_pure_input_single_leaf(self):
        x = np.array([[0.1], [0.5], [0.9]])
        tree = cart_train(x, np.array([1, 1, 1]), 0, min_leaf=1)
        assert tree.root.is_leaf and tree.root.label == 1
        assert tree.metadata == {"nodes": 1, "depth": 0, "leaves": 1}

    def test_root_split_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(60):
            n = int(rng.integers(3, 9))
            f = int(rng.integers(1, 4))
            x = rng.integers(0, 4, size=(n, f)).astype(np.float64) / 4.0
            y = rng.integers(0, 2, size=n)
            oracle = oracle_best_split(x, y, min_leaf=1)
            tree = cart_train(x, y, 0, min_leaf=1, max_depth=8)
            if oracle is None or oracle[0] <= 1e-15 or len(np.unique(y)) < 2:
                assert tree.root.is_leaf, trial
            else:
                assert not tree.root.is_leaf, trial
                assert tree.root.feature == oracle[1], trial
                assert tree.root.threshold == pytest.approx(oracle[2]), trial

    def test_min_leaf_respected(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(40, 3))
        y = (x[:, 0] > 0).astype(int)
        tree = cart_train(x, y, 0, min_leaf=5, max_depth=50)

        def check(node, x_sub):
            if node.is_leaf:
                assert len(x_sub) >= 5 or len(x_sub) == 0
                return
            mask = x_sub[:, node.feature] <= node.threshold
            check(node.left, x_sub[mask])
            check(node.right, x_sub[~mask])

        check(tree.root, x)

    def test_metadata_binary_tree_identity(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(60, 4))
        y = ((x[:, 0] + x[:, 1]) > 0).astype(int)
        tree = cart_train(x, y, 0, min_leaf=2)
        md = tree.metadata
        assert md == measure_tree(tree.root)
        assert md["leaves"] == (md["nodes"] + 1) // 2


class TestPrune:
    def test_optimal_tree_unchanged(self):
        x = np.array([[0.1], [0.2], [0.8], [0.9]])
        y = np.array([0, 0, 1, 1])
        tree = cart_train(x, y, 1, min_leaf=1)
        before = measure_tree(tree.root)
        prune(tree, x, y)
        assert measure_tree(tree.root) == before

    def test_redundant_split_collapsed(self):
        # both children predict `rest`: pruning must collapse the split
        left = TreeNode(counts=np.array([3.0, 1.0]), label=0)
        right = TreeNode(counts=np.array([2.0, 1.0]), label=0)
        root = TreeNode(counts=np.array([5.0, 2.0]), feature=0,
                        threshold=0.5, left=left, right=right)
        tree = ExtractedTree(target_class=0, root=root)
        x_val = np.array([[0.2], [0.8]])
        prune(tree, x_val, np.array([0, 0]))
        assert tree.root.is_leaf and tree.root.label == 0

    def test_validation_accuracy_never_drops(self):
        rng = np.random.default_rng(3)
        for trial in range(10):
            x = rng.normal(size=(80, 4))
            y = ((x[:, 0] > 0) ^ (rng.random(80) < 0.25)).astype(int)
            xv = rng.normal(size=(40, 4))
            yv = (xv[:, 0] > 0).astype(int)
            tree = cart_train(x, y, 0, min_leaf=1)  # deliberately overfit
            acc_before = float(np.mean(tree_predict(tree.root, xv) == yv))
            prune(tree, xv, yv)
            acc_after = float(np.mean(tree_predict(tree.root, xv) == yv))
            assert acc_after >= acc_before, trial

    def test_empty_validation_errors(self):
        tree = cart_train(np.array([[0.0], [1.0]]), np.array([0, 1]), 0,
                          min_leaf=1)
        with pytest.raises(SurrogateError):
            prune(tree, np.zeros((0, 1)), np.array([], dtype=int))


class TestCorrelateFeatures:
    def test_self_correlation(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(20, 2))
        v = np.stack([logits[:, 1], rng.normal(size=20)], axis=1)
        corr = correlate_features(v, logits)
        assert corr.rho[0, 1] == pytest.approx(1.0)
        assert corr.c[0] == 1
        assert not corr.flagged[0]

    def test_negated_logit_four_sample_fixture(self):
        logits = np.array([[1.0, 4.0], [2.0, 3.0], [3.0, 2.0], [4.0, 1.0]])
        v = np.array([[-1.0], [-2.0], [-3.0], [-4.0]])
        corr = correlate_features(v, logits)
        assert corr.rho[0, 0] == pytest.approx(-1.0)
        assert corr.rho[0, 1] == pytest.approx(1.0)
        assert corr.c[0] == 1

    def test_constant_feature_flagged(self):
        logits = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        v = np.array([[2.0], [2.0], [2.0]])
        corr = correlate_features(v, logits)
        assert corr.flagged[0]
        assert corr.c[0] == 0
        np.testing.assert_array_equal(corr.rho[0], [0.0, 0.0])

    def test_too_few_samples(self):
        with pytest.raises(SurrogateError):
            correlate_features(np.array([[1.0]]), np.array([[1.0]]))


class TestFeatureDataset:
    def test_cardinality_and_targets(self):
        model = keyword_model()
        docs = keyword_docs(10)
        v, targets, logits = build_feature_dataset(model, docs)
        assert v.shape == (10, 2) and len(targets) == 10
        np.testing.assert_array_equal(targets, logits.argmax(axis=1))

    def test_constant_predictor_all_same_target(self):
        model = keyword_model()
        model.head.b2 = np.array([5.0, 0.0])
        model.head.w2 = np.zeros((2, 2))
        _, targets, _ = build_feature_dataset(model, keyword_docs(6))
        np.testing.assert_array_equal(targets, 0)

    def test_empty_split_errors(self):
        with pytest.raises(SurrogateError):
            build_feature_dataset(keyword_model(), [])


def manual_surrogate(c_map, feature, threshold, n_features=2):
    """Two-class surrogate whose class-1 tree splits once on `feature`."""
    root1 = TreeNode(counts=np.array([5.0, 5.0]), feature=feature,
                     threshold=threshold,
                     left=TreeNode(counts=np.array([5.0, 0.0]), label=0),
                     right=TreeNode(counts=np.array([0.0, 5.0]), label=1))
    root0 = TreeNode(counts=np.array([5.0, 5.0]), label=0)
    trees = [ExtractedTree(0, root0), ExtractedTree(1, root1)]
    for t in trees:
        t.refresh_metadata()
    from textexplain.surrogate import FeatureClassCorrelation
    corr = FeatureClassCorrelation(c=np.array(c_map),
                                   rho=np.zeros((n_features, 2)),
                                   flagged=np.zeros(n_features, dtype=bool))
    return SurrogateModel(trees=trees, correlation=corr)


class TestLocalExplanation:
    def test_passing_node_with_matching_class_is_evidence(self):
        model = keyword_model()
        seq = tokenize("the good item")
        # prediction is class 1; v = [v_good, v_bad] = [1, 0]
        surr = manual_surrogate(c_map=[1, 0], feature=0, threshold=0.25)
        expl = dt_local_explain(model, surr, seq, m=3)
        assert expl.target_class == 1
        assert len(expl.evidence) == 1 and expl.counter_evidence == []
        frag = expl.evidence[0]
        assert frag.span == (1, 1)  # the token "good"
        assert frag.score == pytest.approx(1.0 - 0.25)

    def test_all_low_path_empty_explanation(self):
        model = keyword_model()
        surr = manual_surrogate(c_map=[1, 0], feature=0, threshold=5.0)
        expl = dt_local_explain(model, surr, tokenize("the good item"), m=3)
        assert expl.evidence == [] and expl.counter_evidence == []

    def test_mismatched_class_goes_to_counter(self):
        model = keyword_model()
        surr = manual_surrogate(c_map=[0, 0], feature=0, threshold=0.25)
        expl = dt_local_explain(model, surr, tokenize("the good item"), m=3)
        assert expl.evidence == []
        assert len(expl.counter_evidence) == 1
        assert expl.counter_evidence[0].score == pytest.approx(-0.75)

    def test_threshold_equal_not_emitted(self):
        model = keyword_model()
        surr = manual_surrogate(c_map=[1, 0], feature=0, threshold=1.0)
        expl = dt_local_explain(model, surr, tokenize("the good item"), m=3)
        assert expl.evidence == []  # v_good == threshold, strict > required

    def test_traversal_order_and_truncation(self):
        model = keyword_model()
        # chain: root splits on feature 0, right child splits on feature 1
        inner = TreeNode(counts=np.array([1.0, 5.0]), feature=1,
                         threshold=-1.0,
                         left=TreeNode(counts=np.array([1.0, 0.0]), label=0),
                         right=TreeNode(counts=np.array([0.0, 5.0]), label=1))
        root1 = TreeNode(counts=np.array([5.0, 5.0]), feature=0,
                         threshold=0.25, left=TreeNode(
                             counts=np.array([4.0, 0.0]), label=0),
                         right=inner)
        trees = [ExtractedTree(0, TreeNode(counts=np.array([1.0, 1.0]),
                                           label=0)),
                 ExtractedTree(1, root1)]
        from textexplain.surrogate import FeatureClassCorrelation
        surr = SurrogateModel(
            trees=trees,
            correlation=FeatureClassCorrelation(
                c=np.array([1, 1]), rho=np.zeros((2, 2)),
                flagged=np.zeros(2, dtype=bool)))
        expl = dt_local_explain(model, surr, tokenize("the good item"), m=3)
        # root emits margin 0.75 first, then the inner node's margin 1.1
        # (v_bad is 0.1 via "the"): traversal order, not score order
        scores = [f.score for f in expl.evidence]
        assert scores == [pytest.approx(0.75), pytest.approx(1.1)]
        expl1 = dt_local_explain(model, surr, tokenize("the good item"), m=1)
        assert len(expl1.evidence) == 1
        assert expl1.evidence[0].score == pytest.approx(0.75)


class TestFidelityAndReport:
    def test_extracted_trees_replicate_separable_model(self):
        model = keyword_model()
        docs = keyword_docs(30)
        surr = extract_trees(model, docs, docs, min_leaf=1)
        assert fidelity(surr, model, docs) == 1.0

    def test_arbitration_prefers_target_then_purity(self):
        surr = manual_surrogate(c_map=[1, 0], feature=0, threshold=0.25)
        # class-1 tree answers target with purity 1.0; class-0 tree says
        # rest with purity 0.5: class 1 wins
        v = np.array([[1.0, 0.0]])
        assert surrogate_predict(surr, v)[0] == 1
        # below threshold both trees answer `rest`; purer leaf wins, and
        # the class-0 leaf (purity 0.5 target share) beats class-1's 0.0
        v = np.array([[0.0, 0.0]])
        assert surrogate_predict(surr, v)[0] == 0

    def test_report_rows(self):
        model = keyword_model()
        docs = keyword_docs(20)
        surr = extract_trees(model, docs, docs, min_leaf=1)
        text = tree_report(surr, model.classes)
        lines = text.strip().split("\n")
        assert "#Nodes" in lines[0] and "Depth" in lines[0] \
            and "#Leaves" in lines[0]
        assert len(lines) == 1 + len(model.classes)
        for line in lines[1:]:
            assert len(line.split()) >= 4

    def test_save_load_round_trip(self, tmp_path):
        model = keyword_model()
        docs = keyword_docs(20)
        surr = extract_trees(model, docs, docs, min_leaf=1)
        path = tmp_path / "trees.json"
        save_surrogate(surr, path)
        loaded = load_surrogate(path)
        v, _, _ = build_feature_dataset(model, docs)
        np.testing.assert_array_equal(surrogate_predict(surr, v),
                                      surrogate_predict(loaded, v))
        np.testing.assert_array_equal(surr.correlation.c, loaded.correlation.c)
        np.testing.assert_allclose(surr.correlation.rho,
                                   loaded.correlation.rho)
        for a, b in zip(surr.trees, loaded.trees):
            assert a.metadata == b.metadata


class TestDispatchIntegration:
    def test_dt_method_through_explain_document(self):
        from textexplain.attribution import explain_document
        model = keyword_model()
        docs = keyword_docs(30)
        surr = extract_trees(model, docs, docs, min_leaf=1)
        expl = explain_document(model, tokenize("the good item"), "dt",
                                m=3, trees=surr)
        assert expl.method == "dt"
        assert expl.target_class == forward(
            model, tokenize("the good item")).predicted_class
