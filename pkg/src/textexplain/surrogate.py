"""Decision-tree extraction from the dense head of a trained CNN.

One CART tree per class (one vs. rest, Gini impurity, midpoint thresholds)
is fit to the CNN's own predictions on pooled feature vectors, then pruned
bottom-up on validation data (reduced-error pruning). Per-feature Pearson
correlations against the pre-softmax outputs tell which class each filter
feature usually supports; walking the predicted class's tree turns the
passed thresholds into a local explanation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attribution import Explanation, Fragment
from .corpus import Document, TokenSequence, tokenize, truncate
from .textcnn import CnnModel, Prediction, encode_tokens, forward, forward_many


class SurrogateError(Exception):
    """Invalid surrogate-extraction input."""


@dataclass
class TreeNode:
    """Internal node (feature, threshold, children) or leaf (label).

    ``counts`` holds the training label counts (rest, target) that reached
    the node; leaves keep them for purity-based arbitration.
    """

    counts: np.ndarray
    feature: int | None = None
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    label: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.label is not None


@dataclass
class ExtractedTree:
    target_class: int
    root: TreeNode
    metadata: dict = field(default_factory=dict)

    def refresh_metadata(self) -> None:
        self.metadata = measure_tree(self.root)


@dataclass
class FeatureClassCorrelation:
    c: np.ndarray      # per feature, most-correlated class index
    rho: np.ndarray    # (n_features, n_classes) Pearson r
    flagged: np.ndarray  # per feature, True if zero variance


@dataclass
class SurrogateModel:
    trees: list[ExtractedTree]
    correlation: FeatureClassCorrelation


def measure_tree(root: TreeNode) -> dict:
    """Node count, depth (edges on the longest path), and leaf count."""
    def walk(node, depth):
        if node.is_leaf:
            return 1, depth, 1
        ln, ld, ll = walk(node.left, depth + 1)
        rn, rd, rl = walk(node.right, depth + 1)
        return ln + rn + 1, max(ld, rd), ll + rl
    nodes, depth, leaves = walk(root, 0)
    return {"nodes": nodes, "depth": depth, "leaves": leaves}


# ----------------------------------------------------------------------
# feature dataset
# ----------------------------------------------------------------------

def build_feature_dataset(model: CnnModel, docs: list[Document]):
    """Pooled feature vectors, CNN-predicted targets, and raw logits."""
    if not docs:
        raise SurrogateError("empty split")
    ids = [encode_tokens(model, tokenize(d.text)) for d in docs]
    logits, v = forward_many(model, ids)
    return v, logits.argmax(axis=1), logits


# ----------------------------------------------------------------------
# CART
# ----------------------------------------------------------------------

def _gini(target: float, total: float) -> float:
    if total == 0:
        return 0.0
    p = target / total
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _best_split(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best (decrease, feature, threshold) over all midpoint candidates.

    Ties break toward the smaller feature index, then smaller threshold.
    """
    n = len(y)
    total_t = float(y.sum())
    parent = _gini(total_t, n)
    best = None
    for k in range(x.shape[1]):
        col = x[:, k]
        order = np.argsort(col, kind="stable")
        cs, ys = col[order], y[order]
        t_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        valid = cs[1:] != cs[:-1]
        valid &= (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        idx = np.nonzero(valid)[0]
        nl = n_left[idx].astype(np.float64)
        tl = t_left[idx]
        nr = n - nl
        tr = total_t - tl
        pl, pr = tl / nl, tr / nr
        g_l = 1.0 - pl * pl - (1.0 - pl) * (1.0 - pl)
        g_r = 1.0 - pr * pr - (1.0 - pr) * (1.0 - pr)
        dec = parent - (nl / n) * g_l - (nr / n) * g_r
        thr = (cs[idx] + cs[idx + 1]) / 2.0
        j = np.lexsort((thr, -dec))[0]  # max decrease, then min threshold
        cand = (float(dec[j]), k, float(thr[j]))
        if best is None or cand[0] > best[0]:
            best = cand
    return best


def _leaf(y: np.ndarray) -> TreeNode:
    counts = np.array([float(np.sum(y == 0)), float(np.sum(y == 1))])
    # majority label, ties to `rest`
    return TreeNode(counts=counts, label=int(counts[1] > counts[0]))


def _grow(x, y, depth, min_leaf, max_depth):
    if depth >= max_depth or len(y) < 2 * min_leaf or len(np.unique(y)) < 2:
        return _leaf(y)
    best = _best_split(x, y, min_leaf)
    if best is None or best[0] <= 1e-15:
        return _leaf(y)
    _, k, thr = best
    mask = x[:, k] <= thr
    node = _leaf(y)  # reuse the counts
    node.label = None
    node.feature = k
    node.threshold = thr
    node.left = _grow(x[mask], y[mask], depth + 1, min_leaf, max_depth)
    node.right = _grow(x[~mask], y[~mask], depth + 1, min_leaf, max_depth)
    return node


def cart_train(x: np.ndarray, y: np.ndarray, target_class: int,
               min_leaf: int = 5, max_depth: int = 50) -> ExtractedTree:
    """Greedy CART on a binary one-vs-rest target (1 = target class)."""
    y = np.asarray(y, dtype=np.int64)
    tree = ExtractedTree(target_class=target_class,
                         root=_grow(np.asarray(x, dtype=np.float64), y, 0,
                                    min_leaf, max_depth))
    tree.refresh_metadata()
    return tree


def tree_apply(root: TreeNode, v: np.ndarray) -> TreeNode:
    """Route one feature vector to its leaf."""
    node = root
    while not node.is_leaf:
        node = node.left if v[node.feature] <= node.threshold else node.right
    return node


def tree_predict(root: TreeNode, x: np.ndarray) -> np.ndarray:
    return np.array([tree_apply(root, row).label for row in x])


# ----------------------------------------------------------------------
# reduced-error pruning
# ----------------------------------------------------------------------

def prune(tree: ExtractedTree, x_val: np.ndarray,
          y_val: np.ndarray) -> ExtractedTree:
    """Bottom-up reduced-error pruning on a validation set.

    A subtree collapses to its training-majority leaf whenever that does
    not increase validation errors, so validation accuracy never drops.
    """
    if len(y_val) == 0:
        raise SurrogateError("empty validation set")
    y_val = np.asarray(y_val, dtype=np.int64)

    def walk(node, idx):
        majority = int(node.counts[1] > node.counts[0])
        leaf_err = int(np.sum(y_val[idx] != majority))
        if node.is_leaf:
            return node, int(np.sum(y_val[idx] != node.label))
        mask = x_val[idx, node.feature] <= node.threshold
        node.left, le = walk(node.left, idx[mask])
        node.right, re = walk(node.right, idx[~mask])
        if leaf_err <= le + re:
            return TreeNode(counts=node.counts, label=majority), leaf_err
        return node, le + re

    tree.root, _ = walk(tree.root, np.arange(len(y_val)))
    tree.refresh_metadata()
    return tree


# ----------------------------------------------------------------------
# feature / class correlation
# ----------------------------------------------------------------------

def correlate_features(v: np.ndarray, logits: np.ndarray) -> FeatureClassCorrelation:
    """Pearson correlation of each pooled feature with each class logit.

    Zero-variance features are flagged and assigned class 0 with all-zero
    correlations; zero-variance logit columns correlate 0 with everything.
    """
    if len(v) < 2:
        raise SurrogateError("need at least 2 samples for correlations")
    vc = v - v.mean(axis=0)
    lc = logits - logits.mean(axis=0)
    v_sd = np.sqrt((vc * vc).sum(axis=0))
    l_sd = np.sqrt((lc * lc).sum(axis=0))
    denom = np.outer(v_sd, l_sd)
    rho = np.divide(vc.T @ lc, denom, out=np.zeros((v.shape[1],
                                                    logits.shape[1])),
                    where=denom != 0)
    flagged = v_sd == 0
    c = rho.argmax(axis=1)  # argmax takes the smallest index on ties
    c[flagged] = 0
    return FeatureClassCorrelation(c=c, rho=rho, flagged=flagged)


# ----------------------------------------------------------------------
# extraction, local explanation, fidelity
# ----------------------------------------------------------------------

def extract_trees(model: CnnModel, train_docs: list[Document],
                  val_docs: list[Document], min_leaf: int = 5,
                  max_depth: int = 50) -> SurrogateModel:
    """One pruned one-vs-rest tree per class plus feature correlations."""
    v_tr, t_tr, logits_tr = build_feature_dataset(model, train_docs)
    v_va, t_va, _ = build_feature_dataset(model, val_docs)
    trees = []
    for j in range(model.n_classes):
        tree = cart_train(v_tr, (t_tr == j).astype(np.int64), j,
                          min_leaf, max_depth)
        trees.append(prune(tree, v_va, (t_va == j).astype(np.int64)))
    return SurrogateModel(trees=trees,
                          correlation=correlate_features(v_tr, logits_tr))


def dt_path_fragments(surr: SurrogateModel, prediction: Prediction,
                      n_tok: int):
    """Walk the predicted class's tree; every node whose threshold the
    input strictly exceeds emits that filter's fired n-gram, scored by the
    margin v_k - threshold. Returns (evidence, counter) in traversal
    order; overlaps and repeats are kept."""
    j = prediction.predicted_class
    v = prediction.feature.v
    evidence, counter = [], []
    node = surr.trees[j].root
    while not node.is_leaf:
        k, thr = node.feature, node.threshold
        if v[k] > thr:
            start, size = prediction.feature.spans[k]
            if start < n_tok:
                margin = float(v[k] - thr)
                if int(surr.correlation.c[k]) == j:
                    evidence.append(Fragment((start, size), "ngram", margin))
                else:
                    counter.append(Fragment((start, size), "ngram", -margin))
            node = node.right
        else:
            node = node.left
    return evidence, counter


def dt_local_explain(model: CnnModel, surr: SurrogateModel,
                     seq: TokenSequence, m: int = 3) -> Explanation:
    """Path-based local explanation from the predicted class's tree,
    truncated to the first m fragments per list (root first)."""
    seq = truncate(seq, model.max_tokens)
    pred = forward(model, seq)
    evidence, counter = dt_path_fragments(surr, pred, len(seq.tokens))
    return Explanation("dt", pred.predicted_class, evidence[:m], counter[:m], m)


def leaf_target_purity(leaf: TreeNode) -> float:
    total = leaf.counts.sum()
    return float(leaf.counts[1] / total) if total else 0.0


def surrogate_predict(surr: SurrogateModel, v: np.ndarray) -> np.ndarray:
    """Arbitrate the one-vs-rest trees: prefer trees answering `target`,
    rank by leaf target-purity, break ties toward the smaller class."""
    out = np.zeros(len(v), dtype=np.int64)
    for i, row in enumerate(v):
        ranked = []
        for j, tree in enumerate(surr.trees):
            leaf = tree_apply(tree.root, row)
            ranked.append((-int(leaf.label == 1), -leaf_target_purity(leaf), j))
        ranked.sort()
        out[i] = ranked[0][2]
    return out


def _macro_f1(pred: np.ndarray, ref: np.ndarray, n_classes: int) -> float:
    f1 = np.zeros(n_classes)
    for c in range(n_classes):
        tp = float(np.sum((pred == c) & (ref == c)))
        p = tp / max(float(np.sum(pred == c)), 1e-300)
        r = tp / max(float(np.sum(ref == c)), 1e-300)
        f1[c] = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return float(f1.mean())


def fidelity(surr: SurrogateModel, model: CnnModel,
             docs: list[Document]) -> float:
    """Macro-F1 of the surrogate's predictions against the CNN's."""
    v, targets, _ = build_feature_dataset(model, docs)
    return _macro_f1(surrogate_predict(surr, v), targets, model.n_classes)


def tree_report(surr: SurrogateModel, class_names) -> str:
    """Aligned per-class table of node count, depth, and leaf count."""
    width = max(len(str(n)) for n in class_names)
    lines = [f"{'Class':<{width}}  #Nodes  Depth  #Leaves"]
    for tree in surr.trees:
        md = tree.metadata
        lines.append(f"{class_names[tree.target_class]:<{width}}  "
                     f"{md['nodes']:6d}  {md['depth']:5d}  {md['leaves']:7d}")
    return "\n".join(lines)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def _node_to_dict(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"label": node.label, "counts": node.counts.tolist()}
    return {"feature": node.feature, "threshold": node.threshold,
            "counts": node.counts.tolist(),
            "left": _node_to_dict(node.left),
            "right": _node_to_dict(node.right)}


def _node_from_dict(d: dict) -> TreeNode:
    counts = np.array(d["counts"], dtype=np.float64)
    if "label" in d:
        return TreeNode(counts=counts, label=int(d["label"]))
    return TreeNode(counts=counts, feature=int(d["feature"]),
                    threshold=float(d["threshold"]),
                    left=_node_from_dict(d["left"]),
                    right=_node_from_dict(d["right"]))


def save_surrogate(surr: SurrogateModel, path) -> None:
    doc = {"trees": [{"target_class": t.target_class,
                      "metadata": t.metadata,
                      "root": _node_to_dict(t.root)} for t in surr.trees],
           "correlation": {"c": surr.correlation.c.tolist(),
                           "rho": surr.correlation.rho.tolist(),
                           "flagged": surr.correlation.flagged.tolist()}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_surrogate(path) -> SurrogateModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    trees = [ExtractedTree(target_class=int(t["target_class"]),
                           root=_node_from_dict(t["root"]),
                           metadata=t["metadata"]) for t in doc["trees"]]
    corr = FeatureClassCorrelation(
        c=np.array(doc["correlation"]["c"], dtype=np.int64),
        rho=np.array(doc["correlation"]["rho"], dtype=np.float64),
        flagged=np.array(doc["correlation"]["flagged"], dtype=bool))
    return SurrogateModel(trees=trees, correlation=corr)
