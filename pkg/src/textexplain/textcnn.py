"""1D convolutional text classifier with max-over-time pooling.

The architecture: frozen embedding lookup, a bank of fixed-size ReLU
convolution filters, max-over-time pooling into a feature vector, and a
two-layer dense head (ReLU hidden layer, linear output, softmax). Training
runs Adam on the filters and head only; embeddings never change.

Everything is plain float64 numpy, so forward passes, gradients, and
training are deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import DEFAULT_MAX_TOKENS, Document, EmbeddingTable, tokenize

MODEL_FORMAT_VERSION = 1


class TrainError(Exception):
    """Invalid training input or configuration."""


class ModelIOError(Exception):
    """Unreadable or incompatible model file."""


@dataclass
class FilterBank:
    """Convolution filters grouped by window size.

    ``weights[i]`` has shape (per_size, sizes[i], dim); ``biases[i]`` has
    shape (per_size,). Activation is ReLU throughout.
    """

    sizes: list[int]
    per_size: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def total(self) -> int:
        return self.per_size * len(self.sizes)

    def flat(self, i: int) -> np.ndarray:
        """(per_size, size*dim) view of one size group, for matmul."""
        c, n, d = self.weights[i].shape
        return self.weights[i].reshape(c, n * d)


@dataclass
class DenseHead:
    """Hidden ReLU layer followed by a linear output layer."""

    w1: np.ndarray  # (hidden, n_features)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (n_classes, hidden)
    b2: np.ndarray  # (n_classes,)

    @property
    def n_classes(self) -> int:
        return self.w2.shape[0]


@dataclass
class FeatureVector:
    """Pooled filter responses plus the n-gram each filter fired on.

    ``spans[k]`` is (start token index, window size) of the position where
    filter k attained its maximum; ties go to the smallest start.
    """

    v: np.ndarray
    spans: list[tuple[int, int]]


@dataclass
class Prediction:
    p: np.ndarray
    logits: np.ndarray
    predicted_class: int
    feature: FeatureVector


@dataclass
class CnnModel:
    embedding: EmbeddingTable
    filters: FilterBank
    head: DenseHead
    classes: tuple[str, ...]
    max_tokens: int = DEFAULT_MAX_TOKENS

    @property
    def n_classes(self) -> int:
        return len(self.classes)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise TrainError("patience must be >= 1")


def init_model(embedding: EmbeddingTable, classes, sizes=(2, 3, 4),
               per_size: int = 50, hidden: int = 150, seed: int = 0,
               max_tokens: int = DEFAULT_MAX_TOKENS) -> CnnModel:
    """Build an untrained model with He-scaled random weights."""
    rng = np.random.default_rng(seed)
    d = embedding.dimension
    weights, biases = [], []
    for n in sizes:
        weights.append(rng.normal(0.0, np.sqrt(2.0 / (n * d)),
                                  size=(per_size, n, d)))
        biases.append(np.zeros(per_size))
    k = per_size * len(sizes)
    head = DenseHead(
        w1=rng.normal(0.0, np.sqrt(2.0 / k), size=(hidden, k)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, np.sqrt(2.0 / hidden), size=(len(classes), hidden)),
        b2=np.zeros(len(classes)),
    )
    return CnnModel(embedding=embedding,
                    filters=FilterBank(list(sizes), per_size, weights, biases),
                    head=head, classes=tuple(classes), max_tokens=max_tokens)


# ----------------------------------------------------------------------
# forward pass
# ----------------------------------------------------------------------

def encode_tokens(model: CnnModel, tokens) -> np.ndarray:
    """Token strings -> embedding row indices, truncated to the input cap."""
    toks = tokens.tokens if hasattr(tokens, "tokens") else list(tokens)
    toks = toks[:model.max_tokens]
    return np.fromiter((model.embedding.row_index(t) for t in toks),
                       dtype=np.int64, count=len(toks))


def _windows(mat: np.ndarray, n: int) -> np.ndarray:
    """(positions, n*dim) sliding windows of an (L, dim) matrix."""
    length, dim = mat.shape
    p = length - n + 1
    strides = (mat.strides[0], mat.strides[0], mat.strides[1])
    view = np.lib.stride_tricks.as_strided(mat, shape=(p, n, dim),
                                           strides=strides)
    return view.reshape(p, n * dim)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_forward(head: DenseHead, v: np.ndarray):
    """Returns (hidden pre-activations, hidden activations, logits)."""
    z1 = v @ head.w1.T + head.b1
    h = np.maximum(z1, 0.0)
    logits = h @ head.w2.T + head.b2
    return z1, h, logits


def conv_features(model: CnnModel, ids: np.ndarray) -> FeatureVector:
    """Pooled filter responses for one encoded document."""
    fb = model.filters
    max_n = max(fb.sizes)
    mat = model.embedding.matrix[ids]
    if mat.shape[0] < max_n:  # zero-row padding for short inputs
        pad = np.zeros((max_n - mat.shape[0], model.embedding.dimension))
        mat = np.vstack([mat, pad]) if mat.size else pad
    v_parts, spans = [], []
    for i, n in enumerate(fb.sizes):
        acts = np.maximum(_windows(mat, n) @ fb.flat(i).T + fb.biases[i], 0.0)
        starts = acts.argmax(axis=0)  # first max = smallest start
        v_parts.append(acts[starts, np.arange(fb.per_size)])
        spans.extend((int(s), n) for s in starts)
    return FeatureVector(v=np.concatenate(v_parts), spans=spans)


def forward(model: CnnModel, tokens) -> Prediction:
    """Full forward pass for one document (token strings or a TokenSequence)."""
    feature = conv_features(model, encode_tokens(model, tokens))
    _, _, logits = head_forward(model.head, feature.v)
    p = softmax(logits)
    return Prediction(p=p, logits=logits,
                      predicted_class=int(np.argmax(logits)), feature=feature)


def _batch_conv(model: CnnModel, id_lists: list[np.ndarray]):
    """Pooled features for a batch, padded to the longest member.

    Returns (V, argmax starts per size). Positions that would run past a
    document's real length are masked out of the max.
    """
    fb = model.filters
    max_n = max(fb.sizes)
    lengths = np.array([max(len(ids), max_n) for ids in id_lists])
    pad_to = int(lengths.max())
    dim = model.embedding.dimension
    batch = np.zeros((len(id_lists), pad_to, dim))
    for b, ids in enumerate(id_lists):
        if len(ids):
            batch[b, :len(ids)] = model.embedding.matrix[ids]
    v_parts, args = [], []
    for i, n in enumerate(fb.sizes):
        p = pad_to - n + 1
        cols = np.lib.stride_tricks.as_strided(
            batch, shape=(len(id_lists), p, n, dim),
            strides=(batch.strides[0], batch.strides[1], batch.strides[1],
                     batch.strides[2])).reshape(len(id_lists), p, n * dim)
        acts = np.maximum(cols @ fb.flat(i).T + fb.biases[i], 0.0)
        valid = np.arange(p)[None, :] < (lengths - n + 1)[:, None]
        acts = np.where(valid[:, :, None], acts, -1.0)
        starts = acts.argmax(axis=1)
        v_parts.append(np.take_along_axis(acts, starts[:, None, :],
                                          axis=1)[:, 0, :])
        args.append(starts)
    return np.concatenate(v_parts, axis=1), args


def forward_many(model: CnnModel, id_lists: list[np.ndarray],
                 batch_size: int = 256):
    """Logits and features for many documents, bucketed by length."""
    order = np.argsort([len(ids) for ids in id_lists], kind="stable")
    v_all = np.zeros((len(id_lists), model.filters.total))
    for off in range(0, len(order), batch_size):
        chunk = order[off:off + batch_size]
        v, _ = _batch_conv(model, [id_lists[i] for i in chunk])
        v_all[chunk] = v
    _, _, logits = head_forward(model.head, v_all)
    return logits, v_all


def head_gradient(model: CnnModel, v: np.ndarray, target_class: int) -> np.ndarray:
    """Analytic gradient of the target logit with respect to the pooled
    feature vector. The ReLU subgradient at exactly zero is taken as 0."""
    z1 = model.head.w1 @ v + model.head.b1
    mask = (z1 > 0.0).astype(np.float64)
    return model.head.w1.T @ (model.head.w2[target_class] * mask)


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

class _Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        lr = c.learning_rate * np.sqrt(1 - c.beta2 ** self.t) / \
            (1 - c.beta1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * g * g
            p -= lr * m / (np.sqrt(v) + 1e-8)


def _model_params(model: CnnModel) -> list[np.ndarray]:
    fb, head = model.filters, model.head
    return fb.weights + fb.biases + [head.w1, head.b1, head.w2, head.b2]


def cross_entropy(model: CnnModel, id_lists, labels: np.ndarray,
                  batch_size: int = 256) -> float:
    logits, _ = forward_many(model, id_lists, batch_size)
    p = softmax(logits)
    return float(-np.mean(np.log(p[np.arange(len(labels)), labels] + 1e-300)))


def _train_batch(model: CnnModel, id_lists, labels, adam: _Adam) -> float:
    fb, head = model.filters, model.head
    max_n = max(fb.sizes)
    lengths = np.array([max(len(ids), max_n) for ids in id_lists])
    pad_to = int(lengths.max())
    dim = model.embedding.dimension
    nb = len(id_lists)
    batch = np.zeros((nb, pad_to, dim))
    for b, ids in enumerate(id_lists):
        if len(ids):
            batch[b, :len(ids)] = model.embedding.matrix[ids]

    cols_by_size, pre_by_size, arg_by_size, v_parts = [], [], [], []
    for i, n in enumerate(fb.sizes):
        p = pad_to - n + 1
        cols = np.lib.stride_tricks.as_strided(
            batch, shape=(nb, p, n, dim),
            strides=(batch.strides[0], batch.strides[1], batch.strides[1],
                     batch.strides[2])).reshape(nb, p, n * dim)
        pre = cols @ fb.flat(i).T + fb.biases[i]
        acts = np.maximum(pre, 0.0)
        valid = np.arange(p)[None, :] < (lengths - n + 1)[:, None]
        acts = np.where(valid[:, :, None], acts, -1.0)
        starts = acts.argmax(axis=1)
        v_parts.append(np.take_along_axis(acts, starts[:, None, :],
                                          axis=1)[:, 0, :])
        cols_by_size.append(cols)
        pre_by_size.append(pre)
        arg_by_size.append(starts)
    v = np.concatenate(v_parts, axis=1)

    z1 = v @ head.w1.T + head.b1
    h = np.maximum(z1, 0.0)
    logits = h @ head.w2.T + head.b2
    p = softmax(logits)
    loss = float(-np.mean(np.log(p[np.arange(nb), labels] + 1e-300)))

    dlogits = p.copy()
    dlogits[np.arange(nb), labels] -= 1.0
    dlogits /= nb
    dw2 = dlogits.T @ h
    db2 = dlogits.sum(axis=0)
    dz1 = (dlogits @ head.w2) * (z1 > 0.0)
    dw1 = dz1.T @ v
    db1 = dz1.sum(axis=0)
    dv = dz1 @ head.w1

    dweights, dbiases = [], []
    for i, n in enumerate(fb.sizes):
        dv_i = dv[:, i * fb.per_size:(i + 1) * fb.per_size]
        starts = arg_by_size[i]
        pre_at = np.take_along_axis(pre_by_size[i], starts[:, None, :],
                                    axis=1)[:, 0, :]
        dpre = dv_i * (pre_at > 0.0)
        rows = np.arange(nb)[:, None]
        win = cols_by_size[i][rows, starts]  # (nb, per_size, n*dim)
        dw = np.einsum("bc,bcd->cd", dpre, win)
        dweights.append(dw.reshape(fb.per_size, n, dim))
        dbiases.append(dpre.sum(axis=0))

    adam.step(dweights + dbiases + [dw1, db1, dw2, db2])
    return loss


def train(model: CnnModel, train_docs: list[Document],
          val_docs: list[Document], config: TrainConfig):
    """Train in place with Adam and early stopping on validation loss.

    Stops after ``patience`` epochs without a new best validation loss and
    restores the best epoch's weights. Embeddings are frozen. Returns the
    model and a per-epoch history of train/validation loss.
    """
    if not train_docs:
        raise TrainError("empty training split")
    rng = np.random.default_rng(config.seed)
    enc = lambda docs: [encode_tokens(model, tokenize(d.text)) for d in docs]
    train_ids, val_ids = enc(train_docs), enc(val_docs)
    y_train = np.array([d.label for d in train_docs])
    y_val = np.array([d.label for d in val_docs])

    # bucket by length so batch padding stays tight; order shuffled per epoch
    by_len = np.argsort([len(x) for x in train_ids], kind="stable")
    batches = [by_len[i:i + config.batch_size]
               for i in range(0, len(by_len), config.batch_size)]

    adam = _Adam(_model_params(model), config)
    history = []
    best_val = np.inf
    best_state = None
    stale = 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(batches))
        losses = []
        for bi in order:
            idx = batches[bi]
            losses.append(_train_batch(model, [train_ids[i] for i in idx],
                                       y_train[idx], adam))
        val_loss = cross_entropy(model, val_ids, y_val) if len(val_docs) \
            else float(np.mean(losses))
        history.append({"epoch": epoch + 1,
                        "train_loss": float(np.mean(losses)),
                        "val_loss": val_loss})
        if val_loss < best_val:
            best_val = val_loss
            best_state = [p.copy() for p in _model_params(model)]
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best_state is not None:
        for p, best in zip(_model_params(model), best_state):
            p[...] = best
    return model, history


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------

@dataclass
class EvalReport:
    classes: tuple[str, ...]
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean())

    @property
    def micro(self) -> float:
        """Single-label micro average: precision = recall = F1 = accuracy."""
        total = int(self.support.sum())
        hits = float((self.recall * self.support).sum())
        return hits / total if total else 0.0

    def to_text(self) -> str:
        width = max(len(c) for c in self.classes + ("macro avg",))
        lines = [f"{'':<{width}}  Prec.  Recall      F1  Support"]
        for i, name in enumerate(self.classes):
            lines.append(f"{name:<{width}}  {self.precision[i]:5.2f}  "
                         f"{self.recall[i]:6.2f}  {self.f1[i]:6.2f}  "
                         f"{int(self.support[i]):7d}")
        total = int(self.support.sum())
        lines.append(f"{'micro avg':<{width}}  {self.micro:5.2f}  "
                     f"{self.micro:6.2f}  {self.micro:6.2f}  {total:7d}")
        m = self.macro_f1
        lines.append(f"{'macro avg':<{width}}  {self.precision.mean():5.2f}  "
                     f"{self.recall.mean():6.2f}  {m:6.2f}  {total:7d}")
        return "\n".join(lines)


def predict_labels(model: CnnModel, docs: list[Document]) -> np.ndarray:
    ids = [encode_tokens(model, tokenize(d.text)) for d in docs]
    logits, _ = forward_many(model, ids)
    return logits.argmax(axis=1)


def evaluate(model: CnnModel, docs: list[Document]) -> EvalReport:
    """Per-class precision/recall/F1 plus macro and micro averages.

    A class with no gold examples in the split gets F1 = 0 and a warning.
    """
    if not docs:
        raise TrainError("empty evaluation split")
    y_true = np.array([d.label for d in docs])
    y_pred = predict_labels(model, docs)
    n = model.n_classes
    precision = np.zeros(n)
    recall = np.zeros(n)
    f1 = np.zeros(n)
    support = np.zeros(n)
    for c in range(n):
        tp = float(np.sum((y_pred == c) & (y_true == c)))
        pred_c = float(np.sum(y_pred == c))
        true_c = float(np.sum(y_true == c))
        support[c] = true_c
        if true_c == 0:
            warnings.warn(f"class {model.classes[c]!r} absent from split; "
                          "its F1 is reported as 0")
            continue
        precision[c] = tp / pred_c if pred_c else 0.0
        recall[c] = tp / true_c
        if precision[c] + recall[c] > 0:
            f1[c] = 2 * precision[c] * recall[c] / (precision[c] + recall[c])
    return EvalReport(model.classes, precision, recall, f1, support)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def save_model(model: CnnModel, path) -> None:
    """Write a self-describing single-file container (npz) holding the
    config, all weights, and the embedding vocabulary."""
    config = {
        "format_version": MODEL_FORMAT_VERSION,
        "classes": list(model.classes),
        "sizes": list(model.filters.sizes),
        "per_size": model.filters.per_size,
        "hidden": int(model.head.b1.shape[0]),
        "dimension": model.embedding.dimension,
        "max_tokens": model.max_tokens,
    }
    arrays = {"config": np.frombuffer(json.dumps(config).encode(), dtype=np.uint8)}
    for i in range(len(model.filters.sizes)):
        arrays[f"filter_w{i}"] = model.filters.weights[i]
        arrays[f"filter_b{i}"] = model.filters.biases[i]
    arrays.update(head_w1=model.head.w1, head_b1=model.head.b1,
                  head_w2=model.head.w2, head_b2=model.head.b2)
    arrays["emb_tokens"] = np.array(model.embedding.tokens, dtype=np.str_)
    arrays["emb_matrix"] = model.embedding.matrix[:-1]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> CnnModel:
    try:
        data = np.load(path)
        config = json.loads(bytes(data["config"]).decode())
    except Exception as exc:
        raise ModelIOError(f"cannot read model file {path}: {exc}") from exc
    if config.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelIOError(
            f"model format version {config.get('format_version')} not "
            f"supported (expected {MODEL_FORMAT_VERSION})")
    try:
        table = EmbeddingTable([str(t) for t in data["emb_tokens"]],
                               data["emb_matrix"])
        sizes = config["sizes"]
        fb = FilterBank(sizes=sizes, per_size=config["per_size"],
                        weights=[data[f"filter_w{i}"] for i in range(len(sizes))],
                        biases=[data[f"filter_b{i}"] for i in range(len(sizes))])
        head = DenseHead(w1=data["head_w1"], b1=data["head_b1"],
                         w2=data["head_w2"], b2=data["head_b2"])
    except KeyError as exc:
        raise ModelIOError(f"model file missing array {exc}") from exc
    return CnnModel(embedding=table, filters=fb, head=head,
                    classes=tuple(config["classes"]),
                    max_tokens=config["max_tokens"])
