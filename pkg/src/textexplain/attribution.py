"""Local explanation methods for the CNN classifier.

Every method reduces to scored text fragments: words or n-grams (n drawn
from the filter sizes), split into evidence for the target class and
counter-evidence against it. Word-level relevance methods (LIME, LRP,
DeepLIFT) extend to n-grams by summing member word scores. Grad-CAM
ranks the n-grams the filters actually fired on. The surrogate decision
tree method lives in its own module and is dispatched from here.

Scores are signed everywhere: evidence fragments carry positive scores in
descending order, counter-evidence carries negative scores with the most
negative first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import TokenSequence, truncate
from .textcnn import (
    CnnModel,
    Prediction,
    conv_features,
    encode_tokens,
    forward,
    forward_many,
    head_forward,
    head_gradient,
)

METHODS = ("random-w", "random-n", "lime", "lrp-w", "lrp-n",
           "deeplift-w", "deeplift-n", "gradcam", "dt")

METHOD_NAMES = {
    "random-w": "Random (W)",
    "random-n": "Random (N)",
    "lime": "LIME",
    "lrp-w": "LRP (W)",
    "lrp-n": "LRP (N)",
    "deeplift-w": "DeepLIFT (W)",
    "deeplift-n": "DeepLIFT (N)",
    "gradcam": "Grad-CAM-Text",
    "dt": "DTs",
}

DEFAULT_EPSILON = 0.01
DEFAULT_LIME_SAMPLES = 5000
LIME_KERNEL_SIGMA = 0.25
LIME_RIDGE_LAMBDA = 1.0


class ExplainError(Exception):
    """Invalid explanation request."""


@dataclass
class Fragment:
    """A scored token span. ``span`` is (start index, token count)."""

    span: tuple[int, int]
    kind: str  # "word" or "ngram"
    score: float

    def overlaps(self, other: "Fragment") -> bool:
        a0, an = self.span
        b0, bn = other.span
        return a0 < b0 + bn and b0 < a0 + an


@dataclass
class Explanation:
    method: str
    target_class: int
    evidence: list[Fragment]
    counter_evidence: list[Fragment]
    m: int


@dataclass
class FilterEffect:
    """Per-filter effect toward one class and its per-token aggregation."""

    E: np.ndarray
    word_effect: np.ndarray


def _tokens_of(tokens) -> list[str]:
    return tokens.tokens if isinstance(tokens, TokenSequence) else list(tokens)


# ----------------------------------------------------------------------
# random baselines
# ----------------------------------------------------------------------

def random_words(tokens, m: int, seed: int = 0) -> Explanation:
    """Uniform draw of distinct word positions; evidence and
    counter-evidence are disjoint. Shorter texts yield fewer fragments."""
    n = len(_tokens_of(tokens))
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    ev = [Fragment((int(i), 1), "word", 0.0) for i in order[:m]]
    ce = [Fragment((int(i), 1), "word", 0.0) for i in order[m:2 * m]]
    return Explanation("random-w", -1, ev, ce, m)


def random_ngrams(tokens, m: int, sizes=(2, 3, 4), seed: int = 0) -> Explanation:
    """Draw up to 2m pairwise non-overlapping n-grams, n uniform from
    ``sizes`` per pick, then split them between evidence and counter."""
    n_tok = len(_tokens_of(tokens))
    rng = np.random.default_rng(seed)
    taken: list[tuple[int, int]] = []

    def free_starts(n):
        return [s for s in range(n_tok - n + 1)
                if all(s >= t0 + tn or t0 >= s + n for t0, tn in taken)]

    picks: list[tuple[int, int]] = []
    for _ in range(2 * m):
        n = int(rng.choice(sizes))
        starts = free_starts(n)
        if not starts:  # fall back to any size that still fits
            for n in sorted(sizes):
                starts = free_starts(n)
                if starts:
                    break
        if not starts:
            break
        s = int(starts[rng.integers(0, len(starts))])
        taken.append((s, n))
        picks.append((s, n))
    ev = [Fragment(p, "ngram", 0.0) for p in picks[:m]]
    ce = [Fragment(p, "ngram", 0.0) for p in picks[m:2 * m]]
    return Explanation("random-n", -1, ev, ce, m)


# ----------------------------------------------------------------------
# LIME
# ----------------------------------------------------------------------

def lime_explain(model: CnnModel, tokens, target_class: int,
                 n_samples: int = DEFAULT_LIME_SAMPLES,
                 seed: int = 0) -> np.ndarray:
    """Per-position relevance from a local linear surrogate.

    Masked variants keep a uniformly random subset of token positions
    (masked tokens are removed, not replaced). The surrogate is a ridge
    regression on binary presence features, weighted by
    exp(-(1 - retained fraction)^2 / sigma^2), fit to the model's
    probability of the target class.
    """
    if n_samples < 2:
        raise ExplainError("LIME needs at least 2 samples")
    ids = encode_tokens(model, tokens)
    n_tok = len(ids)
    if n_tok == 0:
        return np.zeros(0)
    rng = np.random.default_rng(seed)
    masks = rng.integers(0, 2, size=(n_samples, n_tok)).astype(bool)
    variants = [ids[row] for row in masks]
    logits, _ = forward_many(model, variants)
    z = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(z)
    probs /= probs.sum(axis=1, keepdims=True)
    y = probs[:, target_class]

    s = masks.mean(axis=1)
    w = np.exp(-((1.0 - s) ** 2) / LIME_KERNEL_SIGMA ** 2)
    x = np.hstack([np.ones((n_samples, 1)), masks.astype(np.float64)])
    xw = x * w[:, None]
    gram = x.T @ xw
    reg = LIME_RIDGE_LAMBDA * np.eye(n_tok + 1)
    reg[0, 0] = 0.0  # intercept not penalized
    coef = np.linalg.solve(gram + reg, xw.T @ y)
    return coef[1:]


# ----------------------------------------------------------------------
# epsilon-LRP
# ----------------------------------------------------------------------

def _eps_backward(x: np.ndarray, w: np.ndarray, y: np.ndarray,
                  r_y: np.ndarray, eps: float) -> np.ndarray:
    """One epsilon-rule step through y = w @ x + b.

    Splits each output's relevance over inputs in proportion to x_i*w_ji,
    stabilized by eps*sign(y). A zero denominator contributes nothing.
    """
    denom = y + eps * np.where(y >= 0, 1.0, -1.0)
    s = np.divide(r_y, denom, out=np.zeros_like(r_y, dtype=np.float64),
                  where=denom != 0)
    return x * (w.T @ s)


def lrp_words(model: CnnModel, tokens, target_class: int,
              epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Per-word relevance by epsilon-LRP from the target logit.

    The dense layers use the epsilon rule, ReLUs pass relevance through,
    max-pooling routes each feature's relevance entirely to its argmax
    span (winner takes all), and the convolution distributes onto the
    embedding entries of that span. Word relevance sums over embedding
    dimensions.
    """
    ids = encode_tokens(model, tokens)
    n_tok = len(ids)
    r_words = np.zeros(n_tok)
    if n_tok == 0:
        return r_words
    feat = conv_features(model, ids)
    v = feat.v
    head = model.head
    z1, h, logits = head_forward(head, v)
    r_logit = np.array([logits[target_class]])

    r_h = _eps_backward(h, head.w2[target_class][None, :], r_logit, r_logit,
                        epsilon)
    r_v = _eps_backward(v, head.w1, z1, r_h, epsilon)  # ReLU passes through

    fb = model.filters
    max_n = max(fb.sizes)
    mat = model.embedding.matrix[ids]
    if mat.shape[0] < max_n:
        mat = np.vstack([mat, np.zeros((max_n - mat.shape[0], mat.shape[1]))])
    for i, n in enumerate(fb.sizes):
        k0 = i * fb.per_size
        starts = np.array([feat.spans[k0 + c][0] for c in range(fb.per_size)])
        pos = starts[:, None] + np.arange(n)  # (per_size, n)
        windows = mat[pos]  # (per_size, n, dim)
        pre = np.einsum("cnd,cnd->c", fb.weights[i], windows) + fb.biases[i]
        denom = pre + epsilon * np.where(pre >= 0, 1.0, -1.0)
        scale = np.divide(r_v[k0:k0 + fb.per_size], denom,
                          out=np.zeros(fb.per_size), where=denom != 0)
        contrib = (windows * fb.weights[i]).sum(axis=2) * scale[:, None]
        valid = pos < n_tok
        np.add.at(r_words, pos[valid], contrib[valid])
    return r_words


# ----------------------------------------------------------------------
# DeepLIFT (Rescale, all-zero-embedding reference)
# ----------------------------------------------------------------------

def deeplift_words(model: CnnModel, tokens, target_class: int) -> np.ndarray:
    """Per-word DeepLIFT contributions against the all-zero reference.

    With zero reference embeddings, each filter's reference activation is
    ReLU(bias) at every position, so the reference pooled value equals the
    reference activation at the input's own argmax span; routing the whole
    pooled delta there keeps summation-to-delta exact. Dense layers use
    the Rescale rule.
    """
    ids = encode_tokens(model, tokens)
    n_tok = len(ids)
    r_words = np.zeros(n_tok)
    if n_tok == 0:
        return r_words
    feat = conv_features(model, ids)
    v = feat.v
    head = model.head
    fb = model.filters

    v_ref = np.concatenate([np.maximum(fb.biases[i], 0.0)
                            for i in range(len(fb.sizes))])
    z1, h, _ = head_forward(head, v)
    z1_ref, h_ref, _ = head_forward(head, v_ref)

    m_h = head.w2[target_class]
    dz1 = z1 - z1_ref
    resc = np.divide(h - h_ref, dz1, out=np.zeros_like(dz1), where=dz1 != 0)
    m_v = head.w1.T @ (m_h * resc)

    max_n = max(fb.sizes)
    mat = model.embedding.matrix[ids]
    if mat.shape[0] < max_n:
        mat = np.vstack([mat, np.zeros((max_n - mat.shape[0], mat.shape[1]))])
    for i, n in enumerate(fb.sizes):
        k0 = i * fb.per_size
        starts = np.array([feat.spans[k0 + c][0] for c in range(fb.per_size)])
        pos = starts[:, None] + np.arange(n)
        windows = mat[pos]
        pre = np.einsum("cnd,cnd->c", fb.weights[i], windows) + fb.biases[i]
        dpre = pre - fb.biases[i]  # reference pre-activation is the bias
        da = v[k0:k0 + fb.per_size] - v_ref[k0:k0 + fb.per_size]
        resc_k = np.divide(da, dpre, out=np.zeros_like(da), where=dpre != 0)
        m_pre = m_v[k0:k0 + fb.per_size] * resc_k
        contrib = (windows * fb.weights[i]).sum(axis=2) * m_pre[:, None]
        valid = pos < n_tok
        np.add.at(r_words, pos[valid], contrib[valid])
    return r_words


# ----------------------------------------------------------------------
# n-gram scoring and fragment selection
# ----------------------------------------------------------------------

def ngram_scores(word_rel: np.ndarray, sizes=(2, 3, 4)) -> list[Fragment]:
    """Every contiguous span of each size, scored by the sum of its
    member word scores."""
    n_tok = len(word_rel)
    out = []
    for n in sizes:
        for s in range(n_tok - n + 1):
            out.append(Fragment((s, n), "ngram", float(word_rel[s:s + n].sum())))
    return out


def gradcam_text(model: CnnModel, prediction: Prediction, target_class: int,
                 mode: str = "evidence") -> FilterEffect:
    """Filter effects toward a class: clipped logit gradient times the
    pooled value. Evidence mode keeps positive gradients, counter mode
    keeps negative ones. Word effects sum the effects of every fired
    n-gram containing the word."""
    v = prediction.feature.v
    grad = head_gradient(model, v, target_class)
    if mode == "evidence":
        e = np.abs(np.maximum(grad, 0.0)) * v
    elif mode == "counter":
        e = np.abs(np.minimum(grad, 0.0)) * v
    else:
        raise ExplainError(f"unknown mode {mode!r}")
    n_tok = len(prediction.feature.spans) and max(
        s + n for s, n in prediction.feature.spans)
    word_effect = np.zeros(n_tok)
    for k, (s, n) in enumerate(prediction.feature.spans):
        word_effect[s:s + n] += e[k]
    return FilterEffect(E=e, word_effect=word_effect)


def select_fragments(candidates: list[Fragment], m: int,
                     require_nonoverlap: bool = True,
                     fired: set[tuple[int, int]] | None = None) -> list[Fragment]:
    """Greedy descending-score selection with overlap skipping.

    Ties break by smaller start, then smaller length. ``fired`` restricts
    the candidate set to the given spans (the Grad-CAM case).
    """
    pool = [c for c in candidates if fired is None or c.span in fired]
    pool.sort(key=lambda f: (-f.score, f.span[0], f.span[1]))
    chosen: list[Fragment] = []
    for cand in pool:
        if len(chosen) >= m:
            break
        if require_nonoverlap and any(cand.overlaps(c) for c in chosen):
            continue
        chosen.append(cand)
    return chosen


# ----------------------------------------------------------------------
# explanation assembly
# ----------------------------------------------------------------------

def _word_explanation(method, rel, target_class, m):
    """Highest positive scores as evidence, lowest negative as counter."""
    pos = sorted((i for i in range(len(rel)) if rel[i] > 0),
                 key=lambda i: (-rel[i], i))
    neg = sorted((i for i in range(len(rel)) if rel[i] < 0),
                 key=lambda i: (rel[i], i))
    ev = [Fragment((i, 1), "word", float(rel[i])) for i in pos[:m]]
    ce = [Fragment((i, 1), "word", float(rel[i])) for i in neg[:m]]
    return Explanation(method, target_class, ev, ce, m)


def _ngram_explanation(method, rel, target_class, m, sizes):
    cands = ngram_scores(rel, sizes)
    ev = select_fragments([c for c in cands if c.score > 0], m)
    flipped = [Fragment(c.span, c.kind, -c.score) for c in cands if c.score < 0]
    ce = [Fragment(c.span, c.kind, -c.score)
          for c in select_fragments(flipped, m)]
    return Explanation(method, target_class, ev, ce, m)


def _gradcam_candidates(prediction: Prediction, effect: FilterEffect,
                        n_tok: int) -> list[Fragment]:
    spans = {}
    for s, n in prediction.feature.spans:
        if s >= n_tok:  # span entirely in padding
            continue
        score = float(effect.word_effect[s:s + n].sum())
        spans[(s, n)] = Fragment((s, n), "ngram", score)
    return list(spans.values())


def gradcam_explanation(model: CnnModel, tokens, target_class: int,
                        m: int) -> Explanation:
    """Evidence and counter-evidence among the spans the filters fired on,
    ranked by summed word effects. Counter scores are stored negated so
    the strongest counter-evidence comes first."""
    pred = forward(model, tokens)
    n_tok = len(encode_tokens(model, tokens))
    ev_eff = gradcam_text(model, pred, target_class, "evidence")
    ce_eff = gradcam_text(model, pred, target_class, "counter")
    ev = select_fragments(
        [c for c in _gradcam_candidates(pred, ev_eff, n_tok) if c.score > 0], m)
    ce = select_fragments(
        [c for c in _gradcam_candidates(pred, ce_eff, n_tok) if c.score > 0], m)
    ce = [Fragment(c.span, c.kind, -c.score) for c in ce]
    return Explanation("gradcam", target_class, ev, ce, m)


def explain_document(model: CnnModel, seq: TokenSequence, method: str,
                     m: int = 3, target_class: int | None = None,
                     seed: int = 0, n_samples: int = DEFAULT_LIME_SAMPLES,
                     epsilon: float = DEFAULT_EPSILON, trees=None) -> Explanation:
    """Run one of the nine methods on a tokenized document.

    The target class defaults to the model's prediction. ``trees`` is the
    extracted surrogate forest, required only for method "dt".
    """
    if method not in METHODS:
        raise ExplainError(f"unknown method {method!r}")
    seq = truncate(seq, model.max_tokens)
    if target_class is None:
        target_class = forward(model, seq).predicted_class
    sizes = tuple(model.filters.sizes)
    if method == "random-w":
        expl = random_words(seq, m, seed)
    elif method == "random-n":
        expl = random_ngrams(seq, m, sizes, seed)
    elif method == "lime":
        rel = lime_explain(model, seq, target_class, n_samples, seed)
        expl = _word_explanation("lime", rel, target_class, m)
    elif method == "lrp-w":
        rel = lrp_words(model, seq, target_class, epsilon)
        expl = _word_explanation("lrp-w", rel, target_class, m)
    elif method == "lrp-n":
        rel = lrp_words(model, seq, target_class, epsilon)
        expl = _ngram_explanation("lrp-n", rel, target_class, m, sizes)
    elif method == "deeplift-w":
        rel = deeplift_words(model, seq, target_class)
        expl = _word_explanation("deeplift-w", rel, target_class, m)
    elif method == "deeplift-n":
        rel = deeplift_words(model, seq, target_class)
        expl = _ngram_explanation("deeplift-n", rel, target_class, m, sizes)
    elif method == "gradcam":
        expl = gradcam_explanation(model, seq, target_class, m)
    else:  # dt
        if trees is None:
            raise ExplainError("method 'dt' needs the extracted trees")
        from .surrogate import dt_local_explain
        expl = dt_local_explain(model, trees, seq, m)
    expl.target_class = target_class
    expl.method = method
    return expl


def explanation_record(doc_id: str, expl: Explanation,
                       seq: TokenSequence) -> dict:
    """Export form of one explanation; ``text`` is the detokenized span."""
    def frags(lst):
        return [{"start": f.span[0], "count": f.span[1],
                 "score": f.score, "text": seq.span_text(*f.span)}
                for f in lst]

    return {"doc_id": doc_id, "method": expl.method,
            "target_class": expl.target_class,
            "evidence": frags(expl.evidence),
            "counter_evidence": frags(expl.counter_evidence)}


def write_explanations(path, records) -> None:
    import json
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
