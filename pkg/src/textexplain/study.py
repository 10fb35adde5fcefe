"""Human-evaluation study harness: three question-generation tasks,
answer scoring, and score aggregation.

Task 1 shows one text with both models' highlighted evidence and asks
which model is more reasonable. Task 2 shows only the evidence texts of a
high-confidence prediction and asks which class they point to. Task 3
shows the predicted class, its probabilities, and evidence plus
counter-evidence of a low-confidence prediction and asks for the actual
class (here counter-evidence is presented as evidence for the other
classes, and no-preference is not available).

Scores per answer: +-1.0 when confident, +-0.5 when not, 0.0 for
no-preference. Aggregation averages per question over raters, then per
method within each stratum (correctly classified / misclassified), and a
Welch t-test compares every method against the column best at 0.05.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .attribution import DEFAULT_EPSILON, DEFAULT_LIME_SAMPLES, METHODS, \
    explain_document
from .corpus import Document, tokenize, truncate
from .textcnn import CnnModel, forward_many, encode_tokens, softmax


class StudyError(Exception):
    """Invalid study configuration, selection shortfall, or illegal answer."""


@dataclass
class StudyConfig:
    """Parameters of one study. ``questions_per_task`` counts input texts;
    each text yields one question per method."""

    m: int = 3
    tau_h: float = 0.9
    tau_l: float = 0.7
    questions_per_task: int = 100
    raters_per_question: int = 3
    methods: tuple = METHODS
    seed: int = 0
    lime_samples: int = DEFAULT_LIME_SAMPLES
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not (0 < self.tau_l <= self.tau_h < 1):
            raise StudyError("thresholds must satisfy 0 < tau_l <= tau_h < 1")
        if self.questions_per_task % 2:
            raise StudyError("questions_per_task must be even for the "
                             "correct/misclassified split")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise StudyError(f"unknown methods: {unknown}")


@dataclass
class TaskQuestion:
    id: str
    task: int
    doc_id: str
    method: str
    payload: dict
    hidden_key: dict
    stratum: str  # "correct" or "misclassified"
    flags: list = field(default_factory=list)


@dataclass
class Answer:
    question_id: str
    rater_id: str
    choice: object  # "A"/"B"/"none" for task 1, class index or "none" for 2, class index for 3
    confident: bool
    timestamp: float = 0.0


@dataclass
class ScoreRecord:
    question_id: str
    scores: list
    mean: float


# ----------------------------------------------------------------------
# input selection
# ----------------------------------------------------------------------

def predict_with_probs(model: CnnModel, docs: list[Document]):
    ids = [encode_tokens(model, tokenize(d.text)) for d in docs]
    logits, _ = forward_many(model, ids)
    return logits.argmax(axis=1), softmax(logits)


def _sample_half_half(correct_pool: list, wrong_pool: list, total: int,
                      rng, what: str):
    half = total // 2
    if len(correct_pool) < half:
        raise StudyError(
            f"{what}: stratum 'correct' has {len(correct_pool)} eligible "
            f"documents, need {half}")
    if len(wrong_pool) < half:
        raise StudyError(
            f"{what}: stratum 'misclassified' has {len(wrong_pool)} eligible "
            f"documents, need {half}")
    pick_c = [correct_pool[i] for i in rng.permutation(len(correct_pool))[:half]]
    pick_w = [wrong_pool[i] for i in rng.permutation(len(wrong_pool))[:half]]
    return pick_c + pick_w


def select_task1_inputs(model_good: CnnModel, model_bad: CnnModel,
                        docs: list[Document], config: StudyConfig):
    """Documents both models classify identically, half of them correctly.

    Returns (document, shared predicted class) pairs.
    """
    pred_g, _ = predict_with_probs(model_good, docs)
    pred_b, _ = predict_with_probs(model_bad, docs)
    correct, wrong = [], []
    for i, doc in enumerate(docs):
        if pred_g[i] != pred_b[i]:
            continue
        pair = (doc, int(pred_g[i]))
        (correct if pred_g[i] == doc.label else wrong).append(pair)
    rng = np.random.default_rng(config.seed)
    return _sample_half_half(correct, wrong, config.questions_per_task, rng,
                             "task 1")


def _select_by_confidence(model, docs, config, keep, what):
    pred, probs = predict_with_probs(model, docs)
    top = probs.max(axis=1)
    correct, wrong = [], []
    for i, doc in enumerate(docs):
        if not keep(top[i]):
            continue
        (correct if pred[i] == doc.label else wrong).append(doc)
    rng = np.random.default_rng(config.seed)
    return _sample_half_half(correct, wrong, config.questions_per_task, rng,
                             what)


def select_task2_inputs(model: CnnModel, docs: list[Document],
                        config: StudyConfig) -> list[Document]:
    """High-confidence predictions: max_c p_c strictly above tau_h."""
    return _select_by_confidence(model, docs, config,
                                 lambda p: p > config.tau_h, "task 2")


def select_task3_inputs(model: CnnModel, docs: list[Document],
                        config: StudyConfig) -> list[Document]:
    """Low-confidence predictions: max_c p_c strictly below tau_l."""
    return _select_by_confidence(model, docs, config,
                                 lambda p: p < config.tau_l, "task 3")


# ----------------------------------------------------------------------
# question generation
# ----------------------------------------------------------------------

def _fragment_payload(fragments, seq):
    """Fragments with token span, char offsets, and display text, for
    in-text highlighting."""
    out = []
    for f in fragments:
        start, count = f.span
        end_tok = min(start + count, len(seq.tokens)) - 1
        out.append({"start": start, "count": count,
                    "char_start": seq.offsets[start][0],
                    "char_end": seq.offsets[end_tok][1],
                    "text": seq.span_text(start, count)})
    return out


def _fragment_texts(fragments, seq):
    return [seq.span_text(*f.span) for f in fragments]


def _explain(model, seq, method, target, config, seed, trees):
    return explain_document(model, seq, method, m=config.m,
                            target_class=target, seed=seed,
                            n_samples=config.lime_samples,
                            epsilon=config.epsilon, trees=trees)


def generate_questions(task: int, inputs, methods, models,
                       config: StudyConfig, trees=None) -> list[TaskQuestion]:
    """One question per (document, method), in deterministic order.

    ``models`` is (well-trained, worse) for task 1 and a single model for
    tasks 2 and 3. ``trees`` holds each model's surrogate forest when the
    "dt" method is in play: (trees_good, trees_bad) for task 1, one for
    the rest.
    """
    if task not in (1, 2, 3):
        raise StudyError(f"unknown task {task}")
    rng = np.random.default_rng(config.seed + task)
    questions = []
    if task == 1:
        model_good, model_bad = models
        trees_good, trees_bad = trees if trees is not None else (None, None)
        for doc, shared in inputs:
            seq = truncate(tokenize(doc.text), model_good.max_tokens)
            stratum = "correct" if shared == doc.label else "misclassified"
            for method in methods:
                seed = int(rng.integers(0, 2 ** 31))
                good_first = bool(rng.integers(0, 2))
                ev_g = _explain(model_good, seq, method, shared, config,
                                seed, trees_good).evidence
                ev_b = _explain(model_bad, seq, method, shared, config,
                                seed, trees_bad).evidence
                pair = (ev_g, ev_b) if good_first else (ev_b, ev_g)
                q = TaskQuestion(
                    id=f"t1-{doc.id}-{method}", task=1, doc_id=doc.id,
                    method=method,
                    payload={"text": doc.text,
                             "predicted_class": model_good.classes[shared],
                             "evidence_a": _fragment_payload(pair[0], seq),
                             "evidence_b": _fragment_payload(pair[1], seq)},
                    hidden_key={"well_trained": "A" if good_first else "B"},
                    stratum=stratum)
                if not ev_g or not ev_b:
                    q.flags.append("empty-evidence")
                questions.append(q)
        return questions

    model = models if isinstance(models, CnnModel) else models[0]
    pred, probs = predict_with_probs(model, [d for d in inputs])
    for i, doc in enumerate(inputs):
        seq = truncate(tokenize(doc.text), model.max_tokens)
        j = int(pred[i])
        stratum = "correct" if j == doc.label else "misclassified"
        for method in methods:
            seed = int(rng.integers(0, 2 ** 31))
            expl = _explain(model, seq, method, j, config, seed, trees)
            if task == 2:
                payload = {"evidence": _fragment_texts(expl.evidence, seq)}
                hidden = {"predicted_class": j}
            else:
                payload = {"predicted_class": model.classes[j],
                           "p": [float(x) for x in probs[i]],
                           "evidence": _fragment_texts(expl.evidence, seq),
                           "counter_evidence": _fragment_texts(
                               expl.counter_evidence, seq)}
                hidden = {"gold_label": doc.label}
            q = TaskQuestion(id=f"t{task}-{doc.id}-{method}", task=task,
                             doc_id=doc.id, method=method, payload=payload,
                             hidden_key=hidden, stratum=stratum)
            if not expl.evidence:
                q.flags.append("empty-evidence")
            if task == 3 and not expl.counter_evidence:
                q.flags.append("empty-counter-evidence")
            questions.append(q)
    return questions


# ----------------------------------------------------------------------
# scoring
# ----------------------------------------------------------------------

def validate_answer(question: TaskQuestion, answer: Answer,
                    n_classes: int | None = None) -> None:
    choice = answer.choice
    if question.task == 1:
        if choice not in ("A", "B", "none"):
            raise StudyError(f"task 1 choice must be A, B, or none, "
                             f"got {choice!r}")
        return
    if question.task == 3:
        if choice == "none":
            raise StudyError("no-preference is not available on task 3")
        if n_classes is None:
            n_classes = len(question.payload.get("p", ())) or None
    if choice == "none":
        return
    if not isinstance(choice, int) or isinstance(choice, bool):
        suffix = " or none" if question.task == 2 else ""
        raise StudyError(f"task {question.task} choice must be a class "
                         f"index{suffix}, got {choice!r}")
    if choice < 0 or (n_classes is not None and choice >= n_classes):
        raise StudyError(f"task {question.task} choice {choice} is not a "
                         f"valid class index")


def score_answer(question: TaskQuestion, answer: Answer) -> float:
    """Table-mandated mapping from (correctness, confidence) to a score."""
    validate_answer(question, answer)
    if answer.choice == "none":
        return 0.0
    if question.task == 1:
        correct = answer.choice == question.hidden_key["well_trained"]
    elif question.task == 2:
        correct = answer.choice == question.hidden_key["predicted_class"]
    else:
        correct = answer.choice == question.hidden_key["gold_label"]
    magnitude = 1.0 if answer.confident else 0.5
    return magnitude if correct else -magnitude


def score_records(questions: list[TaskQuestion],
                  answers: list[Answer]) -> list[ScoreRecord]:
    """Per-question score lists and means, in question order; questions
    without answers are omitted."""
    by_id = {q.id: q for q in questions}
    grouped: dict[str, list[float]] = {}
    for ans in answers:
        q = by_id.get(ans.question_id)
        if q is None:
            raise StudyError(f"answer references unknown question "
                             f"{ans.question_id!r}")
        grouped.setdefault(q.id, []).append(score_answer(q, ans))
    return [ScoreRecord(q.id, grouped[q.id],
                        float(np.mean(grouped[q.id])))
            for q in questions if q.id in grouped]


# ----------------------------------------------------------------------
# aggregation
# ----------------------------------------------------------------------

STRATA = ("All", "Correct", "Misclassified")


def _welch_p(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.var() == 0.0 and b.var() == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    if len(a) < 2 or len(b) < 2:
        return 1.0
    p = stats.ttest_ind(a, b, equal_var=False).pvalue
    return 1.0 if np.isnan(p) else float(p)


@dataclass
class AggregateCell:
    mean: float
    n: int
    on_par_with_best: bool  # not significantly worse than the column best


@dataclass
class AggregateReport:
    methods: list
    cells: dict  # (method, stratum) -> AggregateCell
    alpha: float = 0.05
    kappa: dict = field(default_factory=dict)

    def to_text(self) -> str:
        width = max(len(m) for m in self.methods + ["Method"])
        header = f"{'Method':<{width}}  " + "  ".join(
            f"{s:>14}" for s in STRATA)
        lines = [header]
        for method in self.methods:
            row = [f"{method:<{width}}"]
            for stratum in STRATA:
                cell = self.cells.get((method, stratum))
                if cell is None or cell.n == 0:
                    row.append(f"{'--':>14}")
                else:
                    mark = "*" if cell.on_par_with_best else " "
                    row.append(f"{cell.mean:>12.3f}{mark} ")
            lines.append("  ".join(row))
        if self.kappa:
            parts = []
            for key in ("with_confidence", "without_confidence"):
                val = self.kappa.get(key)
                parts.append("N/A" if val is None else f"{val:.3f}")
            lines.append(f"Fleiss kappa: {parts[0]} / {parts[1]}")
        lines.append(f"(* not significantly worse than the column best; "
                     f"Welch two-sided t-test, alpha={self.alpha})")
        return "\n".join(lines)


def aggregate(questions: list[TaskQuestion], answers: list[Answer],
              alpha: float = 0.05, methods=None) -> AggregateReport:
    """Per-method mean of per-question rater means, split by stratum, with
    a Welch t-test of every method against the column best."""
    records = {r.question_id: r for r in score_records(questions, answers)}
    by_q = {q.id: q for q in questions}
    if methods is None:
        methods = sorted({q.method for q in questions},
                         key=lambda m: METHODS.index(m) if m in METHODS else 99)
    samples: dict[tuple, list] = {(m, s): [] for m in methods for s in STRATA}
    for qid, rec in records.items():
        q = by_q[qid]
        samples[(q.method, "All")].append(rec.mean)
        stratum = "Correct" if q.stratum == "correct" else "Misclassified"
        samples[(q.method, stratum)].append(rec.mean)
    cells = {}
    for stratum in STRATA:
        col = {m: samples[(m, stratum)] for m in methods}
        nonempty = {m: v for m, v in col.items() if v}
        best = max(nonempty, key=lambda m: np.mean(nonempty[m])) \
            if nonempty else None
        for m in methods:
            vals = col[m]
            if not vals:
                cells[(m, stratum)] = AggregateCell(float("nan"), 0, False)
                continue
            on_par = m == best or _welch_p(vals, col[best]) >= alpha
            cells[(m, stratum)] = AggregateCell(float(np.mean(vals)),
                                                len(vals), on_par)
    return AggregateReport(methods=list(methods), cells=cells, alpha=alpha)


# ----------------------------------------------------------------------
# inter-rater agreement
# ----------------------------------------------------------------------

def fleiss_kappa(counts: np.ndarray):
    """Fleiss' kappa from an (questions x categories) assignment-count
    table. Every question must have the same rater count; with fewer than
    2 raters the statistic is undefined and None is returned."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] == 0:
        raise StudyError("counts must be a non-empty 2-d table")
    raters = counts.sum(axis=1)
    if not np.all(raters == raters[0]):
        raise StudyError("every question needs the same number of ratings")
    n = float(raters[0])
    if n < 2:
        return None
    big_n = counts.shape[0]
    p_cat = counts.sum(axis=0) / (big_n * n)
    p_i = ((counts * counts).sum(axis=1) - n) / (n * (n - 1))
    p_bar = p_i.mean()
    p_e = float((p_cat * p_cat).sum())
    if p_e == 1.0:
        return 1.0  # single category used everywhere: perfect agreement
    return float((p_bar - p_e) / (1.0 - p_e))


def answer_categories(task: int, n_options: int, with_confidence: bool):
    """Category labels for the agreement table.

    Options are A/B for task 1 and class indices otherwise; tasks 1 and 2
    add a no-preference category.
    """
    options = ["A", "B"] if task == 1 else list(range(n_options))
    cats = []
    for opt in options:
        if with_confidence:
            cats.append((opt, True))
            cats.append((opt, False))
        else:
            cats.append((opt, None))
    if task in (1, 2):
        cats.append(("none", None))
    return cats


def agreement_counts(task: int, questions, answers, n_options: int,
                     with_confidence: bool) -> np.ndarray:
    """Build the Fleiss count table for the answered questions."""
    cats = answer_categories(task, n_options, with_confidence)
    index = {c: i for i, c in enumerate(cats)}
    grouped: dict[str, list[Answer]] = {}
    for ans in answers:
        grouped.setdefault(ans.question_id, []).append(ans)
    rows = []
    for q in questions:
        if q.id not in grouped:
            continue
        row = np.zeros(len(cats))
        for ans in grouped[q.id]:
            if ans.choice == "none":
                key = ("none", None)
            elif with_confidence:
                key = (ans.choice, bool(ans.confident))
            else:
                key = (ans.choice, None)
            if key not in index:
                raise StudyError(f"answer {key[0]!r} on {q.id} is outside "
                                 f"the category table")
            row[index[key]] += 1
        rows.append(row)
    if not rows:
        raise StudyError("no answered questions")
    return np.stack(rows)


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def question_record(q: TaskQuestion) -> dict:
    return {"id": q.id, "task": q.task, "doc_id": q.doc_id,
            "method": q.method, "payload": q.payload,
            "hidden_key": q.hidden_key, "stratum": q.stratum,
            "flags": q.flags}


def question_from_record(d: dict) -> TaskQuestion:
    return TaskQuestion(id=d["id"], task=d["task"], doc_id=d["doc_id"],
                        method=d["method"], payload=d["payload"],
                        hidden_key=d["hidden_key"], stratum=d["stratum"],
                        flags=list(d.get("flags", [])))


def public_view(q: TaskQuestion) -> dict:
    """What a rater may see: no hidden key, stratum, method, or flags."""
    return {"id": q.id, "task": q.task, "payload": q.payload}


def answer_record(a: Answer) -> dict:
    return {"question_id": a.question_id, "rater_id": a.rater_id,
            "choice": a.choice, "confident": a.confident,
            "timestamp": a.timestamp}


def answer_from_record(d: dict) -> Answer:
    return Answer(question_id=d["question_id"], rater_id=d["rater_id"],
                  choice=d["choice"], confident=bool(d["confident"]),
                  timestamp=float(d.get("timestamp", 0.0)))


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(json.loads(line))
    return out
