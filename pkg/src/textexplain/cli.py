"""Command-line front end: train a classifier, explain predictions,
extract surrogate trees, generate study question banks, score answer
logs, and print the aggregate report table."""

from __future__ import annotations

import argparse
import json
import sys

from . import corpus
from .attribution import (
    DEFAULT_EPSILON,
    DEFAULT_LIME_SAMPLES,
    METHOD_NAMES,
    METHODS,
    explain_document,
)
from .corpus import (
    AMAZON_CLASSES,
    ARXIV_CLASSES,
    EmbeddingTable,
    docs_by_id,
    make_splits,
    tokenize,
    truncate,
)
from .study import (
    StudyConfig,
    agreement_counts,
    aggregate,
    answer_from_record,
    fleiss_kappa,
    generate_questions,
    question_from_record,
    question_record,
    read_jsonl,
    score_records,
    select_task1_inputs,
    select_task2_inputs,
    select_task3_inputs,
    write_jsonl,
)
from .surrogate import extract_trees, fidelity, load_surrogate, \
    save_surrogate, tree_report
from .textcnn import TrainConfig, evaluate, init_model, load_model, \
    save_model, train
from . import synth


def _load_docs(path, family):
    if family == "reviews":
        return corpus.load_amazon(path)
    return corpus.load_arxiv(path)


def _classes(family):
    return AMAZON_CLASSES if family == "reviews" else ARXIV_CLASSES


def _split_docs(docs, sizes, seed):
    if sizes is None:
        n = len(docs)
        sizes = (int(n * 0.8), int(n * 0.1),
                 n - int(n * 0.8) - int(n * 0.1))
    split = make_splits(docs, tuple(sizes), seed)
    by_id = docs_by_id(docs)
    return ([by_id[i] for i in split.train],
            [by_id[i] for i in split.validation],
            [by_id[i] for i in split.test])


def cmd_synth_corpus(args):
    if args.family == "reviews":
        docs = synth.synth_reviews(args.n, seed=args.seed,
                                   ambiguous=args.ambiguous,
                                   flipped=args.flipped)
        synth.write_reviews_csv(docs, f"{args.out}.csv")
        vocab = synth.review_vocabulary()
        print(f"wrote {len(docs)} reviews to {args.out}.csv")
    else:
        docs = synth.synth_abstracts(args.n, seed=args.seed,
                                     ambiguous=args.ambiguous,
                                     flipped=args.flipped)
        synth.write_abstracts_jsonl(docs, f"{args.out}.jsonl")
        vocab = synth.abstract_vocabulary()
        print(f"wrote {len(docs)} abstracts to {args.out}.jsonl")
    table = synth.synth_embedding(vocab, dim=args.dim, seed=args.seed)
    synth.write_embedding_file(table, f"{args.out}.embedding.txt")
    print(f"wrote {len(vocab)} x {args.dim} embedding to "
          f"{args.out}.embedding.txt")


def cmd_train(args):
    docs = _load_docs(args.dataset, args.family)
    table = EmbeddingTable.from_file(args.embedding)
    train_docs, val_docs, test_docs = _split_docs(docs, args.sizes,
                                                  args.seed)
    model = init_model(table, _classes(args.family), seed=args.seed)
    _, history = train(model, train_docs, val_docs,
                       TrainConfig(max_epochs=args.epochs,
                                   patience=args.patience,
                                   seed=args.seed))
    for entry in history:
        print(f"epoch {entry['epoch']}: train loss "
              f"{entry['train_loss']:.4f}, val loss "
              f"{entry['val_loss']:.4f}")
    if test_docs:
        print(evaluate(model, test_docs).to_text())
    save_model(model, args.out)
    print(f"saved model to {args.out}")


def cmd_explain(args):
    model = load_model(args.model)
    trees = load_surrogate(args.trees) if args.trees else None
    seq = truncate(tokenize(args.text), model.max_tokens)
    expl = explain_document(model, seq, args.method, m=args.m,
                            target_class=args.target_class,
                            seed=args.seed, n_samples=args.samples,
                            epsilon=args.epsilon, trees=trees)
    print(f"{METHOD_NAMES[expl.method]} explanation "
          f"(class {model.classes[expl.target_class]}):")
    for frag in expl.evidence:
        start, count = frag.span
        print(f"  evidence  {seq.span_text(start, count)!r} "
              f"(tokens {start}..{start + count - 1}, "
              f"score {frag.score:+.4f})")
    for frag in expl.counter_evidence:
        start, count = frag.span
        print(f"  counter   {seq.span_text(start, count)!r} "
              f"(tokens {start}..{start + count - 1}, "
              f"score {frag.score:+.4f})")
    if not expl.evidence and not expl.counter_evidence:
        print("  (no fragments)")


def cmd_extract_dt(args):
    model = load_model(args.model)
    docs = _load_docs(args.dataset, args.family)
    train_docs, val_docs, test_docs = _split_docs(docs, args.sizes,
                                                  args.seed)
    surr = extract_trees(model, train_docs, val_docs,
                         min_leaf=args.min_leaf, max_depth=args.max_depth)
    print(tree_report(surr, model.classes))
    if test_docs:
        print(f"fidelity (macro-F1 vs model): "
              f"{fidelity(surr, model, test_docs):.4f}")
    save_surrogate(surr, args.out)
    print(f"saved trees to {args.out}")


def cmd_make_study(args):
    model = load_model(args.model)
    docs = _load_docs(args.dataset, args.family)
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    config = StudyConfig(m=args.m, tau_h=args.tau_h, tau_l=args.tau_l,
                         questions_per_task=args.questions,
                         raters_per_question=args.raters,
                         methods=methods, seed=args.seed,
                         lime_samples=args.lime_samples)
    trees = load_surrogate(args.trees) if args.trees else None
    if args.task == 1:
        if not args.worse_model:
            raise SystemExit("task 1 needs --worse-model")
        worse = load_model(args.worse_model)
        worse_trees = load_surrogate(args.worse_trees) \
            if args.worse_trees else None
        inputs = select_task1_inputs(model, worse, docs, config)
        questions = generate_questions(1, inputs, methods, (model, worse),
                                       config, trees=(trees, worse_trees))
    else:
        select = select_task2_inputs if args.task == 2 \
            else select_task3_inputs
        inputs = select(model, docs, config)
        questions = generate_questions(args.task, inputs, methods, model,
                                       config, trees=trees)
    write_jsonl(args.out, [question_record(q) for q in questions])
    print(f"wrote {len(questions)} task-{args.task} questions to "
          f"{args.out}")


def _read_bank_and_answers(args):
    questions = [question_from_record(d) for d in read_jsonl(args.questions)]
    answers = [answer_from_record(d) for d in read_jsonl(args.answers)]
    return questions, answers


def cmd_score(args):
    questions, answers = _read_bank_and_answers(args)
    records = score_records(questions, answers)
    out = [{"question_id": r.question_id, "scores": r.scores,
            "mean": r.mean} for r in records]
    if args.out:
        write_jsonl(args.out, out)
        print(f"wrote {len(out)} score records to {args.out}")
    else:
        for rec in out:
            print(json.dumps(rec))


def _n_options(questions):
    n = 2
    for q in questions:
        if q.task == 3 and "p" in q.payload:
            n = max(n, len(q.payload["p"]))
        for key in ("predicted_class", "gold_label"):
            if key in q.hidden_key:
                n = max(n, int(q.hidden_key[key]) + 1)
    return n


def cmd_report(args):
    questions, answers = _read_bank_and_answers(args)
    by_task = {}
    for q in questions:
        by_task.setdefault(q.task, []).append(q)
    for task in sorted(by_task):
        bank = by_task[task]
        mine = {q.id for q in bank}
        task_answers = [a for a in answers if a.question_id in mine]
        if not task_answers:
            continue
        print(f"== Task {task} ==")
        rep = aggregate(bank, task_answers)
        rep.kappa = _task_kappa(task, bank, task_answers)
        print(rep.to_text())
        print()


def _task_kappa(task, bank, answers):
    mine = {q.id for q in bank}
    task_answers = [a for a in answers if a.question_id in mine]
    per_q = {}
    for a in task_answers:
        per_q.setdefault(a.question_id, []).append(a)
    counts = {len(v) for v in per_q.values()}
    if len(counts) != 1:
        return {"with_confidence": None, "without_confidence": None}
    n_opt = _n_options(bank)
    out = {}
    for key, with_conf in (("with_confidence", True),
                           ("without_confidence", False)):
        table = agreement_counts(task, bank, task_answers, n_opt, with_conf)
        out[key] = fleiss_kappa(table)
    return out


def cmd_serve(args):
    import uvicorn

    from .service import StudyService, create_app
    questions = [question_from_record(d)
                 for d in read_jsonl(args.questions)]
    service = StudyService(questions, args.log,
                           raters_per_question=args.raters,
                           class_names=list(_classes(args.family)))
    uvicorn.run(create_app(service), host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textexplain",
        description="train, explain, and run rater studies over a 1-d "
                    "convolutional text classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_family(p):
        p.add_argument("--family", choices=("reviews", "abstracts"),
                       default="reviews")

    p = sub.add_parser("synth-corpus", help="generate a synthetic corpus "
                       "and embedding")
    add_family(p)
    p.add_argument("--n", type=int, default=14000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--ambiguous", type=float, default=0.12)
    p.add_argument("--flipped", type=float, default=0.05)
    p.add_argument("--out", required=True,
                   help="output path prefix")
    p.set_defaults(func=cmd_synth_corpus)

    p = sub.add_parser("train", help="train the classifier")
    add_family(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--embedding", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", type=int, nargs=3, default=None,
                   help="train/validation/test sizes (default 80/10/10)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="explain one prediction")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--target-class", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=DEFAULT_LIME_SAMPLES)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--trees", default=None,
                   help="surrogate tree file (for method dt)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("extract-dt", help="fit surrogate decision trees")
    add_family(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--max-depth", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", type=int, nargs=3, default=None)
    p.set_defaults(func=cmd_extract_dt)

    p = sub.add_parser("make-study", help="generate a question bank")
    add_family(p)
    p.add_argument("--task", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", required=True)
    p.add_argument("--worse-model", default=None)
    p.add_argument("--trees", default=None)
    p.add_argument("--worse-trees", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--questions", type=int, default=100)
    p.add_argument("--raters", type=int, default=3)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--tau-h", type=float, default=0.9)
    p.add_argument("--tau-l", type=float, default=0.7)
    p.add_argument("--lime-samples", type=int,
                   default=DEFAULT_LIME_SAMPLES)
    p.add_argument("--methods", default=None,
                   help="comma-separated subset of the nine methods")
    p.set_defaults(func=cmd_make_study)

    p = sub.add_parser("score", help="score an answer log")
    p.add_argument("--answers", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="aggregate table per task")
    p.add_argument("--answers", required=True)
    p.add_argument("--questions", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the rater-facing service")
    add_family(p)
    p.add_argument("--questions", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--raters", type=int, default=3)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
