"""Seeded synthetic corpora and embeddings for desk-scale experiments.

Two families: product-review sentiment (binary) and abstract topic
classification (three classes). Documents are neutral filler with
injected cue words; a slice of each corpus is made deliberately hard:

- ``ambiguous`` documents carry equally many cues for two classes, so a
  trained classifier sits near the decision boundary (low confidence);
- ``flipped`` documents read clearly like one class but carry the other
  label, so a trained classifier errs with high confidence.

Cues are single words or negation bigrams ("not great" counts against
the positive class), which gives the convolution filters a compositional
signal that one epoch of training tends to miss.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .corpus import AMAZON_CLASSES, ARXIV_CLASSES, Document, EmbeddingTable

POSITIVE_WORDS = [
    "great", "excellent", "wonderful", "fantastic", "amazing", "superb",
    "delightful", "perfect", "loved", "brilliant", "outstanding", "crisp",
    "sturdy", "reliable", "comfortable", "beautiful", "impressive",
    "smooth", "generous", "charming", "refreshing", "solid", "flawless",
    "joy", "bargain", "recommend", "pleased", "happy",
]

NEGATIVE_WORDS = [
    "terrible", "awful", "horrible", "disappointing", "useless", "broken",
    "flimsy", "defective", "worthless", "dreadful", "annoying", "cheap",
    "ugly", "uncomfortable", "unreliable", "noisy", "leaked", "cracked",
    "refund", "waste", "regret", "poor", "failed", "stuck", "smelly",
    "scratched", "misleading", "angry",
]

NEGATORS = ["not", "never", "hardly"]

NEUTRAL_WORDS = [
    "the", "a", "this", "that", "it", "was", "is", "and", "but", "with",
    "for", "on", "in", "box", "item", "product", "order", "package",
    "store", "price", "size", "color", "model", "battery", "cable",
    "screen", "cover", "book", "pages", "chapter", "author", "music",
    "album", "song", "movie", "film", "kitchen", "table", "bottle",
    "shoes", "shirt", "fabric", "plastic", "metal", "arrived", "bought",
    "ordered", "opened", "used", "tried", "returned", "shipping",
    "delivery", "week", "month", "day", "after", "before", "again",
    "still", "maybe", "quite", "really", "very", "just", "also",
]

TOPIC_WORDS = {
    "CS": ["algorithm", "compiler", "network", "classifier", "database",
           "parsing", "heuristic", "benchmark", "software", "runtime",
           "neural", "graph", "protocol", "encryption", "scheduler",
           "cache", "query", "automaton", "complexity", "embedding"],
    "MA": ["theorem", "lemma", "manifold", "algebra", "topology",
           "conjecture", "polynomial", "homomorphism", "integral",
           "convergence", "measure", "operator", "lattice", "functor",
           "cohomology", "eigenvalue", "variety", "metric", "ergodic",
           "combinatorial"],
    "PH": ["quantum", "photon", "plasma", "relativity", "boson",
           "entanglement", "superconductor", "neutrino", "cosmology",
           "laser", "magnetization", "spin", "particle", "galaxy",
           "thermodynamic", "radiation", "scattering", "vacuum",
           "interferometer", "dielectric"],
}

ACADEMIC_FILLER = [
    "we", "study", "the", "a", "of", "in", "propose", "show", "results",
    "method", "approach", "analysis", "model", "paper", "present",
    "framework", "consider", "class", "general", "problem", "bounds",
    "experiments", "data", "prove", "obtain", "discuss", "introduce",
    "novel", "several", "previous", "work", "known", "case", "under",
    "conditions", "properties", "structure", "terms", "first", "finally",
]

SUBTOPICS = {
    "CS": ["Computation and Language", "Machine Learning"],
    "MA": ["Dynamical Systems", "Algebraic Geometry"],
    "PH": ["Quantum Physics", "Optics"],
}


def review_vocabulary() -> list[str]:
    return sorted(set(POSITIVE_WORDS + NEGATIVE_WORDS + NEGATORS
                      + NEUTRAL_WORDS))


def abstract_vocabulary() -> list[str]:
    words = set(ACADEMIC_FILLER + NEGATORS)
    for pool in TOPIC_WORDS.values():
        words.update(pool)
    return sorted(words)


def synth_embedding(vocab, dim: int = 64, seed: int = 0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    return EmbeddingTable(list(vocab),
                          rng.normal(0.0, 0.4, size=(len(vocab), dim)))


def _inject(words, cue, rng):
    pos = int(rng.integers(0, len(words) + 1))
    words[pos:pos] = cue


def _sentiment_cue(polarity: int, rng) -> list[str]:
    """polarity 1 = positive, 0 = negative.

    A third of negative cues are negated positives ("not great"), so a
    model reading single words is pulled the wrong way there and only
    bigram filters resolve the polarity.
    """
    if polarity == 0 and rng.random() < 0.33:
        return [NEGATORS[int(rng.integers(0, len(NEGATORS)))],
                POSITIVE_WORDS[int(rng.integers(0, len(POSITIVE_WORDS)))]]
    pool = POSITIVE_WORDS if polarity == 1 else NEGATIVE_WORDS
    return [pool[int(rng.integers(0, len(pool)))]]


def synth_reviews(n: int, seed: int = 0, ambiguous: float = 0.12,
                  flipped: float = 0.05) -> list[Document]:
    """Balanced binary sentiment documents, ids ``rev-00000``... Labels
    follow AMAZON_CLASSES (0 negative, 1 positive)."""
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n):
        label = i % 2
        words = list(rng.choice(NEUTRAL_WORDS,
                                size=int(rng.integers(18, 40))))
        roll = rng.random()
        stored = label
        if roll < ambiguous:
            k = 1 + int(rng.integers(0, 2))
            for _ in range(k):
                _inject(words, _sentiment_cue(label, rng), rng)
                _inject(words, _sentiment_cue(1 - label, rng), rng)
        else:
            # clear documents carry cues of one polarity only: with
            # max-over-time pooling the classifier sees which n-grams
            # exist, not how many, so mixed-polarity texts are reserved
            # for the ambiguous slice
            for _ in range(2 + int(rng.integers(0, 3))):
                _inject(words, _sentiment_cue(label, rng), rng)
            if roll < ambiguous + flipped:
                stored = 1 - label
        docs.append(Document(id=f"rev-{i:05d}", text=" ".join(words),
                             label=stored))
    return docs


def synth_abstracts(n: int, seed: int = 0, ambiguous: float = 0.10,
                    flipped: float = 0.04) -> list[Document]:
    """Three-way topic documents, ids ``abs-00000``... Labels follow
    ARXIV_CLASSES; each document carries a plausible subtopic."""
    rng = np.random.default_rng(seed)
    docs = []
    for i in range(n):
        label = i % 3
        topic = ARXIV_CLASSES[label]
        words = list(rng.choice(ACADEMIC_FILLER,
                                size=int(rng.integers(20, 45))))
        roll = rng.random()
        stored = label
        if roll < ambiguous:
            other = ARXIV_CLASSES[(label + 1 + int(rng.integers(0, 2))) % 3]
            k = 1 + int(rng.integers(0, 2))
            for _ in range(k):
                _inject(words, [str(rng.choice(TOPIC_WORDS[topic]))], rng)
                _inject(words, [str(rng.choice(TOPIC_WORDS[other]))], rng)
        else:
            for _ in range(2 + int(rng.integers(0, 3))):
                _inject(words, [str(rng.choice(TOPIC_WORDS[topic]))], rng)
            if roll < ambiguous + flipped:
                stored = (label + 1 + int(rng.integers(0, 2))) % 3
        docs.append(Document(
            id=f"abs-{i:05d}", text=" ".join(words), label=stored,
            subtopic=str(rng.choice(SUBTOPICS[topic]))))
    return docs


# ----------------------------------------------------------------------
# file writers matching the corpus loaders
# ----------------------------------------------------------------------

def write_reviews_csv(docs, path) -> None:
    """CSV rows (label in {1, 2}, title, body) as the review loader
    expects; the first three words serve as the title."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for doc in docs:
            words = doc.text.split()
            writer.writerow([str(doc.label + 1), " ".join(words[:3]),
                             " ".join(words[3:])])


def write_abstracts_jsonl(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps({
                "categories": [ARXIV_CLASSES[doc.label]],
                "subtopic": doc.subtopic,
                "abstract": doc.text}) + "\n")


def write_embedding_file(table: EmbeddingTable, path) -> None:
    """Text embedding file (token then components) readable by
    EmbeddingTable.from_file. The out-of-vocabulary row is not written."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, tok in enumerate(table.tokens):
            comps = " ".join(f"{x:.8g}" for x in table.matrix[i])
            fh.write(f"{tok} {comps}\n")
