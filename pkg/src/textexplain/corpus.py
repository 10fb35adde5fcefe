"""Dataset loading, tokenization, embedding lookup, and split construction.

Two corpus formats are supported: a CSV review-polarity format (binary
sentiment) and a line-delimited JSON abstract format (three disjoint
subject classes, each record carrying a finer-grained subtopic).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

AMAZON_CLASSES = ("negative", "positive")
ARXIV_CLASSES = ("CS", "MA", "PH")

# Input token cap used by the classifier; long texts keep their head.
DEFAULT_MAX_TOKENS = 256


class CorpusError(Exception):
    """Malformed corpus or embedding input."""


@dataclass
class Document:
    id: str
    text: str
    label: int
    subtopic: str | None = None


@dataclass
class TokenSequence:
    """Tokens plus their (start, end) character offsets into the source text.

    Offsets are strictly increasing and non-overlapping, and every token is
    the exact source substring ``text[start:end]``.
    """

    tokens: list[str]
    offsets: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.tokens)

    def span_text(self, start: int, count: int) -> str:
        """Space-joined display form of a token span (clipped to bounds)."""
        return " ".join(self.tokens[start:start + count])


_CONTRACTION_TAILS = ("'s", "'m", "'d", "'ll", "'re", "'ve")


def _split_word(word: str, base: int) -> list[tuple[str, int, int]]:
    """Split contractions out of a raw word token.

    ``didn't`` becomes ``did`` + ``n't``; other internal apostrophes split
    before the apostrophe (``I'd`` -> ``I`` + ``'d``). Every piece remains an
    exact substring of the source.
    """
    lower = word.lower()
    if lower.endswith("n't") and len(word) > 3:
        cut = len(word) - 3
        return [(word[:cut], base, base + cut),
                (word[cut:], base + cut, base + len(word))]
    pos = word.find("'")
    if 0 < pos < len(word) - 1:
        head = [(word[:pos], base, base + pos)]
        rest = word[pos:]
        tail_lower = rest.lower()
        if tail_lower in _CONTRACTION_TAILS or "'" not in rest[1:]:
            return head + [(rest, base + pos, base + len(word))]
        # rare stacked contraction: recurse on the remainder
        return head + [(rest[:1], base + pos, base + pos + 1)] + \
            _split_word(rest[1:], base + pos + 1)
    return [(word, base, base + len(word))]


def tokenize(text: str) -> TokenSequence:
    """Penn-style word/punctuation tokenizer with character offsets.

    Alphanumeric runs form words (apostrophes bounded by alphanumerics stay
    attached and are split by the contraction rules afterwards). Punctuation
    is emitted as separate tokens; runs of one repeated punctuation character
    collapse into a single token, so ``12''`` yields ``12`` and ``''``.
    Case is preserved. Empty input yields an empty sequence.
    """
    tokens: list[str] = []
    offsets: list[tuple[int, int]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isalnum():
            j = i + 1
            while j < n:
                c = text[j]
                if c.isalnum():
                    j += 1
                elif c == "'" and j + 1 < n and text[j + 1].isalnum():
                    j += 2
                else:
                    break
            for tok, s, e in _split_word(text[i:j], i):
                tokens.append(tok)
                offsets.append((s, e))
            i = j
        else:
            j = i + 1
            while j < n and text[j] == ch:
                j += 1
            tokens.append(text[i:j])
            offsets.append((i, j))
            i = j
    return TokenSequence(tokens, offsets)


def detokenize(tokens: Sequence[str]) -> str:
    """Space-joined display form, matching how fragments are shown to raters."""
    return " ".join(tokens)


def truncate(seq: TokenSequence, max_tokens: int) -> TokenSequence:
    """Clip a sequence to the first ``max_tokens`` tokens."""
    if len(seq.tokens) <= max_tokens:
        return seq
    return TokenSequence(seq.tokens[:max_tokens], seq.offsets[:max_tokens])


class EmbeddingTable:
    """Immutable token -> vector lookup backed by a dense matrix.

    Out-of-vocabulary tokens map to the all-zero vector. Lookups fall back to
    the lowercased form so case-preserving tokenization still hits a
    lowercase vocabulary.
    """

    def __init__(self, tokens: Sequence[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(tokens):
            raise CorpusError("embedding matrix must have one row per token")
        self.dimension = int(matrix.shape[1])
        self.oov_policy = "zero_vector"
        # last row is the shared zero vector for OOV tokens
        self.matrix = np.vstack([matrix, np.zeros((1, self.dimension))])
        self._index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, token: str) -> bool:
        return token in self._index or token.lower() in self._index

    @property
    def tokens(self) -> list[str]:
        """Vocabulary in row order (excludes the OOV row)."""
        out = [""] * len(self._index)
        for tok, i in self._index.items():
            out[i] = tok
        return out

    def row_index(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = self._index.get(token.lower(), len(self.matrix) - 1)
        return idx

    def lookup(self, token: str) -> np.ndarray:
        return self.matrix[self.row_index(token)]

    @classmethod
    def from_file(cls, path, dimension: int | None = None) -> "EmbeddingTable":
        """Load a text embedding file: one token per line followed by the
        vector components, whitespace separated."""
        tokens: list[str] = []
        rows: list[np.ndarray] = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split()
                if not parts:
                    continue
                if dimension is None:
                    dimension = len(parts) - 1
                    if dimension < 1:
                        raise CorpusError(f"line {lineno}: no vector components")
                if len(parts) != dimension + 1:
                    raise CorpusError(
                        f"line {lineno}: expected {dimension} components, "
                        f"got {len(parts) - 1}")
                tokens.append(parts[0])
                try:
                    rows.append(np.array([float(x) for x in parts[1:]]))
                except ValueError as exc:
                    raise CorpusError(f"line {lineno}: {exc}") from exc
        if not rows:
            raise CorpusError("empty embedding file")
        return cls(tokens, np.stack(rows))


def embed(seq: TokenSequence | Sequence[str], table: EmbeddingTable) -> np.ndarray:
    """Embed a token sequence as an (n_tokens, dimension) matrix.

    OOV rows come out all-zero.
    """
    tokens = seq.tokens if isinstance(seq, TokenSequence) else list(seq)
    idx = np.fromiter((table.row_index(t) for t in tokens), dtype=np.int64,
                      count=len(tokens))
    return table.matrix[idx] if len(tokens) else np.zeros((0, table.dimension))


def load_amazon(path) -> list[Document]:
    """Load CSV review records (label, title, body) with labels 1=negative,
    2=positive. Document text is ``title + ": " + body``."""
    docs: list[Document] = []
    label_map = {"1": 0, "2": 1}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise CorpusError(
                    f"line {reader.line_num}: expected 3 fields, got {len(row)}")
            raw_label, title, body = row
            label = label_map.get(raw_label.strip())
            if label is None:
                raise CorpusError(
                    f"line {reader.line_num}: unknown label {raw_label!r}")
            docs.append(Document(id=f"amazon-{len(docs)}",
                                 text=f"{title}: {body}", label=label))
    return docs


def load_arxiv(path) -> list[Document]:
    """Load line-delimited JSON abstract records.

    Each record needs ``categories`` (list of main categories), ``subtopic``
    and ``abstract``. Records in more than one main category are dropped.
    """
    docs: list[Document] = []
    class_index = {name: i for i, name in enumerate(ARXIV_CLASSES)}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON: {exc}") from exc
            try:
                categories = rec["categories"]
                subtopic = rec["subtopic"]
                abstract = rec["abstract"]
            except KeyError as exc:
                raise CorpusError(f"line {lineno}: missing field {exc}") from exc
            if not isinstance(categories, list) or not categories:
                raise CorpusError(f"line {lineno}: categories must be a "
                                  "non-empty list")
            unknown = [c for c in categories if c not in class_index]
            if unknown:
                raise CorpusError(
                    f"line {lineno}: unknown category {unknown[0]!r}")
            if len(set(categories)) > 1:
                continue
            docs.append(Document(id=f"arxiv-{len(docs)}", text=abstract,
                                 label=class_index[categories[0]],
                                 subtopic=subtopic))
    return docs


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]
    seed: int = 0

    def sets(self) -> tuple[set, set, set]:
        return set(self.train), set(self.validation), set(self.test)


def make_splits(docs: Sequence[Document], sizes: tuple[int, int, int],
                seed: int) -> DatasetSplit:
    """Draw disjoint train/validation/test id lists of the given sizes.

    Deterministic for a fixed seed and input order.
    """
    n_train, n_val, n_test = sizes
    total = n_train + n_val + n_test
    if total > len(docs):
        raise CorpusError(
            f"split sizes sum to {total} but only {len(docs)} documents")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(docs))
    ids = [docs[i].id for i in order[:total]]
    return DatasetSplit(train=ids[:n_train],
                        validation=ids[n_train:n_train + n_val],
                        test=ids[n_train + n_val:total], seed=seed)


def subtopic_filter(docs: Iterable[Document],
                    allowed: dict[int, str]) -> list[Document]:
    """Keep only documents whose subtopic is the allowed one for their class.

    ``allowed`` maps class index to a single subtopic name and must cover
    every class present in ``docs``.
    """
    kept = []
    for doc in docs:
        if doc.label not in allowed:
            raise CorpusError(f"no allowed subtopic for class {doc.label}")
        if doc.subtopic == allowed[doc.label]:
            kept.append(doc)
    return kept


def docs_by_id(docs: Iterable[Document]) -> dict[str, Document]:
    return {d.id: d for d in docs}
