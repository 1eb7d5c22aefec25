"""Corpus handling: vocabulary, subword tokenization, block and pair sampling.

The tokenizer is a simplified wordpiece: the most frequent whole words plus
single-character fallbacks (word-initial and ``##``-prefixed continuation
variants), matched greedily longest-first inside each whitespace word. Any
deterministic subword scheme with word-start flags would do; this one keeps
vocabulary construction exact and auditable.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD, UNK, CLS, SEP, MASK = range(5)
CONTINUATION_PREFIX = "##"


class CorpusError(ValueError):
    """Raised for invalid corpus or vocabulary construction inputs."""


@dataclass
class Vocabulary:
    """Ordered subword inventory with special ids and corpus unigram counts."""

    tokens: list[str]
    unigram_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if list(self.tokens[: len(SPECIAL_TOKENS)]) != list(SPECIAL_TOKENS):
            raise CorpusError("vocabulary must start with the special tokens "
                              f"{SPECIAL_TOKENS} in fixed order")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("vocabulary tokens must be unique")
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(SPECIAL_TOKENS)}

    def id_of(self, token: str) -> int | None:
        return self._index.get(token)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def unigram_probs(self) -> np.ndarray:
        """Replacement distribution over ids, proportional to corpus frequency."""
        probs = np.zeros(len(self.tokens), dtype=np.float64)
        for tok, count in self.unigram_counts.items():
            idx = self._index.get(tok)
            if idx is not None:
                probs[idx] = count
        total = probs.sum()
        if total <= 0:
            raise CorpusError("unigram counts are empty; build the vocabulary from a corpus")
        return probs / total


@dataclass
class TokenSequence:
    """A tokenized span of one document: subword ids plus word-start flags."""

    ids: np.ndarray
    word_start: np.ndarray
    doc_id: int
    offset: int = 0       # token offset of ids[0] within the source document
    word_offset: int = 0  # word index of the first word starting at/after ids[0]

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.word_start = np.asarray(self.word_start, dtype=bool)
        if self.ids.shape != self.word_start.shape:
            raise CorpusError("ids and word_start must have equal length")

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass
class Block:
    """A [CLS] body [SEP] training sequence cut from a single document."""

    tokens: TokenSequence
    word_offset: int = 0  # index of the body's first word within its document

    @property
    def maskable_range(self) -> tuple[int, int]:
        """Inclusive token interval eligible for masking (wrappers excluded)."""
        return (1, len(self.tokens) - 2)


@dataclass
class BiSequencePair:
    """Two half-segments plus the continuation label for NSP training."""

    x_a: TokenSequence
    x_b: TokenSequence
    is_next: bool

    def formatted_length(self) -> int:
        return 3 + len(self.x_a) + len(self.x_b)


# ---------------------------------------------------------------------------
# Document reading
# ---------------------------------------------------------------------------

def read_documents(path: str | Path) -> list[str]:
    """Read a UTF-8 corpus file; blank-line-separated paragraph groups are documents."""
    text = Path(path).read_text(encoding="utf-8")
    docs = []
    for chunk in text.split("\n\n"):
        body = " ".join(line.strip() for line in chunk.splitlines() if line.strip())
        if body:
            docs.append(body)
    return docs


# ---------------------------------------------------------------------------
# Vocabulary construction
# ---------------------------------------------------------------------------

def build_vocab(corpus: Iterable[str], target_size: int) -> Vocabulary:
    """Build a greedy-longest-match subword vocabulary from raw documents.

    The vocabulary holds, in order: the special tokens, single-character
    fallbacks (word-initial and continuation variants of every character seen),
    and the most frequent whole words up to ``target_size`` entries. Unigram
    counts come from re-tokenizing the corpus with the finished vocabulary.
    """
    docs = list(corpus)
    if not docs or not any(doc.split() for doc in docs):
        raise CorpusError("corpus is empty")

    word_counts: Counter[str] = Counter()
    chars: set[str] = set()
    for doc in docs:
        for word in doc.split():
            word_counts[word] += 1
            chars.update(word)

    char_tokens = sorted(chars) + [CONTINUATION_PREFIX + c for c in sorted(chars)]
    min_size = len(SPECIAL_TOKENS) + len(char_tokens)
    if target_size < min_size:
        raise CorpusError(
            f"target_size {target_size} too small: needs at least {min_size} "
            f"({len(SPECIAL_TOKENS)} specials + {len(char_tokens)} character fallbacks)")

    tokens = list(SPECIAL_TOKENS) + char_tokens
    taken = set(tokens)
    budget = target_size - len(tokens)
    # Most frequent whole words, count-then-lexicographic for determinism.
    for word, _ in sorted(word_counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if budget == 0:
            break
        if word in taken:
            continue
        tokens.append(word)
        taken.add(word)
        budget -= 1

    vocab = Vocabulary(tokens=tokens)
    counts: Counter[str] = Counter()
    for doc in docs:
        seq = tokenize(doc, vocab, doc_id=0)
        for idx in seq.ids:
            counts[vocab.token_of(int(idx))] += 1
    vocab.unigram_counts = dict(counts)
    return vocab


def tokenize(text: str, vocab: Vocabulary, doc_id: int = 0) -> TokenSequence:
    """Greedy longest-match subword tokenization of whitespace words.

    A character with no vocabulary entry becomes UNK at its own position, with
    the word-start flag of the position it occupies.
    """
    ids: list[int] = []
    starts: list[bool] = []
    for word in text.split():
        pos = 0
        while pos < len(word):
            end = len(word)
            match_id = None
            match_end = pos
            while end > pos:
                piece = word[pos:end] if pos == 0 else CONTINUATION_PREFIX + word[pos:end]
                idx = vocab.id_of(piece)
                if idx is not None:
                    match_id, match_end = idx, end
                    break
                end -= 1
            if match_id is None:
                ids.append(UNK)
                starts.append(pos == 0)
                pos += 1
            else:
                ids.append(match_id)
                starts.append(pos == 0)
                pos = match_end
    return TokenSequence(ids=np.array(ids, dtype=np.int64),
                         word_start=np.array(starts, dtype=bool),
                         doc_id=doc_id)


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Inverse of tokenize for UNK-free sequences: joins continuations, spaces words."""
    words: list[str] = []
    for idx in ids:
        tok = vocab.token_of(int(idx))
        if tok.startswith(CONTINUATION_PREFIX) and words:
            words[-1] += tok[len(CONTINUATION_PREFIX):]
        else:
            words.append(tok)
    return " ".join(words)


def tokenize_documents(docs: Iterable[str], vocab: Vocabulary) -> list[TokenSequence]:
    return [tokenize(doc, vocab, doc_id=i) for i, doc in enumerate(docs)]


# ---------------------------------------------------------------------------
# Single-sequence blocks
# ---------------------------------------------------------------------------

def segment_blocks(docs: Iterable[TokenSequence], n_max: int = 512) -> Iterator[Block]:
    """Greedy left-to-right packing into [CLS] body [SEP] blocks of length <= n_max.

    Bodies never cross document boundaries; concatenating a document's block
    bodies in order reproduces the document exactly.
    """
    if n_max < 4:
        raise CorpusError("n_max must leave room for [CLS], [SEP] and a body")
    body_max = n_max - 2
    for doc in docs:
        pos = 0
        word_index = 0
        while pos < len(doc):
            body_ids = doc.ids[pos:pos + body_max]
            body_starts = doc.word_start[pos:pos + body_max]
            ids = np.concatenate(([CLS], body_ids, [SEP]))
            starts = np.concatenate(([False], body_starts, [False]))
            tokens = TokenSequence(ids=ids, word_start=starts,
                                   doc_id=doc.doc_id, offset=pos)
            yield Block(tokens=tokens, word_offset=word_index)
            word_index += int(body_starts.sum())
            pos += len(body_ids)


# ---------------------------------------------------------------------------
# Bi-sequence pairs for NSP
# ---------------------------------------------------------------------------

def sample_bisequence(docs: Sequence[TokenSequence], n_max: int,
                      rng: np.random.Generator) -> Iterator[BiSequencePair]:
    """Stream half-segment pairs whose [CLS] a [SEP] b [SEP] form fits n_max.

    The continuation coin is flipped first, so exactly half the pairs (in
    expectation) read x_b from where x_a ended; the rest draw x_b from a random
    position in a different document. The stream ends when every document has
    been walked once.
    """
    if len(docs) < 2:
        raise CorpusError("bi-sequence sampling needs at least 2 documents")
    if n_max < 5:
        raise CorpusError("n_max too small for [CLS] a [SEP] b [SEP]")
    pair_budget = n_max - 3
    half = pair_budget // 2

    def slice_of(doc: TokenSequence, start: int, length: int) -> TokenSequence:
        return TokenSequence(ids=doc.ids[start:start + length],
                             word_start=doc.word_start[start:start + length],
                             doc_id=doc.doc_id, offset=start,
                             word_offset=int(np.count_nonzero(doc.word_start[:start])))

    for doc in docs:
        pos = 0
        # Never consume the final token into x_a: a continuation must exist.
        while len(doc) - pos >= 2:
            len_a = min(half, len(doc) - pos - 1)
            x_a = slice_of(doc, pos, len_a)
            b_budget = pair_budget - len_a
            is_next = bool(rng.random() < 0.5)
            if is_next:
                b_pos = pos + len_a
                len_b = min(b_budget, len(doc) - b_pos)
                x_b = slice_of(doc, b_pos, len_b)
                pos = b_pos + len_b
            else:
                others = [d for d in docs if d.doc_id != doc.doc_id]
                other = others[int(rng.integers(len(others)))]
                b_pos = int(rng.integers(len(other)))
                len_b = min(b_budget, len(other) - b_pos)
                x_b = slice_of(other, b_pos, len_b)
                pos += len_a
            yield BiSequencePair(x_a=x_a, x_b=x_b, is_next=is_next)


# ---------------------------------------------------------------------------
# Vocabulary files
# ---------------------------------------------------------------------------

def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    """Write one token per line (line number = id) plus a tab-separated counts sidecar."""
    path = Path(path)
    path.write_text("".join(tok + "\n" for tok in vocab.tokens), encoding="utf-8")
    sidecar = path.with_suffix(path.suffix + ".counts")
    lines = [f"{tok}\t{vocab.unigram_counts.get(tok, 0)}\n" for tok in vocab.tokens]
    sidecar.write_text("".join(lines), encoding="utf-8")


def load_vocab(path: str | Path) -> Vocabulary:
    path = Path(path)
    tokens = path.read_text(encoding="utf-8").splitlines()
    counts: dict[str, int] = {}
    sidecar = path.with_suffix(path.suffix + ".counts")
    if sidecar.exists():
        for line in sidecar.read_text(encoding="utf-8").splitlines():
            tok, _, count = line.rpartition("\t")
            counts[tok] = int(count)
    return Vocabulary(tokens=tokens, unigram_counts=counts)
