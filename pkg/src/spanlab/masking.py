"""Masking schemes: subword, whole-word, annotated-span, and geometric spans.

Span lengths are drawn in whole words from a truncated-and-renormalized
geometric distribution (resample-until-within-support semantics, NOT clamping:
clamping at 10 would give mean 4.463 where truncation gives 3.797). The
masking budget is counted in subword tokens. Replacement with [MASK], a
unigram-sampled token, or the original ids happens at the span level, one
category per span.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .corpus import CLS, SEP, BiSequencePair, Block, Vocabulary

Scheme = Literal["subword", "whole_word", "named_entity", "noun_phrase", "geometric_span"]
SCHEMES: tuple[str, ...] = ("subword", "whole_word", "named_entity", "noun_phrase",
                            "geometric_span")
ANNOTATED_SCHEMES = ("named_entity", "noun_phrase")

MASK_CATEGORY = "mask"
RANDOM_CATEGORY = "random"
KEEP_CATEGORY = "keep"


class MaskingError(ValueError):
    """Raised for invalid masking configuration or inputs."""


@dataclass
class MaskingConfig:
    scheme: str = "geometric_span"
    budget_rate: float = 0.15
    geo_p: float = 0.2
    l_max: int = 10
    mask_prob: float = 0.8
    random_prob: float = 0.1
    keep_prob: float = 0.1
    max_attempts: int = 100

    def __post_init__(self) -> None:
        errors = []
        if self.scheme not in SCHEMES:
            errors.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0.0 < self.geo_p <= 1.0:
            errors.append(f"geo_p must be in (0, 1], got {self.geo_p}")
        if self.l_max < 1:
            errors.append(f"l_max must be >= 1, got {self.l_max}")
        if not 0.0 < self.budget_rate < 1.0:
            errors.append(f"budget_rate must be in (0, 1), got {self.budget_rate}")
        split = self.mask_prob + self.random_prob + self.keep_prob
        if abs(split - 1.0) > 1e-9 or min(self.mask_prob, self.random_prob, self.keep_prob) < 0:
            errors.append(f"replacement split must be nonnegative and sum to 1, got {split}")
        if self.max_attempts < 1:
            errors.append("max_attempts must be >= 1")
        if errors:
            raise MaskingError("; ".join(errors))


@dataclass
class SpanMask:
    """One masked span: inclusive token interval, replacement category, original ids."""

    start: int
    end: int
    category: str
    original_ids: np.ndarray
    trimmed: bool = False

    def __len__(self) -> int:
        return self.end - self.start + 1

    def offsets(self) -> np.ndarray:
        """Relative offsets (1-based from the left boundary) of each span position."""
        return np.arange(1, len(self) + 1)


@dataclass
class MaskedExample:
    """A model-ready masked sequence with its span records and MLM targets."""

    input_ids: np.ndarray
    spans: list[SpanMask]
    mlm_positions: np.ndarray
    mlm_target_ids: np.ndarray
    nsp_label: bool | None = None
    budget: int = 0
    degraded: bool = False

    @property
    def achieved(self) -> int:
        return int(self.mlm_positions.shape[0])


# ---------------------------------------------------------------------------
# Span length distribution
# ---------------------------------------------------------------------------

def span_length_pmf(cfg: MaskingConfig) -> np.ndarray:
    """Analytic truncated-geometric PMF over word lengths 1..l_max."""
    k = np.arange(1, cfg.l_max + 1, dtype=np.float64)
    q = 1.0 - cfg.geo_p
    raw = q ** (k - 1.0) * cfg.geo_p
    return raw / raw.sum()


def sample_span_length(cfg: MaskingConfig, rng: np.random.Generator,
                       size: int | None = None) -> int | np.ndarray:
    """Draw span lengths (in words) by inverse-CDF over the truncated PMF."""
    cdf = np.cumsum(span_length_pmf(cfg))
    u = rng.random(size)
    k = np.searchsorted(cdf, u, side="right") + 1
    k = np.clip(k, 1, cfg.l_max)
    return int(k) if size is None else k.astype(np.int64)


# ---------------------------------------------------------------------------
# Maskable segments: blocks and formatted pairs share one representation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskableInterval:
    lo: int  # inclusive token indices within the formatted sequence
    hi: int
    doc_id: int
    word_offset: int  # document word index of the interval's first word


@dataclass
class MaskableSegment:
    """A formatted training sequence with its maskable intervals."""

    ids: np.ndarray
    word_start: np.ndarray
    intervals: tuple[MaskableInterval, ...]
    nsp_label: bool | None = None

    @classmethod
    def from_block(cls, block: Block) -> "MaskableSegment":
        lo, hi = block.maskable_range
        interval = MaskableInterval(lo=lo, hi=hi, doc_id=block.tokens.doc_id,
                                    word_offset=block.word_offset)
        return cls(ids=block.tokens.ids.copy(), word_start=block.tokens.word_start.copy(),
                   intervals=(interval,))

    @classmethod
    def from_pair(cls, pair: BiSequencePair) -> "MaskableSegment":
        """Format [CLS] x_a [SEP] x_b [SEP]; each half is its own interval."""
        a, b = pair.x_a, pair.x_b
        ids = np.concatenate(([CLS], a.ids, [SEP], b.ids, [SEP]))
        starts = np.concatenate(([False], a.word_start, [False], b.word_start, [False]))
        intervals = []
        if len(a) > 0:
            intervals.append(MaskableInterval(1, len(a), a.doc_id, a.word_offset))
        if len(b) > 0:
            intervals.append(MaskableInterval(len(a) + 2, len(a) + 1 + len(b),
                                              b.doc_id, b.word_offset))
        return cls(ids=ids, word_start=starts, intervals=tuple(intervals),
                   nsp_label=pair.is_next)

    def maskable_length(self) -> int:
        return sum(iv.hi - iv.lo + 1 for iv in self.intervals)


def _as_segment(block) -> MaskableSegment:
    if isinstance(block, MaskableSegment):
        return block
    if isinstance(block, Block):
        return MaskableSegment.from_block(block)
    if isinstance(block, BiSequencePair):
        return MaskableSegment.from_pair(block)
    raise MaskingError(f"cannot mask object of type {type(block).__name__}")


@dataclass
class _WordTable:
    first: np.ndarray   # token index of each word's first subword
    last: np.ndarray    # token index of each word's last subword
    interval: np.ndarray  # interval index per word
    base: list[int]     # global word index of each interval's first word
    positions: np.ndarray  # all maskable token positions


def _word_table(seg: MaskableSegment) -> _WordTable:
    firsts: list[int] = []
    lasts: list[int] = []
    interval_of: list[int] = []
    base: list[int] = []
    positions: list[np.ndarray] = []
    for k, iv in enumerate(seg.intervals):
        base.append(len(firsts))
        span = np.arange(iv.lo, iv.hi + 1)
        positions.append(span)
        starts = span[seg.word_start[iv.lo:iv.hi + 1]]
        for j, s in enumerate(starts):
            firsts.append(int(s))
            lasts.append(int(starts[j + 1] - 1) if j + 1 < len(starts) else iv.hi)
            interval_of.append(k)
    return _WordTable(first=np.array(firsts, dtype=np.int64),
                      last=np.array(lasts, dtype=np.int64),
                      interval=np.array(interval_of, dtype=np.int64),
                      base=base,
                      positions=np.concatenate(positions) if positions else
                      np.zeros(0, dtype=np.int64))


def _annotation_candidates(seg: MaskableSegment, table: _WordTable,
                           annotations: dict[int, Sequence[tuple[int, int]]],
                           ) -> list[tuple[int, int]]:
    """Token ranges of annotated word spans that fall wholly inside one interval."""
    out: list[tuple[int, int]] = []
    for k, iv in enumerate(seg.intervals):
        n_words = int(np.count_nonzero(table.interval == k))
        for ws, we in annotations.get(iv.doc_id, ()):
            lo_w = ws - iv.word_offset
            hi_w = we - iv.word_offset
            if lo_w < 0 or hi_w >= n_words or lo_w > hi_w:
                continue
            g_lo = table.base[k] + lo_w
            g_hi = table.base[k] + hi_w
            out.append((int(table.first[g_lo]), int(table.last[g_hi])))
    return out


# ---------------------------------------------------------------------------
# Mask sampling
# ---------------------------------------------------------------------------

def sample_mask(block, cfg: MaskingConfig,
                annotations: dict[int, Sequence[tuple[int, int]]] | Sequence[tuple[int, int]] | None = None,
                rng: np.random.Generator | None = None) -> MaskedExample:
    """Mask exactly ``max(1, floor(budget_rate * maskable))`` subword tokens.

    Candidate spans that overlap or abut an already-masked span are rejected
    and resampled (the tokens flanking every span stay observed); the final
    span is right-trimmed at subword granularity to land exactly on budget.
    Every span is also clipped to at most l_max subword tokens so each masked
    position keeps a boundary-relative offset within the prediction head's
    table. After ``max_attempts`` consecutive rejections the example is
    returned flagged degraded with whatever was achieved.
    """
    if rng is None:
        raise MaskingError("sample_mask requires an explicit rng for reproducibility")
    seg = _as_segment(block)
    maskable = seg.maskable_length()
    if maskable <= 0:
        raise MaskingError("block has no maskable positions")
    if cfg.scheme in ANNOTATED_SCHEMES and annotations is None:
        raise MaskingError(f"scheme {cfg.scheme!r} requires an annotation span list")

    if annotations is not None and not isinstance(annotations, dict):
        annotations = {seg.intervals[0].doc_id: list(annotations)}

    table = _word_table(seg)
    n_words = int(table.first.shape[0])
    annotated = (_annotation_candidates(seg, table, annotations)
                 if cfg.scheme in ANNOTATED_SCHEMES else [])

    budget = max(1, int(cfg.budget_rate * maskable))
    occupied = np.zeros(seg.ids.shape[0], dtype=bool)
    raw_spans: list[tuple[int, int, bool]] = []
    masked = 0
    rejections = 0
    degraded = False

    while masked < budget:
        candidate = _draw_candidate(cfg, table, annotated, n_words, rng)
        if candidate is None:
            rejections += 1
        else:
            a, b = candidate
            trimmed = False
            cap = min(budget - masked, cfg.l_max)
            if b - a + 1 > cap:
                b = a + cap - 1
                trimmed = True
            if occupied[max(a - 1, 0):b + 2].any():
                rejections += 1
            else:
                occupied[a:b + 1] = True
                raw_spans.append((a, b, trimmed))
                masked += b - a + 1
                rejections = 0
                continue
        if rejections >= cfg.max_attempts:
            degraded = True
            break

    raw_spans.sort()
    spans = [SpanMask(start=a, end=b, category=KEEP_CATEGORY,
                      original_ids=seg.ids[a:b + 1].copy(), trimmed=t)
             for a, b, t in raw_spans]
    return MaskedExample(input_ids=seg.ids.copy(), spans=spans,
                         mlm_positions=np.zeros(0, dtype=np.int64),
                         mlm_target_ids=np.zeros(0, dtype=np.int64),
                         nsp_label=seg.nsp_label, budget=budget, degraded=degraded)


def _draw_candidate(cfg: MaskingConfig, table: _WordTable,
                    annotated: list[tuple[int, int]], n_words: int,
                    rng: np.random.Generator) -> tuple[int, int] | None:
    """One candidate token range per scheme; None when the draw is structurally invalid."""
    if cfg.scheme == "subword":
        pos = int(table.positions[int(rng.integers(table.positions.shape[0]))])
        return pos, pos
    if n_words == 0:
        return None
    if cfg.scheme == "whole_word":
        w = int(rng.integers(n_words))
        return int(table.first[w]), int(table.last[w])
    if cfg.scheme in ANNOTATED_SCHEMES:
        if rng.random() < 0.5 and annotated:
            return annotated[int(rng.integers(len(annotated)))]
        w = int(rng.integers(n_words))
        return int(table.first[w]), int(table.last[w])
    # geometric_span: length in words, start uniform over word starts.
    length = int(sample_span_length(cfg, rng))
    ws = int(rng.integers(n_words))
    we = ws + length - 1
    if we >= n_words or table.interval[we] != table.interval[ws]:
        return None
    return int(table.first[ws]), int(table.last[we])


def apply_replacement(example: MaskedExample, vocab: Vocabulary,
                      rng: np.random.Generator) -> MaskedExample:
    """Assign one replacement category per span and rewrite the input ids.

    Categories are drawn (mask, random, keep) = (0.8, 0.1, 0.1) by default.
    Random replacements are sampled independently per position from the corpus
    unigram distribution. All span positions become MLM targets regardless of
    category.
    """
    mask_id = vocab.specials["[MASK]"]
    probs = vocab.unigram_probs()
    ids = example.input_ids.copy()
    positions: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    for span in example.spans:
        u = rng.random()
        n = len(span)
        if u < 0.8:
            span.category = MASK_CATEGORY
            ids[span.start:span.end + 1] = mask_id
        elif u < 0.9:
            span.category = RANDOM_CATEGORY
            ids[span.start:span.end + 1] = rng.choice(len(vocab), size=n, p=probs)
        else:
            span.category = KEEP_CATEGORY
        positions.append(np.arange(span.start, span.end + 1))
        targets.append(span.original_ids)
    example.input_ids = ids
    example.mlm_positions = (np.concatenate(positions) if positions
                             else np.zeros(0, dtype=np.int64))
    example.mlm_target_ids = (np.concatenate(targets) if targets
                              else np.zeros(0, dtype=np.int64))
    return example


def mask_rng(master_seed: int, epoch: int, block_index: int) -> np.random.Generator:
    """Dynamic-masking RNG: a fresh stream per (seed, epoch, block index)."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, epoch, block_index]))


def mask_example(block, cfg: MaskingConfig, master_seed: int, epoch: int,
                 block_index: int, vocab: Vocabulary,
                 annotations=None) -> MaskedExample:
    """Sample and replace in one step, keyed purely by (seed, epoch, block index)."""
    rng = mask_rng(master_seed, epoch, block_index)
    example = sample_mask(block, cfg, annotations=annotations, rng=rng)
    return apply_replacement(example, vocab, rng)


# ---------------------------------------------------------------------------
# Annotation files: one JSON object per line, word-coordinate spans per document
# ---------------------------------------------------------------------------

def load_annotations(path: str | Path) -> dict[int, list[tuple[int, int]]]:
    out: dict[int, list[tuple[int, int]]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        out[int(record["doc_id"])] = [(int(a), int(b)) for a, b in record["spans"]]
    return out


def save_annotations(annotations: dict[int, Sequence[tuple[int, int]]],
                     path: str | Path) -> None:
    lines = [json.dumps({"doc_id": doc_id, "spans": [list(s) for s in spans]})
             for doc_id, spans in sorted(annotations.items())]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
