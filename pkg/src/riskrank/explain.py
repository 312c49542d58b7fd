"""Attention-based explanations and the attention-removal faithfulness harness."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .corpus import CLS, PAD, SEP, EncodedDocument, Vocabulary
from .errors import InputShapeError
from .metrics import EvalReport, discretize_scores, evaluate
from .netcore import ForwardTrace, ModelState, forward_batch

log = logging.getLogger(__name__)

DEFAULT_K = 0.30


@dataclass
class TokenWeightGrid:
    doc_id: str
    gamma: np.ndarray
    mask: np.ndarray
    threshold: Optional[float] = None


def combined_token_weights(trace: ForwardTrace, doc: EncodedDocument) -> TokenWeightGrid:
    """Sentence weight times word weight at every unmasked position."""
    if trace.sentence_attention is None:
        raise InputShapeError("token weights need a hierarchical model (sentence attention)")
    if trace.word_attention.shape != doc.token_ids.shape:
        raise InputShapeError("trace and document grids differ")
    mask = doc.token_mask & doc.sentence_mask[:, None]
    gamma = np.where(mask, trace.sentence_attention[:, None] * trace.word_attention, 0.0)
    return TokenWeightGrid(doc.doc_id, gamma, mask)


def select_salient_tokens(grid: TokenWeightGrid, K: float = DEFAULT_K,
                          vocab: Optional[Vocabulary] = None,
                          token_ids: Optional[np.ndarray] = None) -> set[tuple[int, int]]:
    """Positions whose weight is strictly above the document's (1 - K) quantile.

    When ``vocab`` and ``token_ids`` are given, special, stopword and
    punctuation-only tokens are dropped after thresholding.
    """
    if not 0.0 < K <= 1.0:
        raise ValueError(f"K must lie in (0, 1], got {K}")
    values = grid.gamma[grid.mask]
    if values.size == 0:
        grid.threshold = math.nan
        return set()
    tau = float(np.quantile(values, 1.0 - K, method="linear"))
    grid.threshold = tau
    rows, cols = np.nonzero(grid.mask & (grid.gamma > tau))
    picked = set(zip(rows.tolist(), cols.tolist()))
    if vocab is not None and token_ids is not None:
        picked = {(i, j) for i, j in picked if vocab.is_displayable(int(token_ids[i, j]))}
    return picked


def group_word_frequencies(
    docs: Sequence[EncodedDocument],
    traces: Sequence[ForwardTrace],
    groups: Sequence[int],
    vocab: Vocabulary,
    K: float = DEFAULT_K,
) -> list[dict[str, float]]:
    """Per-group sums of combined weight over each token's selected occurrences."""
    if not (len(docs) == len(traces) == len(groups)):
        raise InputShapeError("documents, traces and groups must align")
    tables: list[dict[str, float]] = [defaultdict(float) for _ in range(3)]
    for doc, trace, g in zip(docs, traces, groups):
        grid = combined_token_weights(trace, doc)
        for i, j in sorted(select_salient_tokens(grid, K, vocab, doc.token_ids)):
            tables[int(g)][vocab.id_to_token[doc.token_ids[i, j]]] += float(grid.gamma[i, j])
    return [dict(t) for t in tables]


def distinctive_adjust(raw: Sequence[dict[str, float]]) -> list[dict[str, float]]:
    """Subtract each token's largest frequency in the other groups; keep positives."""
    if len(raw) != 3:
        raise InputShapeError("expected three group tables")
    out = []
    for g, table in enumerate(raw):
        adjusted = {}
        for tok, f in table.items():
            rest = max((raw[h].get(tok, 0.0) for h in range(3) if h != g), default=0.0)
            v = f - rest
            if v > 0:
                adjusted[tok] = v
        out.append(dict(sorted(adjusted.items(), key=lambda kv: (-kv[1], kv[0]))))
    return out


def word_clouds(docs, traces, vocab: Vocabulary, K: float = DEFAULT_K) -> list[dict[str, float]]:
    """Group by predicted bins of the test scores, then keep group-distinctive tokens."""
    groups = discretize_scores([t.score for t in traces])
    return distinctive_adjust(group_word_frequencies(docs, traces, groups, vocab, K))


def top_sentence_report(trace: ForwardTrace, doc: EncodedDocument, k: int = 5,
                        vocab: Optional[Vocabulary] = None) -> list[dict]:
    """Heatmap rows for the ``k`` most attended sentences."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if trace.sentence_attention is None:
        raise InputShapeError("sentence report needs a hierarchical model")
    alpha = trace.sentence_attention
    present = np.flatnonzero(doc.sentence_mask)
    ranked = sorted(present.tolist(), key=lambda i: (-alpha[i], i))[:k]
    rows = []
    for i in ranked:
        tokens = []
        for j in np.flatnonzero(doc.token_mask[i]):
            tid = int(doc.token_ids[i, j])
            if vocab is not None:
                if not vocab.is_displayable(tid):
                    continue
                label = vocab.id_to_token[tid]
            else:
                if tid in (PAD, CLS, SEP):
                    continue
                label = str(tid)
            tokens.append({"token": label, "alpha_w": float(trace.word_attention[i, j])})
        rows.append({"sentence_idx": int(i), "alpha_s": float(alpha[i]), "tokens": tokens})
    return rows


def _content_positions(doc: EncodedDocument) -> tuple[np.ndarray, np.ndarray]:
    keep = doc.token_mask & doc.sentence_mask[:, None] & (doc.token_ids != CLS) & (doc.token_ids != SEP)
    return np.nonzero(keep)


def _mask_positions(doc: EncodedDocument, rows, cols) -> EncodedDocument:
    out = doc.copy()
    out.token_ids[rows, cols] = PAD
    out.token_mask[rows, cols] = False
    return out


def n_removed(k: float, count: int) -> int:
    # guard against 0.1 * 30 = 3.0000000000000004 rounding up to 4
    return min(count, math.ceil(round(k * count, 9)))


def ablate_words(doc: EncodedDocument, grid: TokenWeightGrid, k: float) -> EncodedDocument:
    """Mask the top ``ceil(k * n)`` content tokens by combined weight."""
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"k must lie in [0, 1], got {k}")
    rows, cols = _content_positions(doc)
    n = n_removed(k, len(rows))
    if n == 0:
        return doc.copy()
    # lexsort: last key is primary; ties fall back to row-major grid position
    order = np.lexsort((cols, rows, -grid.gamma[rows, cols]))[:n]
    return _mask_positions(doc, rows[order], cols[order])


def ablate_words_random(doc: EncodedDocument, k: float, rng: np.random.Generator) -> EncodedDocument:
    rows, cols = _content_positions(doc)
    n = n_removed(k, len(rows))
    if n == 0:
        return doc.copy()
    pick = np.sort(rng.choice(len(rows), size=n, replace=False))
    return _mask_positions(doc, rows[pick], cols[pick])


def _mask_sentences(doc: EncodedDocument, idx) -> EncodedDocument:
    out = doc.copy()
    out.sentence_mask[idx] = False
    out.token_mask[idx] = False
    out.token_ids[idx] = PAD
    return out


def ablate_sentences(doc: EncodedDocument, alpha_s, k: float) -> EncodedDocument:
    """Mask the top ``ceil(k * n)`` present sentences by sentence attention."""
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"k must lie in [0, 1], got {k}")
    present = np.flatnonzero(doc.sentence_mask)
    n = n_removed(k, len(present))
    if n == 0:
        return doc.copy()
    alpha = np.asarray(alpha_s)
    order = sorted(present.tolist(), key=lambda i: (-alpha[i], i))[:n]
    return _mask_sentences(doc, order)


def ablate_sentences_random(doc: EncodedDocument, k: float, rng: np.random.Generator) -> EncodedDocument:
    present = np.flatnonzero(doc.sentence_mask)
    n = n_removed(k, len(present))
    if n == 0:
        return doc.copy()
    return _mask_sentences(doc, np.sort(rng.choice(present, size=n, replace=False)))


def masked_count(original: EncodedDocument, ablated: EncodedDocument) -> int:
    return int(np.sum(original.token_mask & ~ablated.token_mask))


@dataclass
class AblationPoint:
    k: float
    variant: str
    report: Optional[EvalReport]
    n_docs: int
    n_failed: int
    n_masked: int


def _traces(docs, state, chunk=64):
    out = []
    for i in range(0, len(docs), chunk):
        out.extend(forward_batch(docs[i : i + chunk], state))
    return out


def _eval_ablated(ablated, labels, state):
    kept, y, failed = [], [], 0
    for d, lab in zip(ablated, labels):
        if not d.sentence_mask.any():
            failed += 1
            continue
        kept.append(d)
        y.append(lab)
    if failed:
        log.warning("%d documents left empty by ablation were excluded", failed)
    if len(kept) < 3:
        return None, failed
    traces = _traces(kept, state)
    return evaluate(y, [t.score for t in traces]), failed


def ablation_curve(
    state: ModelState,
    docs: Sequence[EncodedDocument],
    k_grid: Sequence[float],
    mode: str = "words",
    *,
    random_control: bool = False,
    seed: int = 0,
) -> list[AblationPoint]:
    """Metrics after removing the most attended words or sentences at each ``k``.

    Attention is extracted once from the unmodified documents. With
    ``random_control`` the same number of positions is removed uniformly at
    random instead, from a stream seeded by ``seed``.
    """
    if mode not in ("words", "sentences"):
        raise ValueError(f"mode must be 'words' or 'sentences', got {mode!r}")
    grid_k = [float(k) for k in k_grid]
    if grid_k != sorted(grid_k):
        raise ValueError("k_grid must be sorted ascending")
    if not grid_k or grid_k[0] != 0.0:
        grid_k = [0.0] + grid_k
    labels = [d.label for d in docs]
    traces = _traces(docs, state)
    variant = "random" if random_control else "attention"
    rng = np.random.default_rng(seed)
    points = []
    for k in grid_k:
        ablated = []
        for d, t in zip(docs, traces):
            if random_control:
                a = ablate_words_random(d, k, rng) if mode == "words" else ablate_sentences_random(d, k, rng)
            elif mode == "words":
                a = ablate_words(d, combined_token_weights(t, d), k)
            else:
                a = ablate_sentences(d, t.sentence_attention, k)
            ablated.append(a)
        report, failed = _eval_ablated(ablated, labels, state)
        points.append(
            AblationPoint(
                k=k,
                variant=variant,
                report=report,
                n_docs=len(docs) - failed,
                n_failed=failed,
                n_masked=sum(masked_count(d, a) for d, a in zip(docs, ablated)),
            )
        )
    return points
