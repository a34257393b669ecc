"""Neuron specialization by activation frequency and by activation strength.

Frequency: count, per FFN neuron, how many tokens of a tagged corpus make it
fire; keep the smallest set of neurons covering a fraction ``k`` of all
firings; compare tags by IoU after removing neurons every tag keeps.

Strength: score each neuron by the Average Precision of its mean activation
at separating one code-mixed pair's texts from everything else, and take the
top, median-centred and bottom ``k`` neurons.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from polyglot_probe.errors import InputError
from polyglot_probe.model.transformer import ToyTransformer, forward_batch

log = logging.getLogger(__name__)

NeuronId = tuple[int, int]  # (layer, index within layer)


def _batched(
    model: ToyTransformer,
    corpus: Sequence[Sequence[int]],
    fn,
    threads: int,
    chunk: int,
    content_from: int,
):
    """Apply ``fn`` to the activation traces of fixed-size chunks of ``corpus``."""
    chunks = [corpus[i : i + chunk] for i in range(0, len(corpus), chunk)]

    def work(part):
        return [fn(r.activations) for r in forward_batch(model, part, content_from=content_from)]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return [x for p in parts for x in p]


# --- activation frequency ------------------------------------------------------


@dataclass
class ActivationCountTable:
    tag: str
    counts: np.ndarray  # (n_layers, d_ff) int64
    tokens: int

    def __add__(self, other: "ActivationCountTable") -> "ActivationCountTable":
        if self.counts.shape != other.counts.shape:
            raise InputError("count tables come from differently shaped models")
        return ActivationCountTable(self.tag, self.counts + other.counts, self.tokens + other.tokens)


def count_activations(
    model: ToyTransformer,
    corpus: Sequence[Sequence[int]],
    tag: str,
    fire_on: str = "gate",
    threads: int = 1,
    chunk: int = 64,
    content_from: int = 0,
) -> ActivationCountTable:
    """Per-neuron number of content tokens with activation > 0.

    ``fire_on="gate"`` binarizes the gate branch (identical to the inner value
    for ReLU FFNs); ``"inner"`` binarizes the full inner vector.
    """
    if not corpus:
        raise InputError(f"corpus for tag {tag!r} is empty")
    if fire_on not in ("gate", "inner"):
        raise InputError(f"fire_on must be 'gate' or 'inner', got {fire_on!r}")

    def fn(act):
        vals = act.gate if fire_on == "gate" else act.values
        fired = vals[:, act.mask, :] > 0
        return fired.sum(axis=1, dtype=np.int64), int(act.mask.sum())

    parts = _batched(model, corpus, fn, threads, chunk, content_from)
    cfg = model.config
    counts = np.zeros((cfg.n_layers, cfg.d_ff), dtype=np.int64)
    tokens = 0
    for c, n in parts:
        counts += c
        tokens += n
    return ActivationCountTable(tag, counts, tokens)


def _k_fraction(k: float) -> Fraction:
    k = Fraction(str(k))
    if not 0 < k <= 1:
        raise InputError(f"k must be in (0, 1], got {float(k)}")
    return k


def select_prefix(counts: Sequence[int], k: float) -> list[int]:
    """Minimal count-descending prefix whose mass reaches ``k`` of the total.

    Ties are broken by ascending index. ``k`` is read as a decimal so that,
    e.g., 0.9 of 10 is exactly 9. Returns ``[]`` for an all-zero vector.
    """
    kf = _k_fraction(k)
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        return []
    order = sorted(range(len(counts)), key=lambda i: (-int(counts[i]), i))
    need = kf * total
    acc = 0
    for n, i in enumerate(order, start=1):
        acc += int(counts[i])
        if acc >= need:
            return sorted(order[:n])
    raise AssertionError("cumulative mass never reached k * total")


@dataclass
class NeuronSelection:
    tag: str
    k: float
    selected: list[set[int]]  # per layer
    excluded: list[set[int]] = field(default_factory=list)
    empty_layers: list[int] = field(default_factory=list)
    scope: str = "layer"

    def global_set(self) -> set[NeuronId]:
        return {(layer, i) for layer, s in enumerate(self.selected) for i in s}


def select_specialized(table: ActivationCountTable, k: float = 0.90, scope: str = "layer") -> NeuronSelection:
    """Per-layer (or pooled, ``scope="global"``) minimal prefix selection."""
    n_layers, d_ff = table.counts.shape
    if scope == "layer":
        selected = [set(select_prefix(table.counts[layer], k)) for layer in range(n_layers)]
        empty = [layer for layer in range(n_layers) if table.counts[layer].sum() == 0]
    elif scope == "global":
        flat = select_prefix(table.counts.reshape(-1), k)
        selected = [set() for _ in range(n_layers)]
        for f in flat:
            selected[f // d_ff].add(f % d_ff)
        empty = [] if table.counts.sum() else list(range(n_layers))
    else:
        raise InputError(f"scope must be 'layer' or 'global', got {scope!r}")
    for layer in empty:
        log.warning("tag %s: layer %d has no activations; selection is empty", table.tag, layer)
    return NeuronSelection(table.tag, k, selected, [set() for _ in range(n_layers)], empty, scope)


def exclude_universal(selections: Sequence[NeuronSelection]) -> tuple[list[NeuronSelection], list[set[int]]]:
    """Drop, per layer, the neurons selected for every tag. Returns new selections and the removed sets."""
    if len(selections) < 2:
        raise InputError("universal-neuron exclusion needs at least 2 selections")
    n_layers = len(selections[0].selected)
    removed = []
    for layer in range(n_layers):
        common = set.intersection(*(s.selected[layer] for s in selections))
        removed.append(common)
    out = [
        NeuronSelection(
            s.tag,
            s.k,
            [s.selected[layer] - removed[layer] for layer in range(n_layers)],
            [(s.excluded[layer] if s.excluded else set()) | removed[layer] for layer in range(n_layers)],
            list(s.empty_layers),
            s.scope,
        )
        for s in selections
    ]
    return out, removed


def iou(a: set, b: set) -> float:
    """|a ∩ b| / |a ∪ b|, with two empty sets scoring 0."""
    union = len(a | b)
    return len(a & b) / union if union else 0.0


@dataclass
class IoUMatrix:
    tags: list[str]
    values: np.ndarray
    empty_pairs: list[tuple[str, str]]


def _iou_from_sets(tags: Sequence[str], sets: Sequence[set]) -> IoUMatrix:
    n = len(sets)
    m = np.zeros((n, n))
    empty = []
    for i in range(n):
        for j in range(i, n):
            if not sets[i] and not sets[j]:
                empty.append((tags[i], tags[j]))
            m[i, j] = m[j, i] = iou(sets[i], sets[j])
    return IoUMatrix(list(tags), m, empty)


def iou_matrix(selections: Sequence[NeuronSelection], layer: int | None = None) -> IoUMatrix:
    """Tag-by-tag IoU for one layer, or over (layer, neuron) ids when ``layer`` is None."""
    tags = [s.tag for s in selections]
    if layer is None:
        sets = [s.global_set() for s in selections]
    else:
        sets = [s.selected[layer] for s in selections]
    return _iou_from_sets(tags, sets)


# --- activation strength -------------------------------------------------------


def strength_profile(
    model: ToyTransformer,
    texts: Sequence[Sequence[int]],
    threads: int = 1,
    chunk: int = 64,
    content_from: int = 0,
) -> np.ndarray:
    """Mean inner activation per text over content positions: ``(n_texts, n_layers * d_ff)``."""
    if not texts:
        raise InputError("no texts given")

    def fn(act):
        n = int(act.mask.sum())
        if n == 0:
            raise InputError("text has no non-padding tokens")
        return act.values[:, act.mask, :].astype(np.float64).mean(axis=1).reshape(-1)

    return np.stack(_batched(model, texts, fn, threads, chunk, content_from))


def masked_mean(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean over axis 0 of ``values`` restricted to rows where ``mask`` is True."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InputError("text has no non-padding tokens")
    return np.asarray(values, dtype=np.float64)[mask].mean(axis=0)


@dataclass
class APResult:
    ap: float
    boundary_tie: bool


def _check_labels(labels: Sequence[int]) -> np.ndarray:
    b = np.asarray(labels).astype(int)
    if not set(np.unique(b)) <= {0, 1}:
        raise InputError("labels must be 0 or 1")
    if b.sum() == 0 or b.sum() == len(b):
        raise InputError("average precision needs at least one positive and one negative label")
    return b


def average_precision_ex(scores: Sequence[float], labels: Sequence[int]) -> APResult:
    """AP plus a flag for score ties between a positive and a negative.

    Texts are ranked by descending score with ties kept in input order; AP is
    the mean, over positives, of the precision at that positive's rank. The
    sum is accumulated in exact rationals.
    """
    b = _check_labels(labels)
    s = [float(x) for x in scores]
    if len(s) != len(b):
        raise InputError("scores and labels differ in length")
    order = sorted(range(len(s)), key=lambda i: -s[i])
    hits = 0
    total = Fraction(0)
    for rank, i in enumerate(order, start=1):
        if b[i]:
            hits += 1
            total += Fraction(hits, rank)
    pos_scores = {s[i] for i in range(len(s)) if b[i]}
    neg_scores = {s[i] for i in range(len(s)) if not b[i]}
    return APResult(float(total / int(b.sum())), bool(pos_scores & neg_scores))


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    return average_precision_ex(scores, labels).ap


def average_precision_batch(scores: np.ndarray, labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized AP for many score vectors ``(n_items, n_texts)``.

    Same ranking rule as :func:`average_precision`; float64 accumulation.
    Returns ``(ap, boundary_tie)`` arrays.
    """
    b = _check_labels(labels)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, axis=1, kind="stable")
    lab = b[order]
    hits = np.cumsum(lab, axis=1)
    ranks = np.arange(1, scores.shape[1] + 1)
    ap = (lab * hits / ranks).sum(axis=1) / b.sum()
    pos, neg = scores[:, b == 1], scores[:, b == 0]
    ties = np.array([np.intersect1d(p, n).size > 0 for p, n in zip(pos, neg)])
    return ap, ties


@dataclass
class APClassification:
    pair: str
    ap: np.ndarray  # (n_layers, d_ff)
    top: list[NeuronId]
    medium: list[NeuronId]
    bottom: list[NeuronId]
    k_requested: int
    k: int
    shrunk: bool
    tie_neurons: int = 0

    def sets(self) -> dict[str, list[NeuronId]]:
        return {"top": self.top, "medium": self.medium, "bottom": self.bottom}

    def class_of(self) -> dict[NeuronId, str]:
        out = {}
        for name, ids in self.sets().items():
            for nid in ids:
                out[nid] = name
        return out


def partition_by_ap(ap: np.ndarray, k: int) -> tuple[list[NeuronId], list[NeuronId], list[NeuronId], int, bool]:
    """Top/medium/bottom ``k`` neurons from an ``(n_layers, d_ff)`` AP grid.

    All neurons are put in one total order, ascending by AP with ties broken
    by descending flat index, so among equal AP the lowest ``(layer, index)``
    ranks highest. Bottom is the first ``k``, top the last ``k`` (listed best
    first), medium the ``k`` centred on the median rank. If ``3k`` exceeds the
    neuron count, ``k`` shrinks to ``n // 3`` and the shrink is flagged.
    """
    n_layers, d_ff = ap.shape
    n = n_layers * d_ff
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    shrunk = 3 * k > n
    k_eff = n // 3 if shrunk else k
    if shrunk:
        warnings.warn(f"3k={3 * k} exceeds {n} neurons; using k={k_eff}", stacklevel=2)
    flat = ap.reshape(-1)
    order = np.lexsort((-np.arange(n), flat))  # primary: ap ascending
    start = min(max(n // 2 - k_eff // 2, k_eff), n - 2 * k_eff)

    def ids(idx) -> list[NeuronId]:
        return [(int(i) // d_ff, int(i) % d_ff) for i in idx]

    bottom = ids(order[:k_eff])
    medium = ids(order[start : start + k_eff])
    top = ids(order[n - k_eff :][::-1])
    return top, medium, bottom, k_eff, shrunk


def classify_neurons(
    model: ToyTransformer,
    positive: Sequence[Sequence[int]],
    negative: Sequence[Sequence[int]],
    pair: str,
    k: int = 1000,
    threads: int = 1,
    content_from: int = 0,
    profile: np.ndarray | None = None,
) -> APClassification:
    """AP-rank every FFN neuron for separating ``positive`` from ``negative`` texts.

    ``profile`` may carry precomputed :func:`strength_profile` rows for
    ``positive + negative`` (in that order).
    """
    if not positive or not negative:
        raise InputError(f"pair {pair}: positive and negative corpora must be non-empty")
    if profile is None:
        profile = strength_profile(model, list(positive) + list(negative), threads, content_from=content_from)
    labels = np.array([1] * len(positive) + [0] * len(negative))
    ap, ties = average_precision_batch(profile.T, labels)
    cfg = model.config
    grid = ap.reshape(cfg.n_layers, cfg.d_ff)
    top, medium, bottom, k_eff, shrunk = partition_by_ap(grid, k)
    if ties.any():
        log.warning("pair %s: %d neurons have score ties across the label boundary", pair, int(ties.sum()))
    return APClassification(pair, grid, top, medium, bottom, k, k_eff, shrunk, int(ties.sum()))


def layer_distribution(classification: APClassification, n_layers: int | None = None) -> dict[str, np.ndarray]:
    n_layers = n_layers if n_layers is not None else classification.ap.shape[0]
    out = {}
    for name, ids in classification.sets().items():
        hist = np.zeros(n_layers, dtype=np.int64)
        for layer, _ in ids:
            hist[layer] += 1
        out[name] = hist
    return out


def overlap_counts(classifications: Sequence[APClassification]) -> np.ndarray:
    """Symmetric matrix of ``|top(A) ∩ top(B)|`` across pairs."""
    shapes = {c.ap.shape for c in classifications}
    if len(shapes) > 1:
        raise InputError(f"classifications come from different models: {sorted(shapes)}")
    tops = [set(c.top) for c in classifications]
    n = len(tops)
    m = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i, n):
            m[i, j] = m[j, i] = len(tops[i] & tops[j])
    return m


def negatives_for(pair: str, texts_by_pair: Mapping[str, Sequence], baselines: Sequence) -> list:
    """Default negative pool: every other pair's texts plus monolingual baselines."""
    out = []
    for other, texts in texts_by_pair.items():
        if other != pair:
            out.extend(texts)
    out.extend(baselines)
    return out
