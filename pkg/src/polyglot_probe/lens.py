"""Logit lens: per-layer vocabulary distributions and per-language probability mass."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from polyglot_probe.errors import InputError
from polyglot_probe.model.transformer import ResidualTrace, ToyTransformer, forward_batch
from polyglot_probe.tokenize import SynonymTable, Vocab

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.1


def logit_lens(
    trace: ResidualTrace,
    model: ToyTransformer,
    position: int = -1,
    normalize_all: bool = False,
) -> np.ndarray:
    """Project each residual snapshot at ``position`` through the unembedding.

    Returns ``(n_layers + 1, vocab)`` probabilities. Intermediate snapshots are
    projected raw (pre-norm); the last snapshot goes through the final layer
    norm so that row equals the model's output distribution. ``normalize_all``
    applies the final norm to every snapshot instead.
    """
    cfg = model.config
    resid = trace.resid
    if resid.ndim != 3 or resid.shape[0] != cfg.n_layers + 1 or resid.shape[2] != cfg.d_model:
        raise InputError(
            f"trace shape {resid.shape} does not match model "
            f"(n_layers+1={cfg.n_layers + 1}, d_model={cfg.d_model})"
        )
    h = torch.from_numpy(np.ascontiguousarray(resid[:, position, :]))
    with torch.no_grad():
        if normalize_all:
            h = model.ln_f(h)
        else:
            h = torch.cat([h[:-1], model.ln_f(h[-1:])])
        logits = model.unembed_logits(h)
        return torch.softmax(logits.double(), dim=-1).numpy()


@dataclass
class LanguageTokens:
    """First-token aggregation ids per language for one concept."""

    tokens: dict[str, list[int]]
    shared: dict[int, list[str]]


def aggregation_tokens(
    synonyms: Mapping[str, Sequence[str]], vocab: Vocab, languages: Sequence[str] | None = None
) -> LanguageTokens:
    """Distinct first tokens of each language's synonym forms, plus tokens claimed by >1 language."""
    tokens: dict[str, list[int]] = {}
    owners: dict[int, list[str]] = {}
    for lang in languages if languages is not None else synonyms:
        ids: list[int] = []
        for form in synonyms.get(lang, []):
            encoded = vocab.encode(form)
            if not encoded:
                raise InputError(f"synonym {form!r} ({lang}) maps to no token")
            if encoded[0] not in ids:
                ids.append(encoded[0])
        tokens[lang] = ids
        for t in ids:
            owners.setdefault(t, []).append(lang)
    shared = {t: langs for t, langs in sorted(owners.items()) if len(langs) > 1}
    return LanguageTokens(tokens, shared)


@dataclass
class LanguageMass:
    raw: dict[str, float]
    thresholded: dict[str, float]
    shared_tokens: dict[int, list[str]]


def language_mass(
    dist: np.ndarray,
    synonyms: Mapping[str, Sequence[str]],
    vocab: Vocab,
    threshold: float = DEFAULT_THRESHOLD,
    languages: Sequence[str] | None = None,
) -> LanguageMass:
    """Sum ``dist`` over each language's aggregation tokens.

    The thresholded view zeroes a language whose summed mass is below
    ``threshold``; shared tokens count for every language that lists them.
    """
    agg = aggregation_tokens(synonyms, vocab, languages)
    raw = {lang: float(sum(dist[t] for t in ids)) for lang, ids in agg.tokens.items()}
    thr = {lang: (m if m >= threshold else 0.0) for lang, m in raw.items()}
    return LanguageMass(raw, thr, agg.shared)


@dataclass
class LanguageProbCurve:
    task_id: str
    src_lang: str
    tgt_lang: str
    concept: int
    raw: dict[str, np.ndarray]
    thresholded: dict[str, np.ndarray]
    shared_tokens: dict[int, list[str]] = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return len(next(iter(self.raw.values())))


def curve_auc(curve: Sequence[float]) -> float:
    """Trapezoidal area over the layer axis rescaled to [0, 1]."""
    y = np.asarray(curve, dtype=np.float64)
    if y.ndim != 1 or len(y) < 2:
        raise InputError("AUC needs at least 2 points")
    return float(np.sum((y[1:] + y[:-1]) / 2.0) / (len(y) - 1))


@dataclass(frozen=True)
class LensTask:
    task_id: str
    src_lang: str
    tgt_lang: str
    concept: int
    tokens: tuple[int, ...]


def _curve(task: LensTask, dists: np.ndarray, synonyms: SynonymTable, vocab: Vocab, threshold: float) -> LanguageProbCurve:
    langs = synonyms.languages
    agg = aggregation_tokens(synonyms[task.concept], vocab, langs)
    raw = {lang: dists[:, ids].sum(axis=1) if ids else np.zeros(len(dists)) for lang, ids in agg.tokens.items()}
    thr = {lang: np.where(v >= threshold, v, 0.0) for lang, v in raw.items()}
    return LanguageProbCurve(task.task_id, task.src_lang, task.tgt_lang, task.concept, raw, thr, agg.shared)


def run_task(
    model: ToyTransformer,
    task: LensTask,
    synonyms: SynonymTable,
    vocab: Vocab,
    threshold: float = DEFAULT_THRESHOLD,
) -> LanguageProbCurve:
    """Lens curve for every declared language at the prompt's last position."""
    trace = forward_batch(model, [task.tokens], pad_id=vocab.pad_id)[0].residual
    return _curve(task, logit_lens(trace, model), synonyms, vocab, threshold)


def run_tasks(
    model: ToyTransformer,
    tasks: Sequence[LensTask],
    synonyms: SynonymTable,
    vocab: Vocab,
    threshold: float = DEFAULT_THRESHOLD,
    threads: int = 1,
    chunk: int = 32,
) -> list[LanguageProbCurve]:
    """Batched :func:`run_task` over many tasks; output follows input order.

    Batches are fixed-size chunks of the input, so the result does not depend
    on ``threads``.
    """
    chunks = [tasks[i : i + chunk] for i in range(0, len(tasks), chunk)]

    def work(part: Sequence[LensTask]) -> list[LanguageProbCurve]:
        results = forward_batch(model, [t.tokens for t in part], pad_id=vocab.pad_id)
        return [
            _curve(t, logit_lens(r.residual, model), synonyms, vocab, threshold)
            for t, r in zip(part, results)
        ]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return [c for part in parts for c in part]


@dataclass
class LensReport:
    curves: list[LanguageProbCurve]
    auc: list[dict]
    threshold: float
    overlap: list[dict]

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "auc": self.auc, "overlap_diagnostics": self.overlap}


def build_report(curves: Sequence[LanguageProbCurve], threshold: float, model_tag: str = "model") -> LensReport:
    auc_rows = []
    overlap = []
    for c in curves:
        for lang in c.raw:
            auc_rows.append(
                {
                    "model": model_tag,
                    "task_id": c.task_id,
                    "src_lang": c.src_lang,
                    "tgt_lang": c.tgt_lang,
                    "language": lang,
                    "auc": curve_auc(c.raw[lang]),
                    "auc_thresholded": curve_auc(c.thresholded[lang]),
                }
            )
        for tok, langs in c.shared_tokens.items():
            overlap.append({"task_id": c.task_id, "token": tok, "languages": langs})
    return LensReport(list(curves), auc_rows, threshold, overlap)


def curve_rows(curves: Sequence[LanguageProbCurve]):
    for c in curves:
        for lang in c.raw:
            for layer, (r, t) in enumerate(zip(c.raw[lang], c.thresholded[lang])):
                yield (c.task_id, lang, layer, float(r), float(t))
