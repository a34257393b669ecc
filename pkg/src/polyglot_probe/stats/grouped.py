"""Grouped comparisons over lens AUC tables and per-layer IoU tables."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from polyglot_probe.errors import InputError
from polyglot_probe.stats.rank import StatResult, bonferroni, cohens_d, mann_whitney_u, spearman

log = logging.getLogger(__name__)

GROUPINGS = ("model-effect", "input-effect", "output-effect")


@dataclass
class Comparison:
    grouping: str
    language: str
    group_x: str
    group_y: str
    model: str | None
    result: StatResult

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping,
            "model": self.model,
            "language": self.language,
            "group_x": self.group_x,
            "group_y": self.group_y,
            **self.result.to_dict(),
        }


@dataclass
class GroupedTests:
    grouping: str
    m: int
    alpha: float
    corrected_alpha: float
    comparisons: list[Comparison]
    skipped: list[dict] = field(default_factory=list)

    @property
    def n_significant(self) -> int:
        return sum(c.result.significant for c in self.comparisons)

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping,
            "m": self.m,
            "alpha": self.alpha,
            "corrected_alpha": self.corrected_alpha,
            "n_significant": self.n_significant,
            "comparisons": [c.to_dict() for c in self.comparisons],
            "skipped": self.skipped,
        }


def _rows(table: Iterable[Mapping]) -> list[dict]:
    rows = []
    for i, r in enumerate(table):
        try:
            rows.append(
                {
                    "model": str(r["model"]),
                    "language": str(r["language"]),
                    "src_lang": str(r.get("src_lang", "")),
                    "tgt_lang": str(r.get("tgt_lang", "")),
                    "auc": float(r["auc"]),
                }
            )
        except (KeyError, ValueError) as exc:
            raise InputError(f"AUC table row {i}: {exc}") from exc
    if not rows:
        raise InputError("AUC table is empty")
    return rows


def grouped_auc_tests(
    table: Iterable[Mapping],
    grouping: str,
    alpha: float = 0.05,
    alternative: str = "two-sided",
    m: int | None = None,
) -> GroupedTests:
    """Per-language Mann-Whitney U between two groups of AUC values.

    * ``model-effect``: every pair of models, per language;
      ``m = n_languages * n_model_pairs``.
    * ``input-effect`` / ``output-effect``: per model and language, tasks whose
      source (target) language is that language vs all other tasks;
      ``m = n_languages * n_models * 2``.

    ``m`` may be overridden.
    """
    if grouping not in GROUPINGS:
        raise InputError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")
    rows = _rows(table)
    models = sorted({r["model"] for r in rows})
    languages = sorted({r["language"] for r in rows})
    comparisons: list[Comparison] = []
    skipped: list[dict] = []
    jobs: list[tuple[str | None, str, str, str, list[float], list[float]]] = []

    if grouping == "model-effect":
        pairs = list(itertools.combinations(models, 2))
        m_default = len(languages) * len(pairs)
        if not pairs:
            skipped.append({"reason": "fewer than 2 models in table", "models": models})
        for lang in languages:
            for a, b in pairs:
                xs = [r["auc"] for r in rows if r["model"] == a and r["language"] == lang]
                ys = [r["auc"] for r in rows if r["model"] == b and r["language"] == lang]
                jobs.append((None, lang, a, b, xs, ys))
    else:
        key = "src_lang" if grouping == "input-effect" else "tgt_lang"
        role = "input" if grouping == "input-effect" else "output"
        m_default = len(languages) * len(models) * 2
        for model in models:
            for lang in languages:
                sel = [r for r in rows if r["model"] == model and r["language"] == lang]
                xs = [r["auc"] for r in sel if r[key] == lang]
                ys = [r["auc"] for r in sel if r[key] != lang]
                jobs.append((model, lang, f"{lang}-as-{role}", f"{lang}-not-{role}", xs, ys))

    m_used = m if m is not None else max(1, m_default)
    corrected = bonferroni(alpha, m_used)
    for model, lang, gx, gy, xs, ys in jobs:
        if not xs or not ys:
            skipped.append(
                {"model": model, "language": lang, "group_x": gx, "group_y": gy,
                 "reason": "empty group", "n_x": len(xs), "n_y": len(ys)}
            )
            continue
        res = mann_whitney_u(xs, ys, alternative, alpha=corrected)
        comparisons.append(Comparison(grouping, lang, gx, gy, model, res))
    log.info("%s: m=%d, corrected alpha=%.3g, %d comparisons", grouping, m_used, corrected, len(comparisons))
    return GroupedTests(grouping, m_used, alpha, corrected, comparisons, skipped)


@dataclass
class LayerComparison:
    layer: int
    result: StatResult
    mean_diff: float
    cohens_d: float | None
    n_a: int
    n_b: int


@dataclass
class PhaseReport:
    model: str
    group_a: str
    group_b: str
    alpha: float
    m: int
    corrected_alpha: float
    layers: list[LayerComparison]
    missing_layers: list[int]
    spearman_rho: float | None
    spearman_p: float | None
    boundaries: tuple[int, ...]
    phases: list[dict]

    @property
    def n_significant(self) -> int:
        return sum(lc.result.significant for lc in self.layers)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "group_a": self.group_a,
            "group_b": self.group_b,
            "alpha": self.alpha,
            "m": self.m,
            "corrected_alpha": self.corrected_alpha,
            "n_layers_tested": len(self.layers),
            "n_significant": self.n_significant,
            "missing_layers": self.missing_layers,
            "spearman": {"rho": self.spearman_rho, "p": self.spearman_p},
            "boundaries": list(self.boundaries),
            "phases": self.phases,
            "layers": [
                {
                    "layer": lc.layer,
                    "mean_diff": lc.mean_diff,
                    "cohens_d": lc.cohens_d,
                    "n_a": lc.n_a,
                    "n_b": lc.n_b,
                    **lc.result.to_dict(),
                }
                for lc in self.layers
            ],
        }


def phase_analysis(
    table: Iterable[Mapping],
    group_a: str | None = None,
    group_b: str | None = None,
    alpha: float = 0.05,
    m: int | None = None,
    boundaries: Sequence[int] = (5, 17),
    alternative: str = "greater",
    n_layers: int | None = None,
) -> list[PhaseReport]:
    """Per-layer one-sided comparison of IoU values between two base-language groups.

    ``table`` rows carry ``model, base_group, layer, iou``. For each model and
    layer: Mann-Whitney U of group A against group B at ``alpha / m``
    (``m`` defaults to the number of layers), the mean difference and Cohen's
    d; across layers, the Spearman trend of the mean difference.
    """
    rows = []
    for i, r in enumerate(table):
        try:
            rows.append((str(r["model"]), str(r["base_group"]), int(r["layer"]), float(r["iou"])))
        except (KeyError, ValueError) as exc:
            raise InputError(f"IoU table row {i}: {exc}") from exc
    if not rows:
        raise InputError("IoU table is empty")
    groups = sorted({g for _, g, _, _ in rows})
    if group_a is None or group_b is None:
        if len(groups) != 2:
            raise InputError(f"expected exactly two base groups, found {groups}; name them explicitly")
        group_a, group_b = groups
    for g in (group_a, group_b):
        if g not in groups:
            raise InputError(f"base group {g!r} not present in IoU table (have {groups})")

    reports = []
    for model in sorted({r[0] for r in rows}):
        mine = [r for r in rows if r[0] == model]
        max_layer = max(r[2] for r in mine)
        L = n_layers if n_layers is not None else max_layer + 1
        m_used = m if m is not None else L
        corrected = bonferroni(alpha, m_used)
        layers, missing = [], []
        for layer in range(L):
            a = [v for _, g, lay, v in mine if g == group_a and lay == layer]
            b = [v for _, g, lay, v in mine if g == group_b and lay == layer]
            if not a or not b:
                missing.append(layer)
                continue
            res = mann_whitney_u(a, b, alternative, alpha=corrected)
            try:
                d = cohens_d(a, b)
            except InputError:
                d = None
            layers.append(LayerComparison(layer, res, float(np.mean(a) - np.mean(b)), d, len(a), len(b)))
        if missing:
            log.warning("model %s: layers %s lack data for one group", model, missing)
        rho = p = None
        if len(layers) >= 3:
            try:
                rho, p = spearman([lc.layer for lc in layers], [lc.mean_diff for lc in layers])
            except InputError:
                pass
        edges = [0, *[b for b in boundaries if 0 < b < L], L]
        phases = []
        for lo, hi in zip(edges, edges[1:]):
            part = [lc for lc in layers if lo <= lc.layer < hi]
            phases.append(
                {
                    "layers": [lo, hi - 1],
                    "n_tested": len(part),
                    "n_significant": sum(lc.result.significant for lc in part),
                    "mean_diff": float(np.mean([lc.mean_diff for lc in part])) if part else None,
                }
            )
        reports.append(
            PhaseReport(model, group_a, group_b, alpha, m_used, corrected, layers, missing, rho, p,
                        tuple(boundaries), phases)
        )
    return reports
