from polyglot_probe.stats.bleu import bleu_tokenize, corpus_bleu
from polyglot_probe.stats.grouped import (
    Comparison,
    GroupedTests,
    PhaseReport,
    grouped_auc_tests,
    phase_analysis,
)
from polyglot_probe.stats.rank import (
    StatResult,
    bonferroni,
    cohens_d,
    mann_whitney_u,
    rankdata,
    spearman,
)

__all__ = [
    "Comparison",
    "GroupedTests",
    "PhaseReport",
    "StatResult",
    "bleu_tokenize",
    "bonferroni",
    "cohens_d",
    "corpus_bleu",
    "grouped_auc_tests",
    "mann_whitney_u",
    "phase_analysis",
    "rankdata",
    "spearman",
]
