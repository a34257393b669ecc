"""Corpus-level BLEU over pre-tokenized text."""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from typing import Sequence

from polyglot_probe.errors import InputError

SMOOTHING = ("none", "add-one-on-zero")


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
    smoothing: str = "none",
) -> float:
    """Geometric mean of clipped n-gram precisions pooled over the corpus, times
    the brevity penalty ``exp(1 - r/c)`` when the hypotheses are shorter.

    ``add-one-on-zero`` replaces a zero precision ``0/t`` with ``1/(t+1)``.
    Orders for which the corpus has no hypothesis n-grams at all (every
    sentence shorter than n) are left out of the mean, so identical
    hypotheses and references always score 1.
    """
    if smoothing not in SMOOTHING:
        raise InputError(f"smoothing must be one of {SMOOTHING}")
    if len(hypotheses) != len(references):
        raise InputError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise InputError("empty hypothesis set")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = ngrams(hyp, n), ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0:
        return 1.0 if ref_len == 0 else 0.0
    log_p = 0.0
    orders = 0
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        orders += 1
        if m == 0:
            if smoothing == "none":
                return 0.0
            m, t = 1, t + 1
        log_p += math.log(m / t)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p / orders)


def _is_han(c: str) -> bool:
    return unicodedata.name(c, "").startswith(("CJK UNIFIED", "CJK COMPATIBILITY IDEOGRAPH"))


def bleu_tokenize(text: str) -> list[str]:
    """Whitespace split, with every Han character its own token."""
    out: list[str] = []
    for word in text.split():
        buf = ""
        for c in word:
            if _is_han(c):
                if buf:
                    out.append(buf)
                    buf = ""
                out.append(c)
            else:
                buf += c
        if buf:
            out.append(buf)
    return out
