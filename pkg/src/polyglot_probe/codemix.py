"""Rule-based code-mixed corpus generation.

Three steps per sentence: segment the base text, pick a seeded uniform
sample of dictionary-covered words sized by the mixing ratio, and replace
those words with their single-sense translations.
"""

from __future__ import annotations

import hashlib
import logging
import unicodedata
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from polyglot_probe.errors import InputError, ProbeError
from polyglot_probe.io import read_jsonl
from polyglot_probe.tokenize import segment_with_separators

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.25, 0.5, 0.75)
DENOMINATORS = ("all", "eligible")


@dataclass(frozen=True)
class ParallelRecord:
    id: str
    src_lang: str
    tgt_lang: str
    src: str
    tgt: str


@dataclass
class BilingualDictionary:
    source_lang: str
    target_lang: str
    entries: dict[str, str]

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, word: str) -> str | None:
        return self.entries.get(word)


@dataclass
class CodeMixRecord:
    id: str
    source_id: str
    base_lang: str
    mix_lang: str
    ratio_requested: float
    ratio_actual: float
    ratio_actual_eligible: float
    n_tokens: int
    n_eligible: int
    base_tokens: list[str]
    replaced: list[int]
    rendered: str
    tgt_lang: str
    tgt: str
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


class SkipRecord(ProbeError):
    """A record could not be mixed at the requested ratio."""

    def __init__(self, record_id: str, reason: str, n_eligible: int) -> None:
        super().__init__(f"{record_id}: {reason}")
        self.record_id = record_id
        self.reason = reason
        self.n_eligible = n_eligible


_REQUIRED = ("id", "src_lang", "tgt_lang", "src", "tgt")


def load_parallel(path: str | Path) -> list[ParallelRecord]:
    """Read a JSONL parallel corpus, preserving order."""
    records: list[ParallelRecord] = []
    seen: dict[str, int] = {}
    for lineno, obj in read_jsonl(Path(path)):
        if not isinstance(obj, dict):
            raise InputError(f"{path}:{lineno}: expected a JSON object")
        missing = [k for k in _REQUIRED if k not in obj]
        if missing:
            raise InputError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
        bad = [k for k in _REQUIRED if not isinstance(obj[k], str) or not obj[k]]
        if bad:
            raise InputError(f"{path}:{lineno}: field(s) {', '.join(bad)} must be non-empty strings")
        if obj["id"] in seen:
            raise InputError(
                f"{path}:{lineno}: duplicate id {obj['id']!r} (first seen on line {seen[obj['id']]})"
            )
        seen[obj["id"]] = lineno
        records.append(ParallelRecord(*(obj[k] for k in _REQUIRED)))
    log.info("loaded %d parallel records from %s", len(records), path)
    return records


def build_dictionary(
    path: str | Path, source_lang: str, target_lang: str, strict: bool = True
) -> BilingualDictionary:
    """Read ``source<TAB>target`` rows. Duplicate keys raise unless ``strict`` is off (first wins)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    entries: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise InputError(f"{path}:{lineno}: malformed row, expected 'source<TAB>target'")
        src, tgt = parts[0].strip(), parts[1].strip()
        if src in entries:
            if strict:
                raise InputError(f"{path}:{lineno}: duplicate dictionary key {src!r}")
            continue
        entries[src] = tgt
    if not entries:
        raise InputError(f"{path}: dictionary file is empty")
    log.info("dictionary %s->%s: %d entries", source_lang, target_lang, len(entries))
    return BilingualDictionary(source_lang, target_lang, entries)


def round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)) // 1)


def exact_ratio(ratio: float) -> Fraction:
    """Decimal reading of a ratio, so 0.25/0.5/0.75 are exact and ties round up."""
    return Fraction(str(ratio))


def replacement_count(ratio: float, n: int) -> int:
    return round_half_up(exact_ratio(ratio) * n)


def record_rng(seed: int, record_id: str, ratio: float) -> np.random.Generator:
    """Per-record stream: independent of processing order and thread count."""
    digest = hashlib.sha256(f"{seed}\x1f{record_id}\x1f{exact_ratio(ratio)}".encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))


def is_punctuation(token: str) -> bool:
    return all(unicodedata.category(c)[0] in "PS" for c in token)


def _unspaced(word: str) -> bool:
    """True for scripts written without inter-word spaces (Han, kana)."""
    for c in word:
        name = unicodedata.name(c, "")
        if name.startswith(("CJK UNIFIED", "CJK COMPATIBILITY IDEOGRAPH", "HIRAGANA", "KATAKANA")):
            return True
    return False


def render(seps: Sequence[str], words: Sequence[str]) -> str:
    """Join words, dropping spaces next to unspaced-script words and adding one
    between two spaced-script words that were glued together."""
    out = [seps[0]]
    for i, w in enumerate(words):
        if i:
            sep = seps[i]
            prev = words[i - 1]
            if sep.strip() == "" and sep and (_unspaced(prev) or _unspaced(w)):
                sep = ""
            elif not sep and not _unspaced(prev) and not _unspaced(w):
                sep = " "
            out.append(sep)
        out.append(w)
    out.append(seps[-1])
    return "".join(out)


@dataclass(frozen=True)
class MixOptions:
    script_mode: str = "whitespace"
    segmentation_lexicon: frozenset[str] = frozenset()
    denominator: str = "all"

    def validate(self) -> None:
        if self.denominator not in DENOMINATORS:
            raise InputError(f"denominator must be one of {DENOMINATORS}")


def generate_codemix(
    record: ParallelRecord,
    dictionary: BilingualDictionary,
    ratio: float,
    seed: int,
    options: MixOptions = MixOptions(),
) -> CodeMixRecord:
    """Mix one sentence. Raises :class:`SkipRecord` when the ratio cannot be met."""
    options.validate()
    if not 0 <= ratio <= 1:
        raise InputError(f"ratio must be in [0, 1], got {ratio}")
    seg = segment_with_separators(record.src, options.script_mode, options.segmentation_lexicon or None)
    tokens = seg.words
    eligible = [
        i for i, w in enumerate(tokens) if not is_punctuation(w) and dictionary.get(w) is not None
    ]
    n_tokens, n_eligible = len(tokens), len(eligible)
    if n_tokens == 0:
        raise SkipRecord(record.id, "empty base text", 0)
    basis = n_tokens if options.denominator == "all" else n_eligible
    n_replace = replacement_count(ratio, basis)
    if n_replace > 0 and n_eligible == 0:
        raise SkipRecord(record.id, "no eligible tokens", 0)
    if n_replace > n_eligible:
        raise SkipRecord(
            record.id,
            f"needs {n_replace} replacements but only {n_eligible} tokens are eligible",
            n_eligible,
        )
    rng = record_rng(seed, record.id, ratio)
    picked = sorted(eligible[int(j)] for j in rng.choice(n_eligible, size=n_replace, replace=False))
    mixed = list(tokens)
    for i in picked:
        mixed[i] = dictionary.entries[tokens[i]]
    rendered = render(seg.seps, mixed) if picked else record.src
    return CodeMixRecord(
        id=f"{record.id}@{ratio}",
        source_id=record.id,
        base_lang=record.src_lang,
        mix_lang=dictionary.target_lang,
        ratio_requested=ratio,
        ratio_actual=len(picked) / n_tokens,
        ratio_actual_eligible=len(picked) / n_eligible if n_eligible else 0.0,
        n_tokens=n_tokens,
        n_eligible=n_eligible,
        base_tokens=tokens,
        replaced=picked,
        rendered=rendered,
        tgt_lang=record.tgt_lang,
        tgt=record.tgt,
        seed=seed,
    )


def baseline_record(record: ParallelRecord, seed: int, options: MixOptions = MixOptions()) -> CodeMixRecord:
    """Monolingual pass-through flagged with ratio 0."""
    seg = segment_with_separators(record.src, options.script_mode, options.segmentation_lexicon or None)
    return CodeMixRecord(
        id=f"{record.id}@0",
        source_id=record.id,
        base_lang=record.src_lang,
        mix_lang=record.src_lang,
        ratio_requested=0.0,
        ratio_actual=0.0,
        ratio_actual_eligible=0.0,
        n_tokens=len(seg.words),
        n_eligible=0,
        base_tokens=seg.words,
        replaced=[],
        rendered=record.src,
        tgt_lang=record.tgt_lang,
        tgt=record.tgt,
        seed=seed,
    )


@dataclass
class PairSummary:
    base_lang: str
    mix_lang: str
    ratio: float
    requested: int = 0
    generated: int = 0
    skipped: int = 0
    eligible_tokens: int = 0
    total_tokens: int = 0
    ratio_actual_sum: float = 0.0
    ratio_actual_eligible_sum: float = 0.0
    skip_reasons: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        gen = self.generated
        return {
            "base_lang": self.base_lang,
            "mix_lang": self.mix_lang,
            "ratio": self.ratio,
            "requested": self.requested,
            "generated": gen,
            "skipped": self.skipped,
            "eligible": self.eligible_tokens,
            "tokens": self.total_tokens,
            "mean_ratio_actual": self.ratio_actual_sum / gen if gen else None,
            "mean_ratio_actual_eligible": self.ratio_actual_eligible_sum / gen if gen else None,
            "skip_reasons": dict(sorted(self.skip_reasons.items())),
        }


@dataclass
class CorpusResult:
    records: list[CodeMixRecord]
    baselines: list[CodeMixRecord]
    summary: dict


def _dictionary_for(record: ParallelRecord, dictionaries: Mapping[tuple[str, str], BilingualDictionary]) -> list[BilingualDictionary]:
    return [d for (src, _), d in dictionaries.items() if src == record.src_lang]


def generate_corpus(
    corpus: Sequence[ParallelRecord],
    dictionaries: BilingualDictionary | Iterable[BilingualDictionary],
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
    options: MixOptions = MixOptions(),
    threads: int = 1,
    baselines: bool = True,
) -> CorpusResult:
    """Mix every record at every ratio against every dictionary whose source is the record's language.

    Output order is (record, dictionary, ratio) regardless of ``threads``.
    Per-record failures are counted as skips and never abort the corpus.
    """
    if isinstance(dictionaries, BilingualDictionary):
        dictionaries = [dictionaries]
    by_pair = {(d.source_lang, d.target_lang): d for d in dictionaries}
    jobs = [
        (rec, d, r)
        for rec in corpus
        for d in _dictionary_for(rec, by_pair)
        for r in ratios
    ]

    def run(job):
        rec, d, r = job
        try:
            return generate_codemix(rec, d, r, seed, options)
        except SkipRecord as skip:
            return skip

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]

    summaries: dict[tuple[str, str, float], PairSummary] = {}
    records = []
    for (rec, d, r), out in zip(jobs, outcomes):
        key = (rec.src_lang, d.target_lang, r)
        s = summaries.setdefault(key, PairSummary(*key))
        s.requested += 1
        if isinstance(out, SkipRecord):
            s.skipped += 1
            s.eligible_tokens += out.n_eligible
            reason = "no eligible tokens" if out.n_eligible == 0 else "insufficient eligible tokens"
            s.skip_reasons[reason] = s.skip_reasons.get(reason, 0) + 1
            continue
        s.generated += 1
        s.eligible_tokens += out.n_eligible
        s.total_tokens += out.n_tokens
        s.ratio_actual_sum += out.ratio_actual
        s.ratio_actual_eligible_sum += out.ratio_actual_eligible
        records.append(out)
    base = [baseline_record(rec, seed, options) for rec in corpus] if baselines else []
    summary = {
        "seed": seed,
        "ratios": list(ratios),
        "denominator": options.denominator,
        "input_records": len(corpus),
        "codemix_records": len(records),
        "baseline_records": len(base),
        "skipped": sum(s.skipped for s in summaries.values()),
        "pairs": [summaries[k].to_dict() for k in sorted(summaries)],
    }
    return CorpusResult(records, base, summary)
