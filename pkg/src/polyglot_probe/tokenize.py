"""Vocabulary, synthetic languages, prompt construction and word segmentation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from polyglot_probe.errors import InputError

PAD, BOS, SEP = "<pad>", "<bos>", "<sep>"
COLON, ARROW = ":", "→"
N_SHOTS = 5


class Vocab:
    """Bijective map between surface pieces and token ids.

    Ids 0, 1, 2 are reserved for padding, beginning-of-sequence and the line
    separator. Text rendering joins pieces with a space and renders the
    separator as a newline, so :meth:`encode` inverts :meth:`decode`.
    """

    def __init__(self, pieces: Iterable[str]) -> None:
        self.pieces: list[str] = []
        self._ids: dict[str, int] = {}
        for p in [PAD, BOS, SEP, *pieces]:
            if p not in self._ids:
                if not p or any(c.isspace() for c in p):
                    raise InputError(f"vocabulary piece {p!r} is empty or contains whitespace")
                self._ids[p] = len(self.pieces)
                self.pieces.append(p)

    pad_id, bos_id, sep_id = 0, 1, 2

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, piece: str) -> bool:
        return piece in self._ids

    def id(self, piece: str) -> int:
        try:
            return self._ids[piece]
        except KeyError:
            raise InputError(f"piece {piece!r} is not in the vocabulary") from None

    def piece(self, idx: int) -> str:
        if not 0 <= idx < len(self.pieces):
            raise InputError(f"token id {idx} outside vocabulary of size {len(self)}")
        return self.pieces[idx]

    def encode_word(self, word: str) -> list[int]:
        """Whole-word token if present, else one token per character."""
        if word in self._ids:
            return [self._ids[word]]
        return [self.id(c) for c in word]

    def encode(self, text: str, bos: bool = False) -> list[int]:
        ids = [self.bos_id] if bos else []
        for i, line in enumerate(text.split("\n")):
            if i:
                ids.append(self.sep_id)
            for word in line.split():
                ids.extend(self.encode_word(word))
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        out: list[str] = []
        for idx in ids:
            p = self.piece(int(idx))
            if p == SEP:
                out.append("\n")
            else:
                if out and out[-1] != "\n":
                    out.append(" ")
                out.append(p)
        return "".join(out)

    def to_json(self) -> str:
        return json.dumps({"pieces": self.pieces}, ensure_ascii=False, indent=0)

    @classmethod
    def from_pieces(cls, pieces: Sequence[str]) -> "Vocab":
        if list(pieces[:3]) != [PAD, BOS, SEP]:
            raise InputError("vocabulary must start with the reserved pieces <pad>, <bos>, <sep>")
        if len(set(pieces)) != len(pieces):
            raise InputError("vocabulary pieces are not unique")
        return cls(pieces[3:])

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        from polyglot_probe.io import read_json

        data = read_json(path)
        if not isinstance(data, dict) or "pieces" not in data:
            raise InputError(f"{path}: expected an object with a 'pieces' list")
        return cls.from_pieces(data["pieces"])


def lang_token(tag: str) -> str:
    return f"<{tag}>"


@dataclass(frozen=True)
class SyntheticLanguageSpec:
    tag: str
    char_start: int
    char_end: int  # inclusive code point
    word_len: tuple[int, int] = (3, 6)
    concepts: int = 50
    seed: int = 0
    n_synonyms: int = 0

    @property
    def alphabet(self) -> list[str]:
        return [chr(c) for c in range(self.char_start, self.char_end + 1)]


class SynonymTable:
    """concept id -> language tag -> surface forms (first form is the primary word)."""

    def __init__(self, table: Mapping[int, Mapping[str, Sequence[str]]], languages: Sequence[str] | None = None) -> None:
        self.table: dict[int, dict[str, list[str]]] = {}
        langs = set(languages) if languages is not None else None
        for concept, per_lang in table.items():
            row = {}
            for lang, forms in per_lang.items():
                if langs is not None and lang not in langs:
                    raise InputError(f"concept {concept}: undeclared language {lang!r}")
                if not forms:
                    raise InputError(f"concept {concept}, language {lang}: empty synonym list")
                row[lang] = list(forms)
            self.table[int(concept)] = row
        self.languages = list(languages) if languages is not None else sorted(
            {lang for row in self.table.values() for lang in row}
        )

    def __getitem__(self, concept: int) -> dict[str, list[str]]:
        try:
            return self.table[concept]
        except KeyError:
            raise InputError(f"unknown concept {concept}") from None

    def __len__(self) -> int:
        return len(self.table)

    def concepts(self) -> list[int]:
        return sorted(self.table)

    def to_dict(self) -> dict[str, dict[str, list[str]]]:
        return {str(c): self.table[c] for c in self.concepts()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, Sequence[str]]], languages: Sequence[str] | None = None) -> "SynonymTable":
        try:
            return cls({int(k): v for k, v in data.items()}, languages)
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed synonym table: {exc}") from exc

    @classmethod
    def load(cls, path: Path) -> "SynonymTable":
        from polyglot_probe.io import read_json

        return cls.from_dict(read_json(path))


@dataclass
class SyntheticLexicon:
    lexicons: dict[str, list[str]]
    synonyms: SynonymTable
    vocab: Vocab
    specs: list[SyntheticLanguageSpec] = field(default_factory=list)


def _gen_word(rng: np.random.Generator, alphabet: list[str], word_len: tuple[int, int]) -> str:
    n = int(rng.integers(word_len[0], word_len[1] + 1))
    return "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), size=n))


def gen_synthetic_languages(specs: Sequence[SyntheticLanguageSpec]) -> SyntheticLexicon:
    """Generate one random word per concept per language from disjoint alphabets."""
    if not specs:
        raise InputError("no language specs given")
    tags = [s.tag for s in specs]
    if len(set(tags)) != len(tags):
        raise InputError(f"duplicate language tags: {tags}")
    if len({s.concepts for s in specs}) != 1:
        raise InputError("all languages must share the same concept count")
    ordered = sorted(specs, key=lambda s: s.char_start)
    for a, b in zip(ordered, ordered[1:]):
        if b.char_start <= a.char_end:
            raise InputError(f"character ranges of {a.tag!r} and {b.tag!r} overlap")
    for s in specs:
        if s.char_end < s.char_start:
            raise InputError(f"{s.tag}: empty character range")
        lo, hi = s.word_len
        if not 1 <= lo <= hi:
            raise InputError(f"{s.tag}: invalid word length range {s.word_len}")
        if len(s.alphabet) ** hi < s.concepts * (1 + s.n_synonyms):
            raise InputError(f"{s.tag}: alphabet too small for {s.concepts} concepts")

    n_concepts = specs[0].concepts
    lexicons: dict[str, list[str]] = {}
    table: dict[int, dict[str, list[str]]] = {c: {} for c in range(n_concepts)}
    for s in specs:
        rng = np.random.Generator(np.random.PCG64(s.seed))
        used: set[str] = set()
        words = []
        for c in range(n_concepts):
            forms = []
            for _ in range(1 + s.n_synonyms):
                for _attempt in range(10_000):
                    w = _gen_word(rng, s.alphabet, s.word_len)
                    if w not in used:
                        break
                else:
                    raise InputError(f"{s.tag}: could not draw a unique word for concept {c}")
                used.add(w)
                forms.append(w)
            words.append(forms[0])
            table[c][s.tag] = forms
        lexicons[s.tag] = words

    pieces = [lang_token(t) for t in tags] + [COLON, ARROW]
    for c in range(n_concepts):
        for t in tags:
            pieces.extend(table[c][t])
    for s in specs:
        pieces.extend(s.alphabet)
    return SyntheticLexicon(lexicons, SynonymTable(table, tags), Vocab(pieces), list(specs))


def default_specs(n_languages: int = 2, concepts: int = 50, seed: int = 0, n_synonyms: int = 0) -> list[SyntheticLanguageSpec]:
    """Languages ``aa``, ``bb``, ... each over its own block of 16 code points."""
    specs = []
    for i in range(n_languages):
        tag = chr(ord("a") + i) * 2
        start = 0x0100 + 32 * i  # Latin Extended-A/B letters; a spaced script
        specs.append(SyntheticLanguageSpec(tag, start, start + 15, (2, 4), concepts, seed * 1000 + i, n_synonyms))
    return specs


@dataclass(frozen=True)
class PromptTask:
    src_lang: str
    tgt_lang: str
    query_concept: int

    @property
    def task_id(self) -> str:
        return f"{self.src_lang}-{self.tgt_lang}-{self.query_concept}"


def prompt_text(task: PromptTask, shots: Sequence[int], lexicons: Mapping[str, Sequence[str]]) -> str:
    for lang in (task.src_lang, task.tgt_lang):
        if lang not in lexicons:
            raise InputError(f"unknown language {lang!r}")
    src, tgt = lexicons[task.src_lang], lexicons[task.tgt_lang]
    for c in [*shots, task.query_concept]:
        if not 0 <= c < min(len(src), len(tgt)):
            raise InputError(f"unknown concept {c}")
    if task.query_concept in shots:
        raise InputError(f"query concept {task.query_concept} also appears among the shots")
    if len(shots) != N_SHOTS:
        raise InputError(f"expected {N_SHOTS} shots, got {len(shots)}")
    s, t = lang_token(task.src_lang), lang_token(task.tgt_lang)
    lines = [f"{s} {COLON} {src[c]} {ARROW} {t} {COLON} {tgt[c]}" for c in shots]
    lines.append(f"{s} {COLON} {src[task.query_concept]} {ARROW} {t} {COLON}")
    return "\n".join(lines)


def build_prompt(
    task: PromptTask,
    shots: Sequence[int],
    lexicons: Mapping[str, Sequence[str]],
    vocab: Vocab,
) -> list[int]:
    """Token ids for ``<SRC> : w → <TGT> : w'`` x5, then ``<SRC> : q → <TGT> :``, prefixed by BOS."""
    return vocab.encode(prompt_text(task, shots, lexicons), bos=True)


def sample_shots(rng: np.random.Generator, n_concepts: int, query: int, n: int = N_SHOTS) -> list[int]:
    pool = np.array([c for c in range(n_concepts) if c != query])
    if len(pool) < n:
        raise InputError(f"need at least {n + 1} concepts for a {n}-shot prompt")
    return [int(c) for c in rng.choice(pool, size=n, replace=False)]


def write_lexicon_tsv(path: Path, lexicons: Mapping[str, Sequence[str]]) -> None:
    from polyglot_probe.io import atomic_write_text

    rows = [f"{w}\t{lang}\n" for lang, words in lexicons.items() for w in words]
    atomic_write_text(path, "".join(rows))


def read_lexicon_tsv(path: Path) -> dict[str, list[str]]:
    """Rows ``surface<TAB>language``; concept id is the row's index within its language."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise InputError(f"{path}:{lineno}: expected 'surface<TAB>language'")
        out.setdefault(parts[1], []).append(parts[0])
    return out


# --- segmentation -------------------------------------------------------------


@dataclass
class Segmentation:
    """``seps[i]`` precedes ``words[i]``; ``seps[-1]`` trails the last word."""

    words: list[str]
    seps: list[str]

    def join(self, words: Sequence[str] | None = None) -> str:
        words = self.words if words is None else words
        return "".join(s + w for s, w in zip(self.seps, words)) + self.seps[-1]


def segment_with_separators(
    text: str, script_mode: str = "whitespace", lexicon: Iterable[str] | None = None
) -> Segmentation:
    """Split ``text`` into words, keeping the whitespace between them.

    ``longest-match`` scans left to right and emits the longest lexicon entry
    starting at each position, or a single character when none matches.
    Whitespace always separates words in both modes.
    """
    if script_mode == "whitespace":
        lex: set[str] = set()
    elif script_mode == "longest-match":
        lex = set(lexicon or ())
        lex.discard("")
        if not lex:
            raise InputError("longest-match segmentation requires a non-empty lexicon")
    else:
        raise InputError(f"unknown script mode {script_mode!r}")
    max_len = max((len(w) for w in lex), default=1)

    words: list[str] = []
    seps: list[str] = []
    i, n = 0, len(text)
    sep_start = 0
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        seps.append(text[sep_start:i])
        j = i
        while j < n and not text[j].isspace():
            j += 1
        chunk_end = j
        if script_mode == "whitespace":
            words.append(text[i:chunk_end])
            i = chunk_end
        else:
            # one word per iteration; separators inside a chunk are empty
            for length in range(min(max_len, chunk_end - i), 0, -1):
                if text[i : i + length] in lex:
                    break
            else:
                length = 1
            words.append(text[i : i + length])
            i += length
        sep_start = i
    seps.append(text[sep_start:])
    return Segmentation(words, seps)


def segment(text: str, script_mode: str = "whitespace", lexicon: Iterable[str] | None = None) -> list[str]:
    return segment_with_separators(text, script_mode, lexicon).words
