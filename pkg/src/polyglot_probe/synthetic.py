"""Synthetic workloads built from a generated lexicon: translation prompts and parallel sentences."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from polyglot_probe.codemix import BilingualDictionary, ParallelRecord
from polyglot_probe.tokenize import PromptTask, Vocab, build_prompt, sample_shots


def translation_tasks(
    languages: Sequence[str],
    n_concepts: int,
    n_tasks: int,
    seed: int,
) -> list[tuple[PromptTask, list[int]]]:
    """Random ordered language pairs, query concepts and 5-shot contexts."""
    rng = np.random.Generator(np.random.PCG64(seed))
    pairs = [(a, b) for a in languages for b in languages if a != b]
    out = []
    for _ in range(n_tasks):
        src, tgt = pairs[int(rng.integers(len(pairs)))]
        query = int(rng.integers(n_concepts))
        out.append((PromptTask(src, tgt, query), sample_shots(rng, n_concepts, query)))
    return out


def training_sequences(
    tasks: Sequence[tuple[PromptTask, list[int]]],
    lexicons: Mapping[str, Sequence[str]],
    vocab: Vocab,
) -> list[list[int]]:
    """Each prompt followed by its answer word, i.e. a complete 6-line example."""
    seqs = []
    for task, shots in tasks:
        ids = build_prompt(task, shots, lexicons, vocab)
        ids.extend(vocab.encode_word(lexicons[task.tgt_lang][task.query_concept]))
        seqs.append(ids)
    return seqs


def parallel_corpus(
    lexicons: Mapping[str, Sequence[str]],
    base: str,
    partner: str,
    n: int,
    seed: int,
    length: tuple[int, int] = (6, 12),
) -> list[ParallelRecord]:
    """Random word sequences in ``base`` with their word-by-word ``partner`` translation."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n_concepts = len(lexicons[base])
    out = []
    for i in range(n):
        k = int(rng.integers(length[0], length[1] + 1))
        concepts = rng.integers(0, n_concepts, size=k)
        out.append(
            ParallelRecord(
                id=f"{base}-{partner}-{i:05d}",
                src_lang=base,
                tgt_lang=partner,
                src=" ".join(lexicons[base][c] for c in concepts),
                tgt=" ".join(lexicons[partner][c] for c in concepts),
            )
        )
    return out


def lexicon_dictionary(lexicons: Mapping[str, Sequence[str]], source: str, target: str) -> BilingualDictionary:
    return BilingualDictionary(
        source, target, {s: t for s, t in zip(lexicons[source], lexicons[target])}
    )
