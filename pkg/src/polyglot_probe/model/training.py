from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from polyglot_probe.errors import InputError, ProbeError
from polyglot_probe.model.transformer import ToyTransformer

IGNORE = -100


class TrainingError(ProbeError):
    def __init__(self, step: int, loss: float) -> None:
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 3e-3
    batch: int = 32
    seed: int = 0
    warmup: int = 100
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    heldout_fraction: float = 0.1
    pad_id: int = 0

    def validate(self) -> None:
        if self.steps < 0:
            raise InputError(f"steps must be >= 0, got {self.steps}")
        if self.batch < 1:
            raise InputError(f"batch must be >= 1, got {self.batch}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise InputError(f"lr must be positive and finite, got {self.lr}")
        if not 0.0 <= self.heldout_fraction < 1.0:
            raise InputError(f"heldout_fraction must be in [0, 1), got {self.heldout_fraction}")


@dataclass
class TrainResult:
    model: ToyTransformer
    initial_heldout_loss: float
    final_heldout_loss: float
    losses: list[float] = field(default_factory=list)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad and build next-token targets with padding set to ``IGNORE``."""
    T = max(len(s) for s in seqs)
    tokens = torch.full((len(seqs), T), pad_id, dtype=torch.long)
    targets = torch.full((len(seqs), T), IGNORE, dtype=torch.long)
    for i, s in enumerate(seqs):
        s = torch.as_tensor(list(s), dtype=torch.long)
        tokens[i, : len(s)] = s
        targets[i, : len(s) - 1] = s[1:]
    return tokens, targets


def sequence_loss(
    model: ToyTransformer, seqs: Sequence[Sequence[int]], pad_id: int = 0
) -> torch.Tensor:
    """Mean next-token cross-entropy over all non-pad target positions."""
    tokens, targets = pad_batch(seqs, pad_id)
    logits, _ = model(tokens)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=IGNORE
    )


def heldout_loss(model: ToyTransformer, seqs: Sequence[Sequence[int]], pad_id: int, chunk: int = 256) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(seqs), chunk):
            part = seqs[i : i + chunk]
            n = sum(len(s) - 1 for s in part)
            if n == 0:
                continue
            total += float(sequence_loss(model, part, pad_id)) * n
            count += n
    return total / count if count else float("nan")


def split_heldout(corpus: Sequence[Sequence[int]], fraction: float) -> tuple[list, list]:
    corpus = list(corpus)
    n_held = max(1, int(round(len(corpus) * fraction))) if fraction > 0 and len(corpus) > 1 else 0
    if n_held == 0:
        return corpus, corpus
    return corpus[:-n_held], corpus[-n_held:]


def train(model: ToyTransformer, corpus: Sequence[Sequence[int]], hyper: TrainConfig) -> TrainResult:
    """Train a copy of ``model`` with AdamW on next-token prediction.

    The last ``heldout_fraction`` of the corpus is held out and never sampled
    for training. Batches are drawn with replacement from a PCG64 stream
    seeded by ``hyper.seed``; with a single intra-op thread the result is
    bit-reproducible.
    """
    hyper.validate()
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise InputError("training corpus is empty")
    cfg = model.config
    for i, s in enumerate(corpus):
        if len(s) < 2:
            raise InputError(f"corpus sequence {i} has fewer than 2 tokens")
        if len(s) > cfg.max_seq_len:
            raise InputError(f"corpus sequence {i} longer than max_seq_len={cfg.max_seq_len}")
        if min(s) < 0 or max(s) >= cfg.vocab_size:
            raise InputError(f"corpus sequence {i} has token ids outside the vocabulary")

    trained = copy.deepcopy(model)
    train_set, held = split_heldout(corpus, hyper.heldout_fraction)
    initial = heldout_loss(trained, held, hyper.pad_id)
    if hyper.steps == 0:
        return TrainResult(trained, initial, initial, [])

    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    opt = torch.optim.AdamW(
        trained.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay, foreach=False
    )
    warmup = max(1, hyper.warmup)
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda step: min(1.0, (step + 1) / warmup)
    )
    losses = []
    trained.train()
    for step in range(hyper.steps):
        idx = rng.integers(0, len(train_set), size=hyper.batch)
        loss = sequence_loss(trained, [train_set[j] for j in idx], hyper.pad_id)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(step, value)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if hyper.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(trained.parameters(), hyper.grad_clip, foreach=False)
        opt.step()
        sched.step()
        losses.append(value)
    trained.eval()
    final = heldout_loss(trained, held, hyper.pad_id)
    return TrainResult(trained, initial, final, losses)


@dataclass
class GradCheckResult:
    max_rel_error: float | None
    n_checked: int
    applicable: bool


def gradient_check(
    model: ToyTransformer,
    tokens: Sequence[int],
    n_samples: int = 64,
    eps: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-8,
) -> GradCheckResult:
    """Compare autograd gradients to central differences in float64.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor)``. A single
    token has no next-token target, so the check is reported as not applicable.
    """
    tokens = list(tokens)
    if len(tokens) < 2:
        return GradCheckResult(None, 0, False)
    m = copy.deepcopy(model).double()
    m.eval()
    params = list(m.parameters())
    loss = sequence_loss(m, [tokens])
    grads = torch.autograd.grad(loss, params)
    sizes = np.array([p.numel() for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = rng.choice(offsets[-1], size=min(n_samples, int(offsets[-1])), replace=False)
    worst = 0.0
    with torch.no_grad():
        for flat in sorted(int(x) for x in picks):
            k = int(np.searchsorted(offsets, flat, side="right") - 1)
            local = flat - offsets[k]
            view = params[k].view(-1)
            orig = view[local].item()
            view[local] = orig + eps
            plus = float(sequence_loss(m, [tokens]))
            view[local] = orig - eps
            minus = float(sequence_loss(m, [tokens]))
            view[local] = orig
            numeric = (plus - minus) / (2 * eps)
            analytic = float(grads[k].view(-1)[local])
            denom = max(abs(analytic), abs(numeric), floor)
            worst = max(worst, abs(analytic - numeric) / denom)
    return GradCheckResult(worst, len(picks), True)
