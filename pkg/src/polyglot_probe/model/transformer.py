"""Pre-norm decoder-only transformer with residual-stream and FFN taps.

Tap locations:

* residual snapshot 0 is the embedding output (token + learned position);
  snapshot ``l`` (1..n_layers) is the residual stream leaving block ``l-1``.
  All snapshots are taken before any layer norm.
* the FFN trace holds the post-nonlinearity inner vector of every block
  (``relu(x W_in + b_in)``, or ``silu(x W_gate + b_gate) * (x W_in + b_in)``
  for the gated variant) together with the gate branch on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from polyglot_probe.errors import InputError
from polyglot_probe.model.config import ModelConfig

LN_EPS = 1e-5


class LayerNorm(nn.Module):
    def __init__(self, d: int) -> None:
        super().__init__()
        self.w = nn.Parameter(torch.ones(d))
        self.b = nn.Parameter(torch.zeros(d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.layer_norm(x, (x.shape[-1],), self.w, self.b, LN_EPS)


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.W_Q = nn.Parameter(torch.empty(d, d))
        self.W_K = nn.Parameter(torch.empty(d, d))
        self.W_V = nn.Parameter(torch.empty(d, d))
        self.W_O = nn.Parameter(torch.empty(d, d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, d = x.shape
        h = self.n_heads
        dh = d // h

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(B, T, h, dh).transpose(1, 2)

        q, k, v = split(x @ self.W_Q), split(x @ self.W_K), split(x @ self.W_V)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
        causal = torch.ones(T, T, dtype=torch.bool, device=x.device).triu(1)
        scores = scores.masked_fill(causal, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, T, d)
        return out @ self.W_O


class MLP(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.gated = cfg.ffn_kind == "gated-silu"
        self.W_in = nn.Parameter(torch.empty(cfg.d_model, cfg.d_ff))
        self.b_in = nn.Parameter(torch.zeros(cfg.d_ff))
        if self.gated:
            self.W_gate = nn.Parameter(torch.empty(cfg.d_model, cfg.d_ff))
            self.b_gate = nn.Parameter(torch.zeros(cfg.d_ff))
        self.W_out = nn.Parameter(torch.empty(cfg.d_ff, cfg.d_model))
        self.b_out = nn.Parameter(torch.zeros(cfg.d_model))

    def inner(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return ``(inner, gate)``; for plain ReLU the two are the same tensor."""
        pre = x @ self.W_in + self.b_in
        if self.gated:
            gate = F.silu(x @ self.W_gate + self.b_gate)
            return gate * pre, gate
        act = F.relu(pre)
        return act, act

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        hidden, gate = self.inner(x)
        return hidden @ self.W_out + self.b_out, hidden, gate


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.ln1 = LayerNorm(cfg.d_model)
        self.attn = Attention(cfg)
        self.ln2 = LayerNorm(cfg.d_model)
        self.mlp = MLP(cfg)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        x = x + self.attn(self.ln1(x))
        out, hidden, gate = self.mlp(self.ln2(x))
        return x + out, hidden, gate


class Embed(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.W_E = nn.Parameter(torch.empty(cfg.vocab_size, cfg.d_model))
        self.W_pos = nn.Parameter(torch.empty(cfg.max_seq_len, cfg.d_model))


class Unembed(nn.Module):
    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        if not cfg.tie_unembed:
            self.W_U = nn.Parameter(torch.empty(cfg.vocab_size, cfg.d_model))
        self.b_U = nn.Parameter(torch.zeros(cfg.vocab_size))


class ToyTransformer(nn.Module):
    """Decoder-only transformer. Parameter registration order is the checkpoint order."""

    def __init__(self, cfg: ModelConfig) -> None:
        super().__init__()
        self.config = cfg
        self.embed = Embed(cfg)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.ln_f = LayerNorm(cfg.d_model)
        self.unembed = Unembed(cfg)

    @property
    def W_U(self) -> torch.Tensor:
        if self.config.tie_unembed:
            return self.embed.W_E
        return self.unembed.W_U

    def unembed_logits(self, h: torch.Tensor) -> torch.Tensor:
        return h @ self.W_U.T + self.unembed.b_U

    def forward(
        self, tokens: torch.Tensor, capture: bool = False
    ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        T = tokens.shape[-1]
        x = self.embed.W_E[tokens] + self.embed.W_pos[:T]
        resid = [x]
        hidden, gates = [], []
        for block in self.blocks:
            x, h, g = block(x)
            if capture:
                resid.append(x)
                hidden.append(h)
                gates.append(g)
        final = self.ln_f(x)
        logits = self.unembed_logits(final)
        taps: dict[str, torch.Tensor] = {}
        if capture:
            taps = {
                "resid": torch.stack(resid, dim=1),
                "final": final,
                "ffn": torch.stack(hidden, dim=1),
                "gate": torch.stack(gates, dim=1),
            }
        return logits, taps

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())


def parameter_names(cfg: ModelConfig) -> list[str]:
    return [name for name, _ in ToyTransformer(cfg).named_parameters()]


def init_model(config: ModelConfig) -> ToyTransformer:
    """Build a model with seeded parameters.

    Every weight matrix and embedding is drawn from U(-s, s) with
    ``s = 1/sqrt(d_model)``, in ``named_parameters()`` order, from one PCG64
    stream seeded with ``config.seed``. Biases start at 0, layer-norm gains at 1.
    """
    config.validate()
    model = ToyTransformer(config)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    scale = 1.0 / math.sqrt(config.d_model)
    with torch.no_grad():
        for name, p in model.named_parameters():
            leaf = name.rsplit(".", 1)[-1]
            if leaf.startswith("W_"):
                values = rng.uniform(-scale, scale, size=tuple(p.shape)).astype(np.float32)
                p.copy_(torch.from_numpy(values))
            elif leaf == "w":
                p.fill_(1.0)
            else:
                p.zero_()
    model.eval()
    return model


@dataclass
class ResidualTrace:
    """Pre-norm residual snapshots for one sequence.

    ``resid`` has shape ``(n_layers + 1, T, d_model)``; ``final`` is the
    post-final-norm state with shape ``(T, d_model)``.
    """

    resid: np.ndarray
    final: np.ndarray

    @property
    def n_snapshots(self) -> int:
        return self.resid.shape[0]


@dataclass
class ActivationTrace:
    """FFN inner activations for one sequence, shape ``(n_layers, T, d_ff)``.

    ``mask`` marks content positions; padding and BOS are False.
    """

    values: np.ndarray
    gate: np.ndarray
    mask: np.ndarray


@dataclass
class ForwardResult:
    probs: np.ndarray
    residual: ResidualTrace
    activations: ActivationTrace


def _check_tokens(cfg: ModelConfig, tokens: Sequence[int]) -> None:
    if len(tokens) == 0:
        raise InputError("token sequence is empty")
    if len(tokens) > cfg.max_seq_len:
        raise InputError(f"sequence length {len(tokens)} exceeds max_seq_len={cfg.max_seq_len}")
    for pos, t in enumerate(tokens):
        if not 0 <= int(t) < cfg.vocab_size:
            raise InputError(
                f"token id {t} at position {pos} out of range for vocab_size={cfg.vocab_size}"
            )


def forward_batch(
    model: ToyTransformer,
    sequences: Sequence[Sequence[int]],
    pad_id: int = 0,
    content_from: int = 0,
) -> list[ForwardResult]:
    """Run right-padded sequences through the model and split the traces per sequence.

    Positions before ``content_from`` (e.g. a BOS token) are excluded from the
    activation mask. Causal attention makes right padding invisible to real
    positions.
    """
    cfg = model.config
    for seq in sequences:
        _check_tokens(cfg, seq)
    lengths = [len(s) for s in sequences]
    T = max(lengths)
    batch = torch.full((len(sequences), T), pad_id, dtype=torch.long)
    for i, seq in enumerate(sequences):
        batch[i, : len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
    with torch.no_grad():
        logits, taps = model(batch, capture=True)
        probs = torch.softmax(logits.double(), dim=-1)
    out = []
    for i, n in enumerate(lengths):
        mask = np.zeros(n, dtype=bool)
        mask[content_from:] = True
        out.append(
            ForwardResult(
                probs=probs[i, :n].numpy(),
                residual=ResidualTrace(
                    resid=taps["resid"][i, :, :n].numpy().copy(),
                    final=taps["final"][i, :n].numpy().copy(),
                ),
                activations=ActivationTrace(
                    values=taps["ffn"][i, :, :n].numpy().copy(),
                    gate=taps["gate"][i, :, :n].numpy().copy(),
                    mask=mask,
                ),
            )
        )
    return out


def forward_with_taps(model: ToyTransformer, tokens: Sequence[int]) -> ForwardResult:
    """Instrumented forward pass over one sequence.

    Returns the per-position output distribution (float64, normalized from the
    float32 logits) and the residual and FFN traces.
    """
    return forward_batch(model, [tokens])[0]
