"""Command-line entry point: one subcommand per analysis stage.

Options come from built-in defaults, then an optional TOML/JSON ``--config``
file, then flags. Every run writes ``manifest.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Callable

from polyglot_probe import __version__
from polyglot_probe.errors import InputError, InvariantError, ProbeError

log = logging.getLogger("polyglot_probe")

LOG_ENV = "POLYGLOT_PROBE_LOG"


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# (flag, type, default, help, extra argparse kwargs)
Opt = tuple[str, Any, Any, str, dict]

COMMON: list[Opt] = [
    ("--seed", int, 0, "random seed (unsigned 64-bit)", {}),
    ("--out", str, None, "output directory", {}),
    ("--threads", int, 1, "worker threads; outputs do not depend on it", {}),
]

MODEL_OPTS: list[Opt] = [
    ("--n-layers", int, 4, "transformer blocks", {}),
    ("--d-model", int, 128, "residual width", {}),
    ("--n-heads", int, 4, "attention heads", {}),
    ("--d-ff", int, 512, "FFN inner width", {}),
    ("--max-seq-len", int, 64, "maximum sequence length", {}),
    ("--ffn-kind", str, "relu", "relu or gated-silu", {"choices": ["relu", "gated-silu"]}),
    ("--tie-unembed", bool, False, "share embedding and unembedding", {}),
]

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "gen-synthetic": (
        "generate synthetic languages, lexicon, prompts and a parallel corpus",
        [
            ("--languages", int, 3, "number of synthetic languages", {}),
            ("--concepts", int, 50, "concepts per language", {}),
            ("--synonyms", int, 0, "extra synonyms per concept and language", {}),
            ("--train-prompts", int, 4000, "5-shot training examples", {}),
            ("--lens-tasks", int, 100, "held-out lens prompts", {}),
            ("--mix-bases", int, 2, "languages used as code-mix bases", {}),
            ("--parallel-sentences", int, 60, "parallel sentences per (base, partner) pair", {}),
        ],
    ),
    "train": (
        "train the toy transformer on a token corpus",
        [
            ("--corpus", str, None, "JSONL with a 'tokens' list per line", {}),
            ("--vocab", str, None, "vocab.json", {}),
            *MODEL_OPTS,
            ("--steps", int, 2000, "optimizer steps", {}),
            ("--lr", float, 1e-3, "peak learning rate", {}),
            ("--batch", int, 32, "sequences per step", {}),
        ],
    ),
    "gen-codemix": (
        "build a code-mixed corpus from parallel text and bilingual dictionaries",
        [
            ("--parallel", str, None, "parallel corpus JSONL", {}),
            ("--dictionary", str, None,
             "dictionary TSV as SRC-TGT=path (repeatable); the pair defaults to the file stem",
             {"action": "append"}),
            ("--ratio", _float_list, [0.25, 0.5, 0.75], "comma-separated mixing ratios", {}),
            ("--denominator", str, "all", "ratio basis: all words or eligible words",
             {"choices": ["all", "eligible"]}),
            ("--script-mode", str, "whitespace", "base-text segmentation",
             {"choices": ["whitespace", "longest-match"]}),
            ("--seg-lexicon", str, None, "lexicon TSV for longest-match segmentation", {}),
            ("--dict-first-wins", bool, False, "keep the first of duplicate dictionary keys", {}),
        ],
    ),
    "lens": (
        "logit-lens language curves and AUCs",
        [
            ("--checkpoint", str, None, "model checkpoint (.ttlm)", {}),
            ("--vocab", str, None, "vocab.json", {}),
            ("--synonyms", str, None, "synonyms.json", {}),
            ("--lexicon", str, None, "lexicon.tsv", {}),
            ("--tasks", str, None, "tasks.jsonl", {}),
            ("--threshold", float, 0.1, "per-language mass threshold", {}),
            ("--model-tag", str, None, "model label in tables (default: checkpoint stem)", {}),
        ],
    ),
    "neuron-freq": (
        "activation-frequency neuron selection and IoU matrices",
        [
            ("--checkpoint", str, None, "model checkpoint (.ttlm)", {}),
            ("--vocab", str, None, "vocab.json", {}),
            ("--codemix", str, None, "codemix.jsonl", {}),
            ("--baselines", str, None, "baselines.jsonl", {}),
            ("--k-mass", float, 0.9, "activation mass to cover", {}),
            ("--scope", str, "layer", "selection per layer or pooled", {"choices": ["layer", "global"]}),
            ("--fire-on", str, "gate", "binarized signal", {"choices": ["gate", "inner"]}),
            ("--model-tag", str, None, "model label in tables (default: checkpoint stem)", {}),
        ],
    ),
    "neuron-ap": (
        "activation-strength (Average Precision) neuron classification",
        [
            ("--checkpoint", str, None, "model checkpoint (.ttlm)", {}),
            ("--vocab", str, None, "vocab.json", {}),
            ("--codemix", str, None, "codemix.jsonl", {}),
            ("--baselines", str, None, "baselines.jsonl", {}),
            ("--k-count", int, 1000, "neurons per class", {}),
        ],
    ),
    "stats": (
        "Mann-Whitney/Bonferroni tests on AUC tables and per-layer IoU phase analysis",
        [
            ("--auc-table", str, None, "auc_table.csv from lens", {}),
            ("--iou-table", str, None, "iou_long.csv from neuron-freq", {}),
            ("--alpha", float, 0.05, "family-wise significance level", {}),
            ("--alternative", str, None,
             "test direction (default: two-sided for AUC tests, greater for phase analysis)",
             {"choices": ["two-sided", "greater", "less"]}),
            ("--group-a", str, None, "first base group for phase analysis", {}),
            ("--group-b", str, None, "second base group for phase analysis", {}),
            ("--phase-boundaries", _int_list, [5, 17], "comma-separated phase boundary layers", {}),
        ],
    ),
    "bleu": (
        "corpus BLEU of hypothesis lines against reference lines",
        [
            ("--hyp", str, None, "hypotheses, one sentence per line", {}),
            ("--ref", str, None, "references, one sentence per line", {}),
            ("--max-n", int, 4, "highest n-gram order", {}),
            ("--smoothing", str, "none", "zero-precision smoothing",
             {"choices": ["none", "add-one-on-zero"]}),
        ],
    ),
}

REQUIRED: dict[str, list[str]] = {
    "train": ["corpus", "vocab"],
    "gen-codemix": ["parallel", "dictionary"],
    "lens": ["checkpoint", "vocab", "synonyms", "tasks"],
    "neuron-freq": ["checkpoint", "vocab", "codemix"],
    "neuron-ap": ["checkpoint", "vocab", "codemix"],
    "bleu": ["hyp", "ref"],
}

# execution knobs that by contract do not change outputs; kept out of manifests
RUNTIME_KEYS = {"threads", "config", "strict_config"}


def _dest(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # bad flags are input errors: exit 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polyglot-probe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="TOML or JSON config file")
        p.add_argument("--strict-config", action="store_true",
                       help="fail when a flag contradicts the config file")
        for flag, typ, default, help_, extra in [*COMMON, *opts]:
            kwargs = dict(extra)
            if typ is bool:
                kwargs.setdefault("action", argparse.BooleanOptionalAction)
            elif "action" not in kwargs or kwargs["action"] != "append":
                kwargs["type"] = typ
            shown = "" if default is None else f" (default: {default})"
            p.add_argument(flag, dest=_dest(flag), default=argparse.SUPPRESS, help=help_ + shown, **kwargs)
    return parser


def load_config_file(path: str | None, command: str) -> dict[str, Any]:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib as toml
        else:
            import tomli as toml

        try:
            data = toml.loads(text)
        except toml.TOMLDecodeError as exc:
            raise InputError(f"{p}: invalid TOML ({exc})") from exc
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{p}: invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise InputError(f"{p}: top level must be a table/object")
    flat = {k: v for k, v in data.items() if not isinstance(v, dict)}
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise InputError(f"{p}: [{command}] must be a table")
    flat.update(section)
    return {k.replace("-", "_"): v for k, v in flat.items()}


def resolve_config(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    opts = [*COMMON, *COMMANDS[command][1]]
    defaults = {_dest(f): d for f, _, d, _, _ in opts}
    types = {_dest(f): t for f, t, _, _, _ in opts}
    file_cfg = load_config_file(ns.config, command)
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise InputError(f"unknown config keys for {command}: {sorted(unknown)}")
    flags = {k: v for k, v in vars(ns).items() if k in defaults}
    resolved = dict(defaults)
    for key, value in file_cfg.items():
        typ = types[key]
        if typ in (_float_list, _int_list) and not isinstance(value, list):
            value = typ(value)
        resolved[key] = value
    for key, value in flags.items():
        if key in file_cfg and file_cfg[key] != value:
            msg = f"{key}: flag value {value!r} overrides config file value {file_cfg[key]!r}"
            if ns.strict_config:
                raise InputError(f"config conflict: {msg}")
            log.warning("config conflict: %s", msg)
        resolved[key] = value
    for key in REQUIRED.get(command, []):
        if resolved.get(key) in (None, []):
            raise InputError(f"{command}: --{key.replace('_', '-')} is required")
    if not resolved.get("out"):
        raise InputError(f"{command}: --out is required")
    if resolved["threads"] < 1:
        raise InputError("--threads must be >= 1")
    if not 0 <= resolved["seed"] < 2**64:
        raise InputError("--seed must be an unsigned 64-bit integer")
    return resolved


def configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    parser = build_parser()
    ns = parser.parse_args(argv)
    import torch

    from polyglot_probe import commands

    # one intra-op thread fixes every reduction order; --threads only sizes task pools
    torch.set_num_threads(1)
    handlers: dict[str, Callable[[dict], None]] = {
        "gen-synthetic": commands.gen_synthetic,
        "train": commands.train_cmd,
        "gen-codemix": commands.gen_codemix,
        "lens": commands.lens_cmd,
        "neuron-freq": commands.neuron_freq,
        "neuron-ap": commands.neuron_ap,
        "stats": commands.stats_cmd,
        "bleu": commands.bleu_cmd,
    }
    cfg: dict[str, Any] | None = None
    try:
        cfg = resolve_config(ns.command, ns)
        handlers[ns.command](cfg)
        return 0
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        code, msg = 1, f"error: {exc}"
    except (InvariantError, AssertionError) as exc:
        code, msg = 2, f"internal invariant violated: {exc}"
    except ProbeError as exc:
        code, msg = 1, f"error: {exc}"
    print(msg, file=sys.stderr)
    if cfg is not None:
        try:
            commands.write_failure_manifest(ns.command, cfg, code, msg)
        except OSError as exc:
            log.warning("could not write failure manifest: %s", exc)
    return code


if __name__ == "__main__":
    sys.exit(main())
