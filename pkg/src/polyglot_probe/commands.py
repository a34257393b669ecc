"""Subcommand implementations. Each takes the resolved config dict."""

from __future__ import annotations

import logging
import os
from collections import defaultdict
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from polyglot_probe import codemix as cm
from polyglot_probe import lens as lens_mod
from polyglot_probe import neurons as nr
from polyglot_probe import stats as st
from polyglot_probe import synthetic
from polyglot_probe.errors import InputError, InvariantError
from polyglot_probe.io import (
    atomic_write_text,
    read_csv,
    read_jsonl,
    sha256_file,
    write_csv,
    write_json,
    write_jsonl,
)
from polyglot_probe.model import (
    ModelConfig,
    TrainConfig,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from polyglot_probe.tokenize import (
    PromptTask,
    SynonymTable,
    Vocab,
    build_prompt,
    default_specs,
    gen_synthetic_languages,
    read_lexicon_tsv,
    write_lexicon_tsv,
)

log = logging.getLogger(__name__)

from polyglot_probe.cli import RUNTIME_KEYS  # noqa: E402


class Run:
    """Tracks inputs and outputs of one subcommand and writes its manifest."""

    def __init__(self, command: str, cfg: dict[str, Any]) -> None:
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []

    def rel(self, path: str | os.PathLike) -> str:
        return os.path.relpath(Path(path), self.out).replace(os.sep, "/")

    def input(self, path: str | os.PathLike) -> Path:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"input not found: {p}")
        self.inputs[self.rel(p)] = sha256_file(p)
        return p

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def finish(self, extra: dict | None = None) -> None:
        manifest = {
            "tool": "polyglot-probe",
            "command": self.command,
            "status": "ok",
            "config": self.manifest_config(),
            "inputs": [{"path": p, "sha256": h} for p, h in sorted(self.inputs.items())],
            "outputs": [
                {"path": name, "sha256": sha256_file(self.out / name)} for name in sorted(self.outputs)
            ],
        }
        if extra:
            manifest["summary"] = extra
        write_json(self.out / "manifest.json", manifest)

    def manifest_config(self) -> dict:
        """Resolved config without runtime knobs, input paths relative to ``--out``."""
        config = {k: v for k, v in sorted(self.cfg.items()) if k not in RUNTIME_KEYS and k != "out"}
        for k in ("corpus", "vocab", "parallel", "seg_lexicon", "checkpoint", "synonyms",
                  "lexicon", "tasks", "codemix", "baselines", "auc_table", "iou_table", "hyp", "ref"):
            if config.get(k):
                config[k] = self.rel(config[k])
        if config.get("dictionary"):
            config["dictionary"] = [
                f"{spec.split('=', 1)[0]}={self.rel(spec.split('=', 1)[1])}" if "=" in spec else self.rel(spec)
                for spec in config["dictionary"]
            ]
        return config


def write_failure_manifest(command: str, cfg: dict, exit_code: int, message: str) -> None:
    """Record a failed run; inputs read so far are not listed and no outputs are claimed."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    run = Run(command, cfg)
    write_json(out / "manifest.json", {
        "tool": "polyglot-probe",
        "command": command,
        "status": "error",
        "exit_code": exit_code,
        "error": message,
        "config": run.manifest_config(),
        "inputs": [],
        "outputs": [],
    })


# --- gen-synthetic ---------------------------------------------------------------


def gen_synthetic(cfg: dict) -> None:
    run = Run("gen-synthetic", cfg)
    seed = cfg["seed"]
    n_lang, concepts = cfg["languages"], cfg["concepts"]
    if n_lang < 2:
        raise InputError("--languages must be >= 2")
    lex = gen_synthetic_languages(default_specs(n_lang, concepts, seed=seed, n_synonyms=cfg["synonyms"]))
    langs = list(lex.lexicons)

    write_json(run.path("vocab.json"), {"pieces": lex.vocab.pieces})
    write_lexicon_tsv(run.path("lexicon.tsv"), lex.lexicons)
    write_json(run.path("synonyms.json"), lex.synonyms.to_dict())

    train_tasks = synthetic.translation_tasks(langs, concepts, cfg["train_prompts"], seed + 1)
    seqs = synthetic.training_sequences(train_tasks, lex.lexicons, lex.vocab)
    write_jsonl(run.path("train_corpus.jsonl"), ({"tokens": s} for s in seqs))

    lens_tasks = synthetic.translation_tasks(langs, concepts, cfg["lens_tasks"], seed + 2)
    write_jsonl(
        run.path("tasks.jsonl"),
        (
            {"id": f"t{i:04d}-{t.task_id}", "src_lang": t.src_lang, "tgt_lang": t.tgt_lang,
             "concept": t.query_concept, "shots": shots}
            for i, (t, shots) in enumerate(lens_tasks)
        ),
    )

    bases = langs[: max(1, min(cfg["mix_bases"], n_lang))]
    records = []
    for bi, base in enumerate(bases):
        for pi, partner in enumerate(langs):
            if partner == base:
                continue
            records += synthetic.parallel_corpus(
                lex.lexicons, base, partner, cfg["parallel_sentences"], seed + 100 + 10 * bi + pi
            )
            d = synthetic.lexicon_dictionary(lex.lexicons, base, partner)
            rows = "".join(f"{s}\t{t}\n" for s, t in d.entries.items())
            atomic_write_text(run.path(f"dict_{base}-{partner}.tsv"), rows)
    write_jsonl(run.path("parallel.jsonl"), (r.__dict__ for r in records))
    run.finish({"vocab_size": len(lex.vocab), "languages": langs, "parallel_records": len(records)})


# --- train -------------------------------------------------------------------------


def _load_corpus(path: Path) -> list[list[int]]:
    out = []
    for lineno, obj in read_jsonl(path):
        toks = obj.get("tokens") if isinstance(obj, dict) else None
        if not isinstance(toks, list) or not all(isinstance(t, int) for t in toks):
            raise InputError(f"{path}:{lineno}: expected {{'tokens': [int, ...]}}")
        out.append(toks)
    return out


def train_cmd(cfg: dict) -> None:
    run = Run("train", cfg)
    vocab = Vocab.load(run.input(cfg["vocab"]))
    corpus = _load_corpus(run.input(cfg["corpus"]))
    mcfg = ModelConfig(
        n_layers=cfg["n_layers"], d_model=cfg["d_model"], n_heads=cfg["n_heads"], d_ff=cfg["d_ff"],
        vocab_size=len(vocab), max_seq_len=cfg["max_seq_len"], ffn_kind=cfg["ffn_kind"],
        seed=cfg["seed"], tie_unembed=cfg["tie_unembed"],
    )
    model = init_model(mcfg)
    result = train(model, corpus, TrainConfig(steps=cfg["steps"], lr=cfg["lr"], batch=cfg["batch"],
                                              seed=cfg["seed"], pad_id=vocab.pad_id))
    save_checkpoint(result.model, run.path("model.ttlm"))
    log_rows = [{"step": i, "loss": v} for i, v in enumerate(result.losses)]
    write_jsonl(run.path("train_log.jsonl"), log_rows)
    run.finish({
        "n_params": result.model.n_params(),
        "initial_heldout_loss": result.initial_heldout_loss,
        "final_heldout_loss": result.final_heldout_loss,
    })


# --- gen-codemix -------------------------------------------------------------------


def _parse_dict_spec(spec: str) -> tuple[str, str, Path]:
    if "=" in spec:
        pair, path = spec.split("=", 1)
    else:
        path = spec
        pair = Path(spec).stem.removeprefix("dict_")
    if pair.count("-") != 1:
        raise InputError(f"cannot read a SRC-TGT language pair from {pair!r} (dictionary {spec})")
    src, tgt = pair.split("-")
    return src, tgt, Path(path)


def gen_codemix(cfg: dict) -> None:
    run = Run("gen-codemix", cfg)
    corpus = cm.load_parallel(run.input(cfg["parallel"]))
    dictionaries = []
    for spec in cfg["dictionary"]:
        src, tgt, path = _parse_dict_spec(spec)
        dictionaries.append(
            cm.build_dictionary(run.input(path), src, tgt, strict=not cfg["dict_first_wins"])
        )
    lexicon: frozenset[str] = frozenset()
    if cfg["script_mode"] == "longest-match":
        if not cfg.get("seg_lexicon"):
            raise InputError("--script-mode longest-match needs --seg-lexicon")
        lexicon = frozenset(w for words in read_lexicon_tsv(run.input(cfg["seg_lexicon"])).values() for w in words)
    ratios = cfg["ratio"]
    for r in ratios:
        if not 0 <= r <= 1:
            raise InputError(f"ratio {r} outside [0, 1]")
    options = cm.MixOptions(cfg["script_mode"], lexicon, cfg["denominator"])
    result = cm.generate_corpus(corpus, dictionaries, ratios, cfg["seed"], options, threads=cfg["threads"])
    for rec in result.records:
        if len(rec.replaced) != cm.replacement_count(
            rec.ratio_requested, rec.n_tokens if options.denominator == "all" else rec.n_eligible
        ):
            raise InvariantError(f"{rec.id}: replacement count does not match the ratio")
    write_jsonl(run.path("codemix.jsonl"), (r.to_dict() for r in result.records))
    write_jsonl(run.path("baselines.jsonl"), (r.to_dict() for r in result.baselines))
    write_json(run.path("summary.json"), result.summary)
    run.finish({"codemix_records": len(result.records), "skipped": result.summary["skipped"]})


# --- shared loaders --------------------------------------------------------------


def _model_and_vocab(run: Run, cfg: dict):
    vocab = Vocab.load(run.input(cfg["vocab"]))
    model = load_checkpoint(run.input(cfg["checkpoint"]))
    if model.config.vocab_size != len(vocab):
        raise InputError(
            f"vocabulary mismatch: checkpoint vocab_size={model.config.vocab_size}, "
            f"vocab.json has {len(vocab)} pieces"
        )
    return model, vocab


def _model_tag(cfg: dict) -> str:
    return cfg.get("model_tag") or Path(cfg["checkpoint"]).stem


def _load_mix_records(path: Path) -> list[dict]:
    rows = []
    for lineno, obj in read_jsonl(path):
        if not isinstance(obj, dict) or not {"rendered", "base_lang", "mix_lang", "ratio_requested"} <= set(obj):
            raise InputError(f"{path}:{lineno}: not a code-mix record")
        rows.append(obj)
    return rows


def _encode_texts(rows: Iterable[dict], vocab: Vocab, max_len: int) -> list[list[int]]:
    out = []
    for r in rows:
        ids = vocab.encode(r["rendered"], bos=True)
        if len(ids) > max_len:
            raise InputError(f"record {r.get('id')}: {len(ids)} tokens exceed max_seq_len={max_len}")
        if len(ids) < 2:
            raise InputError(f"record {r.get('id')}: empty text")
        out.append(ids)
    return out


def _ratio_label(r: float) -> str:
    return f"{r:.2f}"


def _grouped_texts(run: Run, cfg: dict, vocab: Vocab, max_len: int):
    mixed = _load_mix_records(run.input(cfg["codemix"]))
    base_rows = _load_mix_records(run.input(cfg["baselines"])) if cfg.get("baselines") else []
    by_tag: dict[str, list[dict]] = defaultdict(list)
    meta: dict[str, dict] = {}
    for r in mixed:
        tag = f"{r['base_lang']}-{r['mix_lang']}@{_ratio_label(r['ratio_requested'])}"
        by_tag[tag].append(r)
        meta[tag] = {"base": r["base_lang"], "mix": r["mix_lang"], "ratio": r["ratio_requested"], "baseline": False}
    for r in base_rows:
        tag = r["base_lang"]
        by_tag[tag].append(r)
        meta[tag] = {"base": r["base_lang"], "mix": None, "ratio": 0.0, "baseline": True}
    tags = sorted(by_tag)
    texts = {t: _encode_texts(by_tag[t], vocab, max_len) for t in tags}
    return tags, texts, meta


# --- lens ------------------------------------------------------------------------


def lens_cmd(cfg: dict) -> None:
    run = Run("lens", cfg)
    model, vocab = _model_and_vocab(run, cfg)
    synonyms = SynonymTable.load(run.input(cfg["synonyms"]))
    for concept in synonyms.concepts():
        for lang, forms in synonyms[concept].items():
            for form in forms:
                if form not in vocab:
                    raise InputError(
                        f"vocabulary mismatch: synonym {form!r} (concept {concept}, {lang}) "
                        "is not a vocabulary piece of this checkpoint"
                    )
    lexicons = (
        read_lexicon_tsv(run.input(cfg["lexicon"])) if cfg.get("lexicon")
        else {lang: [synonyms[c][lang][0] for c in synonyms.concepts()] for lang in synonyms.languages}
    )
    tasks = []
    for lineno, obj in read_jsonl(run.input(cfg["tasks"])):
        try:
            task = PromptTask(obj["src_lang"], obj["tgt_lang"], int(obj["concept"]))
            tokens = build_prompt(task, [int(s) for s in obj["shots"]], lexicons, vocab)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise InputError(f"{cfg['tasks']}:{lineno}: {exc}") from exc
            raise InputError(f"{cfg['tasks']}:{lineno}: malformed task ({exc})") from exc
        if len(tokens) > model.config.max_seq_len:
            raise InputError(f"{cfg['tasks']}:{lineno}: prompt longer than max_seq_len")
        tasks.append(lens_mod.LensTask(obj.get("id", task.task_id), task.src_lang, task.tgt_lang,
                                       task.query_concept, tuple(tokens)))
    if not tasks:
        raise InputError("no lens tasks")
    threshold = cfg["threshold"]
    curves = lens_mod.run_tasks(model, tasks, synonyms, vocab, threshold, threads=cfg["threads"])
    report = lens_mod.build_report(curves, threshold, _model_tag(cfg))
    write_csv(run.path("curves.csv"), ["task_id", "language", "layer", "prob_raw", "prob_thresholded"],
              lens_mod.curve_rows(curves))
    write_csv(
        run.path("auc_table.csv"),
        ["model", "task_id", "src_lang", "tgt_lang", "language", "auc", "auc_thresholded"],
        ([r[k] for k in ("model", "task_id", "src_lang", "tgt_lang", "language", "auc", "auc_thresholded")]
         for r in report.auc),
    )
    write_json(run.path("lens_report.json"), report.to_dict())
    wins = sum(c.raw[c.tgt_lang][-1] > c.raw[c.src_lang][-1] for c in curves)
    run.finish({"tasks": len(curves), "final_layer_target_wins": int(wins)})


# --- neuron-freq -----------------------------------------------------------------


def neuron_freq(cfg: dict) -> None:
    run = Run("neuron-freq", cfg)
    model, vocab = _model_and_vocab(run, cfg)
    tags, texts, meta = _grouped_texts(run, cfg, vocab, model.config.max_seq_len)
    if len(tags) < 2:
        raise InputError("neuron-freq needs at least two tagged corpora")
    tables = [
        nr.count_activations(model, texts[t], t, cfg["fire_on"], threads=cfg["threads"], content_from=1)
        for t in tags
    ]
    raw = [nr.select_specialized(tb, cfg["k_mass"], cfg["scope"]) for tb in tables]
    selections, removed = nr.exclude_universal(raw)
    L = model.config.n_layers

    def sel_rows():
        for tb, s in zip(tables, selections):
            for layer in range(L):
                chosen = s.selected[layer]
                for i, c in enumerate(tb.counts[layer]):
                    yield (tb.tag, layer, i, int(c), int(i in chosen))

    write_csv(run.path("selection.csv"), ["tag", "layer", "neuron", "count", "selected"], sel_rows())

    def write_matrix(name: str, m: nr.IoUMatrix) -> None:
        write_csv(run.path(name), ["tag", *m.tags],
                  ([t, *[float(v) for v in row]] for t, row in zip(m.tags, m.values)))

    write_matrix("iou_global.csv", nr.iou_matrix(selections))
    per_layer = [nr.iou_matrix(selections, layer) for layer in range(L)]
    for layer, m in enumerate(per_layer):
        write_matrix(f"iou_layer_{layer:02d}.csv", m)
        if not np.allclose(m.values, m.values.T):
            raise InvariantError("IoU matrix is not symmetric")

    model_tag = _model_tag(cfg)
    mixed = [t for t in tags if not meta[t]["baseline"]]
    long_rows = []
    for layer, m in enumerate(per_layer):
        for i, a in enumerate(m.tags):
            for j in range(i + 1, len(m.tags)):
                b = m.tags[j]
                if a in mixed and b in mixed and meta[a]["base"] == meta[b]["base"]:
                    long_rows.append((model_tag, meta[a]["base"], layer, a, b, float(m.values[i, j])))
    write_csv(run.path("iou_long.csv"), ["model", "base_group", "layer", "tag_a", "tag_b", "iou"], long_rows)
    write_json(run.path("neuron_freq_report.json"), {
        "k_mass": cfg["k_mass"],
        "scope": cfg["scope"],
        "tags": [
            {"tag": tb.tag, "tokens": tb.tokens, "texts": len(texts[tb.tag]),
             "selected": [len(s.selected[layer]) for layer in range(L)],
             "empty_layers": s.empty_layers}
            for tb, s in zip(tables, selections)
        ],
        "universal_removed": [sorted(r) for r in removed],
    })
    run.finish({"tags": len(tags)})


# --- neuron-ap -------------------------------------------------------------------


def neuron_ap(cfg: dict) -> None:
    import warnings

    run = Run("neuron-ap", cfg)
    model, vocab = _model_and_vocab(run, cfg)
    tags, texts, meta = _grouped_texts(run, cfg, vocab, model.config.max_seq_len)
    pairs: dict[str, list[list[int]]] = defaultdict(list)
    baselines: list[list[int]] = []
    for t in tags:
        if meta[t]["baseline"]:
            baselines.extend(texts[t])
        else:
            pairs[f"{meta[t]['base']}-{meta[t]['mix']}"].extend(texts[t])
    names = sorted(pairs)
    if not names:
        raise InputError("no code-mixed pairs in input")
    all_texts = [x for n in names for x in pairs[n]] + baselines
    profile = nr.strength_profile(model, all_texts, threads=cfg["threads"], content_from=1)
    offsets = np.cumsum([0] + [len(pairs[n]) for n in names])
    n_base = len(baselines)
    classifications = []
    for idx, name in enumerate(names):
        pos = np.arange(offsets[idx], offsets[idx + 1])
        neg = np.concatenate([np.arange(0, offsets[idx]), np.arange(offsets[idx + 1], len(all_texts))])
        if len(neg) == 0:
            raise InputError(f"pair {name}: no negative texts (need another pair or baselines)")
        rows = np.concatenate([pos, neg])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            c = nr.classify_neurons(
                model, pairs[name], [all_texts[i] for i in neg], name, cfg["k_count"],
                profile=profile[rows],
            )
        if c.shrunk:
            log.warning("pair %s: 3k=%d exceeds %d neurons; k shrunk to %d",
                        name, 3 * c.k_requested, model.config.n_neurons, c.k)
        classifications.append(c)
    L = model.config.n_layers

    def cls_rows():
        for c in classifications:
            lookup = c.class_of()
            for layer in range(L):
                for i in range(model.config.d_ff):
                    yield (c.pair, layer, i, float(c.ap[layer, i]), lookup.get((layer, i), "none"))

    write_csv(run.path("classification.csv"), ["pair", "layer", "neuron", "ap", "class"], cls_rows())
    dist_rows = []
    for c in classifications:
        hist = nr.layer_distribution(c, L)
        for cls in ("top", "medium", "bottom"):
            if int(hist[cls].sum()) != len(c.sets()[cls]):
                raise InvariantError("layer histogram does not sum to the class size")
            for layer in range(L):
                dist_rows.append((c.pair, layer, cls, int(hist[cls][layer])))
    write_csv(run.path("distribution.csv"), ["pair", "layer", "class", "count"], dist_rows)
    ov = nr.overlap_counts(classifications)
    write_csv(run.path("overlap.csv"), ["pair", *names],
              ([n, *[int(v) for v in row]] for n, row in zip(names, ov)))
    write_json(run.path("neuron_ap_report.json"), {
        "k_requested": cfg["k_count"],
        "k": classifications[0].k,
        "shrunk": classifications[0].shrunk,
        "n_neurons": model.config.n_neurons,
        "baseline_texts": n_base,
        "pairs": [
            {"pair": c.pair, "positives": len(pairs[c.pair]), "tie_neurons": c.tie_neurons,
             "mean_ap": float(c.ap.mean())}
            for c in classifications
        ],
    })
    run.finish({"pairs": names, "k": classifications[0].k, "shrunk": classifications[0].shrunk})


# --- stats -----------------------------------------------------------------------


def stats_cmd(cfg: dict) -> None:
    run = Run("stats", cfg)
    if not cfg.get("auc_table") and not cfg.get("iou_table"):
        raise InputError("stats needs --auc-table and/or --iou-table")
    summary: dict[str, Any] = {}
    if cfg.get("auc_table"):
        rows = read_csv(run.input(cfg["auc_table"]))
        alternative = cfg["alternative"] or "two-sided"
        results = [st.grouped_auc_tests(rows, g, cfg["alpha"], alternative) for g in st.grouped.GROUPINGS]
        write_json(run.path("stats_auc.json"), [r.to_dict() for r in results])
        write_csv(
            run.path("auc_tests.csv"),
            ["grouping", "model", "language", "group_x", "group_y", "statistic", "p_value", "method",
             "corrected_alpha", "significant"],
            ((c.grouping, c.model or "", c.language, c.group_x, c.group_y, c.result.statistic,
              c.result.p_value, c.result.method, c.result.alpha, int(c.result.significant))
             for r in results for c in r.comparisons),
        )
        summary["auc_significant"] = {r.grouping: r.n_significant for r in results}
    if cfg.get("iou_table"):
        rows = read_csv(run.input(cfg["iou_table"]))
        reports = st.phase_analysis(
            rows, cfg.get("group_a"), cfg.get("group_b"), cfg["alpha"],
            boundaries=cfg["phase_boundaries"], alternative=cfg["alternative"] or "greater",
        )
        write_json(run.path("stats_phase.json"), [r.to_dict() for r in reports])
        write_csv(
            run.path("phase_markers.csv"),
            ["model", "layer", "mean_diff", "cohens_d", "statistic", "p_value", "method",
             "corrected_alpha", "significant", "marker"],
            ((r.model, lc.layer, lc.mean_diff, "" if lc.cohens_d is None else lc.cohens_d,
              lc.result.statistic, lc.result.p_value, lc.result.method, lc.result.alpha,
              int(lc.result.significant), "filled" if lc.result.significant else "hollow")
             for r in reports for lc in r.layers),
        )
        summary["phase_significant"] = {r.model: r.n_significant for r in reports}
    run.finish(summary)


# --- bleu ------------------------------------------------------------------------


def _lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


def bleu_cmd(cfg: dict) -> None:
    run = Run("bleu", cfg)
    hyps = _lines(run.input(cfg["hyp"]))
    refs = _lines(run.input(cfg["ref"]))
    if len(hyps) != len(refs):
        raise InputError(f"{len(hyps)} hypothesis lines but {len(refs)} reference lines")
    score = st.corpus_bleu(
        [st.bleu_tokenize(h) for h in hyps], [st.bleu_tokenize(r) for r in refs],
        cfg["max_n"], cfg["smoothing"],
    )
    write_json(run.path("bleu.json"), {"bleu": score, "sentences": len(hyps),
                                       "max_n": cfg["max_n"], "smoothing": cfg["smoothing"]})
    run.finish({"bleu": score})
