"""Config-driven pipeline CLI.

Subcommands: ingest, stats, pairgen, train, retrieve, prompt, run, score,
ablate-kshot, ablate-hw, histograms. Options come from a TOML config file
plus flag overrides; flags win. Every stage writes its artifacts plus a
manifest with input/output checksums and the seed, so a re-run with identical
inputs is byte-identical (timing metadata excluded).

Exit codes: 0 ok, 2 config error, 3 data error, 4 backend error, 5 internal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .aligner import (
    AlignmentHead,
    TrainConfig,
    load_head_file,
    save_head_file,
    train,
)
from .corpus import CorpusSplit, corpus_stats, parse_corpus, serialize_corpus
from .embedstore import EmbeddingStore, load_store_file
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    TempalignError,
)
from .evalkit import (
    ExampleScore,
    Histogram,
    aggregate_scores,
    embedding_shift_histograms,
    f1_em,
    kl_divergence,
    mann_whitney_one_tailed,
    prioritization_factor,
    write_histogram_csv,
    write_per_example,
)
from .llmgate import (
    CompletionRequest,
    LiveBackend,
    ReplayBackend,
    ReplayCassette,
    complete_many,
)
from .manifest import (
    build_manifest,
    check_inputs_unchanged,
    load_manifest,
    write_manifest,
)
from .pairgen import (
    build_pairs,
    load_training_set,
    save_training_set,
    split_train_val,
)
from .promptkit import PromptTemplate, assemble_prompt
from .retriever import STRATEGIES, ContextExample, ContextSet, select_examples

log = logging.getLogger("tempalign")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5

DEFAULT_TOP_P = (1.0, 0.8, 0.6)


@dataclass(frozen=True)
class RunConfig:
    # paths
    low_corpus: Optional[str] = None
    rich_corpus: Optional[str] = None
    low_store: Optional[str] = None
    rich_store: Optional[str] = None
    translated_store: Optional[str] = None
    id_map: Optional[str] = None
    head: Optional[str] = None
    cassette: Optional[str] = None
    template: Optional[str] = None
    pairs: Optional[str] = None
    out_dir: str = "out"
    # selection / run
    strategy: str = "aligned"
    k: int = 3
    seed: int = 0
    top_p: tuple[float, ...] = DEFAULT_TOP_P
    language: str = "en"
    level: str = "L1"
    split: str = "test"
    rich_language: str = "en"
    rich_split: str = "train"
    # pair generation
    h: int = 30
    w: int = 10
    # training
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    scale: float = 20.0
    optimizer: str = "adam"
    val_fraction: float = 0.10
    # backend
    base_url: Optional[str] = None
    model: str = "default"
    max_tokens: int = 64
    temperature: float = 0.0
    timeout_s: float = 60.0
    # behavior
    strict: bool = False
    figures: bool = True

    def path(self, name: str, required: bool = True) -> Optional[Path]:
        value = getattr(self, name)
        if value is None:
            if required:
                raise ConfigError(f"config path {name!r} is not set")
            return None
        p = Path(value)
        if not p.exists():
            raise DataError(f"{name} file not found: {p}")
        return p

    def out_path(self, *parts: str) -> Path:
        out = Path(self.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return out.joinpath(*parts)


_CONFIG_SECTIONS = {
    "paths": (
        "low_corpus", "rich_corpus", "low_store", "rich_store",
        "translated_store", "id_map", "head", "cassette", "template",
        "pairs", "out_dir",
    ),
    "run": (
        "strategy", "k", "seed", "top_p", "language", "level", "split",
        "rich_language", "rich_split",
    ),
    "pairgen": ("h", "w"),
    "train": (
        "learning_rate", "epochs", "batch_size", "scale", "optimizer",
        "val_fraction",
    ),
    "backend": ("base_url", "model", "max_tokens", "temperature", "timeout_s"),
}


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    values: dict = {}
    for section, keys in _CONFIG_SECTIONS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise ConfigError(f"config section [{section}] must be a table")
        for key, value in body.items():
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in config section [{section}]")
            values[key] = tuple(value) if key == "top_p" else value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates: dict = {}
    for name in RunConfig.__dataclass_fields__:
        if hasattr(args, name) and getattr(args, name) is not None:
            updates[name] = getattr(args, name)
    if getattr(args, "top_p", None) is not None:
        updates["top_p"] = tuple(args.top_p)
    if updates:
        cfg = replace(cfg, **updates)
    if cfg.k < 1:
        raise ConfigError(f"k must be >= 1, got {cfg.k}")
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {cfg.strategy!r}; choose from {STRATEGIES}")
    if not cfg.top_p or not all(0.0 < p <= 1.0 for p in cfg.top_p):
        raise ConfigError(f"top_p values must be in (0, 1], got {cfg.top_p}")
    return cfg


# ---------------------------------------------------------------------------
# Shared stage helpers


def _write_lines(path: Path, rows: Sequence[dict]) -> None:
    with open(path, "wb") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True).encode("utf-8"))
            fh.write(b"\n")


def _read_lines(path: Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path} line {lineno}: malformed JSON ({exc.msg})") from exc
    return rows


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def _load_corpus(path: Path, language: str, level: str, split: str) -> CorpusSplit:
    with open(path, "rb") as fh:
        return parse_corpus(fh, language=language, level=level, split=split)


def _load_id_map(path: Path) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for row in _read_lines(path):
        if "from" not in row or "to" not in row:
            raise DataError(f"id map {path}: rows need 'from' and 'to' fields")
        if row["from"] in mapping:
            raise DataError(f"id map {path}: duplicate source id {row['from']!r}")
        mapping[row["from"]] = row["to"]
    if not mapping:
        raise DataError(f"id map {path} is empty")
    return mapping


def _finish_stage(
    cfg: RunConfig,
    stage: str,
    params: dict,
    inputs: dict,
    outputs: dict,
    timing: Optional[dict] = None,
) -> None:
    manifest_path = cfg.out_path(f"{stage}.manifest.json")
    if cfg.strict and manifest_path.exists():
        check_inputs_unchanged(load_manifest(manifest_path), stage)
    manifest = build_manifest(stage, params, inputs, outputs, timing)
    write_manifest(manifest, manifest_path)
    log.info("%s: wrote %s", stage, ", ".join(str(p) for p in outputs.values()))


# ---------------------------------------------------------------------------
# Stage implementations


def cmd_ingest(cfg: RunConfig, args: argparse.Namespace) -> None:
    source = Path(args.input)
    if not source.exists():
        raise DataError(f"input corpus not found: {source}")
    split = _load_corpus(source, cfg.language, cfg.level, cfg.split)
    out = cfg.out_path("corpus.jsonl")
    out.write_bytes(serialize_corpus(split))
    _finish_stage(
        cfg, "ingest",
        {"language": cfg.language, "level": cfg.level, "split": cfg.split,
         "records": len(split)},
        {"corpus": source}, {"corpus": out},
    )
    print(f"ingest: {len(split)} records -> {out}")


def cmd_stats(cfg: RunConfig, args: argparse.Namespace) -> None:
    source = Path(args.input)
    if not source.exists():
        raise DataError(f"input corpus not found: {source}")
    split = _load_corpus(source, cfg.language, cfg.level, cfg.split)
    stats = corpus_stats(split)
    payload = {
        "count": stats.count,
        "level_counts": stats.level_counts,
        "min_year": stats.min_year,
        "max_year": stats.max_year,
    }
    out = cfg.out_path("stats.json")
    _write_json(out, payload)
    _finish_stage(cfg, "stats", {"language": cfg.language, "level": cfg.level},
                  {"corpus": source}, {"stats": out})
    print(json.dumps(payload, sort_keys=True))


def cmd_pairgen(cfg: RunConfig, args: argparse.Namespace) -> None:
    low_corpus = cfg.path("low_corpus")
    low_store_path = cfg.path("low_store")
    translated_path = cfg.path("translated_store")
    id_map_path = cfg.path("id_map")
    low_split = _load_corpus(low_corpus, cfg.language, cfg.level, cfg.split)
    low_store = load_store_file(low_store_path)
    translated_store = load_store_file(translated_path)
    id_map = _load_id_map(id_map_path)
    training_set = build_pairs(
        low_split, low_store, translated_store, id_map, h=cfg.h, w=cfg.w, seed=cfg.seed
    )
    out = cfg.out_path("pairs.jsonl")
    with open(out, "wb") as fh:
        save_training_set(training_set, fh)
    _finish_stage(
        cfg, "pairgen",
        {"h": cfg.h, "w": cfg.w, "seed": cfg.seed, "pairs": len(training_set)},
        {"low_corpus": low_corpus, "low_store": low_store_path,
         "translated_store": translated_path, "id_map": id_map_path},
        {"pairs": out},
    )
    print(f"pairgen: {len(training_set)} pairs -> {out}")


def _pairs_path(cfg: RunConfig) -> Path:
    if cfg.pairs is not None:
        return cfg.path("pairs")
    default = cfg.out_path("pairs.jsonl")
    if not default.exists():
        raise DataError(f"pairs file not found: {default} (run pairgen first or pass --pairs)")
    return default


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> None:
    pairs_path = _pairs_path(cfg)
    low_store_path = cfg.path("low_store")
    rich_store_path = cfg.path("rich_store")
    with open(pairs_path, "rb") as fh:
        training_set = load_training_set(fh)
    low_store = load_store_file(low_store_path)
    rich_store = load_store_file(rich_store_path)
    if not 0.0 < cfg.val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {cfg.val_fraction}")
    train_set, val_set = split_train_val(training_set, cfg.val_fraction, seed=cfg.seed)
    config = TrainConfig(
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        scale=cfg.scale,
        seed=cfg.seed,
        optimizer=cfg.optimizer,
    )
    head0 = AlignmentHead.initial(low_store.dim, seed=cfg.seed)
    head, report = train(head0, train_set, low_store, rich_store, config, val_set)
    head_out = cfg.out_path("head.clhd")
    save_head_file(head, head_out)
    report_out = cfg.out_path("train_report.json")
    _write_json(report_out, {
        "train_losses": list(report.train_losses),
        "val_losses": list(report.val_losses),
        "head_checksum": report.head_checksum,
        "epochs": cfg.epochs,
    })
    _finish_stage(
        cfg, "train",
        {"learning_rate": cfg.learning_rate, "epochs": cfg.epochs,
         "batch_size": cfg.batch_size, "scale": cfg.scale, "seed": cfg.seed,
         "optimizer": cfg.optimizer, "val_fraction": cfg.val_fraction},
        {"pairs": pairs_path, "low_store": low_store_path, "rich_store": rich_store_path},
        {"head": head_out, "train_report": report_out},
        timing={"wall_time_s": report.wall_time_s},
    )
    print(
        f"train: {len(train_set)} pairs, {cfg.epochs} epochs, "
        f"val loss {report.val_losses[0]:.4f} -> {report.val_losses[-1]:.4f}, "
        f"head -> {head_out}"
    )


def _strategy_options(cfg: RunConfig) -> dict:
    options: dict = {"seed": cfg.seed}
    if cfg.strategy == "aligned":
        options["head"] = load_head_file(cfg.path("head"))
    if cfg.strategy == "in-language":
        options["translated_store"] = load_store_file(cfg.path("translated_store"))
        options["id_map"] = _load_id_map(cfg.path("id_map"))
    return options


def _select_all(
    cfg: RunConfig,
    low_split: CorpusSplit,
    low_store: EmbeddingStore,
    rich_split: CorpusSplit,
    rich_store: EmbeddingStore,
    k: int,
) -> list[ContextSet]:
    options = _strategy_options(cfg)
    return [
        select_examples(
            rec.id, low_store, rich_split, rich_store, cfg.strategy, k, **options
        )
        for rec in low_split
    ]


def _selection_rows(selections: Sequence[ContextSet]) -> list[dict]:
    return [
        {
            "query_id": sel.query_id,
            "strategy": sel.strategy,
            "k": sel.k,
            "selected": [{"id": ex.id, "score": ex.score} for ex in sel.examples],
        }
        for sel in selections
    ]


def cmd_retrieve(cfg: RunConfig, args: argparse.Namespace) -> None:
    low_corpus = cfg.path("low_corpus")
    rich_corpus = cfg.path("rich_corpus")
    low_store_path = cfg.path("low_store")
    rich_store_path = cfg.path("rich_store")
    low_split = _load_corpus(low_corpus, cfg.language, cfg.level, cfg.split)
    rich_split = _load_corpus(rich_corpus, cfg.rich_language, cfg.level, cfg.rich_split)
    low_store = load_store_file(low_store_path)
    rich_store = load_store_file(rich_store_path)
    selections = _select_all(cfg, low_split, low_store, rich_split, rich_store, cfg.k)
    out = cfg.out_path("selections.jsonl")
    _write_lines(out, _selection_rows(selections))
    inputs = {
        "low_corpus": low_corpus, "rich_corpus": rich_corpus,
        "low_store": low_store_path, "rich_store": rich_store_path,
    }
    _finish_stage(
        cfg, "retrieve",
        {"strategy": cfg.strategy, "k": cfg.k, "seed": cfg.seed},
        inputs, {"selections": out},
    )
    print(f"retrieve: {len(selections)} queries -> {out}")


def _template(cfg: RunConfig) -> PromptTemplate:
    if cfg.template is not None:
        return PromptTemplate.load(cfg.path("template"))
    return PromptTemplate.default(cfg.level, cfg.language)


def _prompts_from_selections(
    cfg: RunConfig,
    selection_rows: Sequence[dict],
    low_split: CorpusSplit,
    rich_split: CorpusSplit,
    template: PromptTemplate,
) -> list[dict]:
    prompts = []
    for row in selection_rows:
        examples = tuple(
            ContextExample(
                id=pick["id"],
                question=rich_split.by_id(pick["id"]).question,
                answer=rich_split.by_id(pick["id"]).answers[0],
                score=pick.get("score"),
            )
            for pick in row["selected"]
        )
        context = ContextSet(
            query_id=row["query_id"], strategy=row["strategy"], k=row["k"],
            examples=examples,
        )
        query = low_split.by_id(row["query_id"])
        assembled = assemble_prompt(context, query.question, template)
        prompts.append({
            "query_id": assembled.query_id,
            "prompt": assembled.text,
            "k": assembled.k,
            "strategy": assembled.strategy,
            "template_id": assembled.template_id,
        })
    return prompts


def cmd_prompt(cfg: RunConfig, args: argparse.Namespace) -> None:
    selections_path = Path(args.selections) if args.selections else cfg.out_path("selections.jsonl")
    if not selections_path.exists():
        raise DataError(f"selections file not found: {selections_path}")
    low_corpus = cfg.path("low_corpus")
    rich_corpus = cfg.path("rich_corpus")
    low_split = _load_corpus(low_corpus, cfg.language, cfg.level, cfg.split)
    rich_split = _load_corpus(rich_corpus, cfg.rich_language, cfg.level, cfg.rich_split)
    template = _template(cfg)
    rows = _prompts_from_selections(
        cfg, _read_lines(selections_path), low_split, rich_split, template
    )
    out = cfg.out_path("prompts.jsonl")
    _write_lines(out, rows)
    _finish_stage(
        cfg, "prompt",
        {"template_id": template.template_id},
        {"selections": selections_path, "low_corpus": low_corpus,
         "rich_corpus": rich_corpus},
        {"prompts": out},
    )
    print(f"prompt: {len(rows)} prompts -> {out}")


def _backend(cfg: RunConfig):
    if cfg.cassette is not None:
        cassette = ReplayCassette.load_file(cfg.path("cassette"))
        return ReplayBackend(cassette, strict=True)
    if cfg.base_url:
        return LiveBackend(cfg.base_url, timeout_s=cfg.timeout_s)
    raise ConfigError(
        "run requires either a replay cassette or a live backend base_url; "
        "neither is configured"
    )


def _score_rows(
    cfg: RunConfig, low_split: CorpusSplit, responses: Sequence[dict]
) -> tuple[list[ExampleScore], list[str], list[Sequence[str]]]:
    scores, preds, golds = [], [], []
    for row in responses:
        record = low_split.by_id(row["query_id"])
        score = f1_em(
            row["response"], record.answers, cfg.level, cfg.language,
            query_id=record.id,
        )
        scores.append(score)
        preds.append(row["response"])
        golds.append(record.answers)
    return scores, preds, golds


def _tp_tag(top_p: float) -> str:
    return str(float(top_p))


def cmd_run(cfg: RunConfig, args: argparse.Namespace) -> None:
    backend = _backend(cfg)  # fail before any work if unconfigured
    low_corpus = cfg.path("low_corpus")
    rich_corpus = cfg.path("rich_corpus")
    low_store_path = cfg.path("low_store")
    rich_store_path = cfg.path("rich_store")
    low_split = _load_corpus(low_corpus, cfg.language, cfg.level, cfg.split)
    rich_split = _load_corpus(rich_corpus, cfg.rich_language, cfg.level, cfg.rich_split)
    low_store = load_store_file(low_store_path)
    rich_store = load_store_file(rich_store_path)
    template = _template(cfg)

    selections = _select_all(cfg, low_split, low_store, rich_split, rich_store, cfg.k)
    selection_rows = _selection_rows(selections)
    selections_out = cfg.out_path("selections.jsonl")
    _write_lines(selections_out, selection_rows)

    prompt_rows = _prompts_from_selections(cfg, selection_rows, low_split, rich_split, template)
    prompts_out = cfg.out_path("prompts.jsonl")
    _write_lines(prompts_out, prompt_rows)

    outputs = {"selections": selections_out, "prompts": prompts_out}
    per_top_p: dict[str, dict] = {}
    for top_p in cfg.top_p:
        tag = _tp_tag(top_p)
        requests_seq = [
            CompletionRequest(
                prompt=row["prompt"], model=cfg.model, top_p=top_p,
                max_tokens=cfg.max_tokens, temperature=cfg.temperature,
            )
            for row in prompt_rows
        ]
        responses = complete_many(requests_seq, backend)
        response_rows = [
            {"query_id": row["query_id"], "response": resp, "top_p": top_p}
            for row, resp in zip(prompt_rows, responses)
        ]
        completions_out = cfg.out_path(f"completions_tp{tag}.jsonl")
        _write_lines(completions_out, response_rows)
        outputs[f"completions_tp{tag}"] = completions_out

        scores, preds, golds = _score_rows(cfg, low_split, response_rows)
        per_example_out = cfg.out_path(f"per_example_tp{tag}.jsonl")
        with open(per_example_out, "wb") as fh:
            write_per_example(scores, preds, golds, fh)
        outputs[f"per_example_tp{tag}"] = per_example_out
        per_top_p[tag] = aggregate_scores(scores)
        if cfg.figures:
            from .figures import score_figure

            fig_out = cfg.out_path(f"f1_hist_tp{tag}.png")
            score_figure([s.f1 for s in scores], per_top_p[tag]["mean_em"], fig_out)
            outputs[f"f1_hist_tp{tag}"] = fig_out

    aggregate = {
        "n": per_top_p[_tp_tag(cfg.top_p[0])]["n"],
        "strategy": cfg.strategy,
        "k": cfg.k,
        "per_top_p": per_top_p,
        "mean_f1": float(np.mean([v["mean_f1"] for v in per_top_p.values()])),
        "mean_em": float(np.mean([v["mean_em"] for v in per_top_p.values()])),
    }
    aggregate_out = cfg.out_path("aggregate.json")
    _write_json(aggregate_out, aggregate)
    outputs["aggregate"] = aggregate_out

    _finish_stage(
        cfg, "run",
        {"strategy": cfg.strategy, "k": cfg.k, "seed": cfg.seed,
         "top_p": list(cfg.top_p), "model": cfg.model},
        {"low_corpus": low_corpus, "rich_corpus": rich_corpus,
         "low_store": low_store_path, "rich_store": rich_store_path},
        outputs,
    )
    print(
        f"run: {aggregate['n']} queries x {len(cfg.top_p)} top_p values, "
        f"mean F1 {aggregate['mean_f1']:.4f}, mean EM {aggregate['mean_em']:.4f}"
    )


def cmd_score(cfg: RunConfig, args: argparse.Namespace) -> None:
    predictions_path = Path(args.predictions)
    if not predictions_path.exists():
        raise DataError(f"predictions file not found: {predictions_path}")
    low_corpus = cfg.path("low_corpus")
    low_split = _load_corpus(low_corpus, cfg.language, cfg.level, cfg.split)
    rows = _read_lines(predictions_path)
    for row in rows:
        if "query_id" not in row or "response" not in row:
            raise DataError(f"{predictions_path}: rows need 'query_id' and 'response'")
    scores, preds, golds = _score_rows(cfg, low_split, rows)
    per_example_out = cfg.out_path("per_example.jsonl")
    with open(per_example_out, "wb") as fh:
        write_per_example(scores, preds, golds, fh)
    aggregate = aggregate_scores(scores)

    inputs = {"predictions": predictions_path, "low_corpus": low_corpus}
    if args.baseline:
        baseline_path = Path(args.baseline)
        if not baseline_path.exists():
            raise DataError(f"baseline file not found: {baseline_path}")
        baseline_f1 = [row["f1"] for row in _read_lines(baseline_path)]
        result = mann_whitney_one_tailed([s.f1 for s in scores], baseline_f1)
        aggregate["p_value"] = result.p_value
        aggregate["p_value_method"] = result.method
        inputs["baseline"] = baseline_path
    aggregate_out = cfg.out_path("aggregate.json")
    _write_json(aggregate_out, aggregate)

    outputs = {"per_example": per_example_out, "aggregate": aggregate_out}
    if cfg.figures:
        from .figures import score_figure

        fig_out = cfg.out_path("f1_hist.png")
        score_figure([s.f1 for s in scores], aggregate["mean_em"], fig_out)
        outputs["f1_hist"] = fig_out
    _finish_stage(cfg, "score", {"language": cfg.language, "level": cfg.level},
                  inputs, outputs)
    print(json.dumps(aggregate, sort_keys=True))


def cmd_ablate_kshot(cfg: RunConfig, args: argparse.Namespace) -> None:
    k_values = args.k_values or [1, 2, 3]
    base_out = Path(cfg.out_dir)
    per_k: dict[int, dict] = {}
    report_files = []
    for k in k_values:
        sub_cfg = replace(cfg, k=k, out_dir=str(base_out / f"kshot_k{k}"))
        cmd_run(sub_cfg, args)
        with open(Path(sub_cfg.out_dir) / "aggregate.json", "r", encoding="utf-8") as fh:
            per_k[k] = json.load(fh)
        report_files.append(Path(sub_cfg.out_dir) / "aggregate.json")
    summary = {
        str(k): {"mean_f1": per_k[k]["mean_f1"], "mean_em": per_k[k]["mean_em"]}
        for k in k_values
    }
    summary_out = cfg.out_path("kshot_summary.json")
    _write_json(summary_out, summary)
    outputs = {"summary": summary_out}
    if cfg.figures:
        from .figures import kshot_figure

        fig_out = cfg.out_path("kshot.png")
        kshot_figure(
            {k: {"mean_f1": v["mean_f1"], "mean_em": v["mean_em"]} for k, v in per_k.items()},
            fig_out,
        )
        outputs["figure"] = fig_out
    _finish_stage(cfg, "ablate-kshot", {"k_values": list(k_values)},
                  {f"aggregate_k{k}": p for k, p in zip(k_values, report_files)},
                  outputs)
    print(f"ablate-kshot: {len(k_values)} settings -> {summary_out}")


def cmd_ablate_hw(cfg: RunConfig, args: argparse.Namespace) -> None:
    h_values = args.h_values or [20, 30, 40]
    w_values = args.w_values or [5, 10, 15]
    low_corpus = cfg.path("low_corpus")
    low_store_path = cfg.path("low_store")
    translated_path = cfg.path("translated_store")
    id_map_path = cfg.path("id_map")
    low_split = _load_corpus(low_corpus, cfg.language, cfg.level, cfg.split)
    low_store = load_store_file(low_store_path)
    translated_store = load_store_file(translated_path)
    id_map = _load_id_map(id_map_path)

    # Label distribution of the full sample space: every (low, translated) pair.
    from .pairgen import score_in_language

    all_scores: list[float] = []
    for rec in low_split:
        all_scores.extend(s for _, s in score_in_language(low_store, translated_store, rec.id))
    full_hist = Histogram.from_values(all_scores)

    rows = []
    for h in h_values:
        for w in w_values:
            training_set = build_pairs(
                low_split, low_store, translated_store, id_map, h=h, w=w, seed=cfg.seed
            )
            sub_hist = Histogram.from_values([p.label for p in training_set.pairs])
            rows.append({
                "h": h,
                "w": w,
                "kl_divergence": kl_divergence(sub_hist, full_hist),
                "prioritization_factor": prioritization_factor(h, w),
                "sample_size": len(training_set),
            })
    csv_out = cfg.out_path("hw_grid.csv")
    with open(csv_out, "w", encoding="utf-8") as fh:
        fh.write("h,w,kl_divergence,prioritization_factor,sample_size\n")
        for row in rows:
            fh.write(
                f"{row['h']},{row['w']},{row['kl_divergence']!r},"
                f"{row['prioritization_factor']!r},{row['sample_size']}\n"
            )
    json_out = cfg.out_path("hw_grid.json")
    _write_json(json_out, {"grid": rows})
    outputs = {"csv": csv_out, "json": json_out}
    if cfg.figures:
        from .figures import hw_grid_figure

        fig_out = cfg.out_path("hw_grid.png")
        hw_grid_figure(rows, h_values, w_values, fig_out)
        outputs["figure"] = fig_out
    _finish_stage(
        cfg, "ablate-hw",
        {"h_values": list(h_values), "w_values": list(w_values), "seed": cfg.seed},
        {"low_corpus": low_corpus, "low_store": low_store_path,
         "translated_store": translated_path, "id_map": id_map_path},
        outputs,
    )
    print(f"ablate-hw: {len(rows)} cells -> {csv_out}")


def cmd_histograms(cfg: RunConfig, args: argparse.Namespace) -> None:
    low_store_path = cfg.path("low_store")
    rich_store_path = cfg.path("rich_store")
    id_map_path = cfg.path("id_map")
    head_path = cfg.path("head")
    low_store = load_store_file(low_store_path)
    rich_store = load_store_file(rich_store_path)
    positive_pairs = [(src, dst) for src, dst in _load_id_map(id_map_path).items()]
    head_after = load_head_file(head_path)
    shift = embedding_shift_histograms(
        low_store, rich_store, positive_pairs, head_after, seed=cfg.seed
    )
    outputs = {}
    panels = {
        "positive_before": shift.positive_before,
        "positive_after": shift.positive_after,
        "antagonist_before": shift.antagonist_before,
        "antagonist_after": shift.antagonist_after,
    }
    for name, hist in panels.items():
        out = cfg.out_path(f"shift_{name}.csv")
        with open(out, "w", encoding="utf-8") as fh:
            write_histogram_csv(hist, fh)
        outputs[name] = out
    means_out = cfg.out_path("shift_means.json")
    _write_json(means_out, {name: hist.mean() for name, hist in panels.items()})
    outputs["means"] = means_out
    if cfg.figures:
        from .figures import shift_figure

        fig_out = cfg.out_path("shift.png")
        shift_figure(shift, fig_out)
        outputs["figure"] = fig_out
    _finish_stage(
        cfg, "histograms", {"seed": cfg.seed},
        {"low_store": low_store_path, "rich_store": rich_store_path,
         "id_map": id_map_path, "head": head_path},
        outputs,
    )
    print(f"histograms: 4 panels -> {cfg.out_dir}")


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "pairgen": cmd_pairgen,
    "train": cmd_train,
    "retrieve": cmd_retrieve,
    "prompt": cmd_prompt,
    "run": cmd_run,
    "score": cmd_score,
    "ablate-kshot": cmd_ablate_kshot,
    "ablate-hw": cmd_ablate_hw,
    "histograms": cmd_histograms,
}


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tempalign",
        description="Cross-lingual retrieval alignment pipeline for temporal QA",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    path_names = (
        "low_corpus", "rich_corpus", "low_store", "rich_store",
        "translated_store", "id_map", "head", "cassette", "template", "pairs",
    )

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file; flags override its values")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--language")
        p.add_argument("--level", choices=("L1", "L2", "L3"))
        p.add_argument("--split")
        p.add_argument("--rich-language", dest="rich_language")
        p.add_argument("--rich-split", dest="rich_split")
        p.add_argument("--strict", action="store_const", const=True, default=None,
                       help="verify recorded input checksums before re-running")
        p.add_argument("--no-figures", dest="figures", action="store_const",
                       const=False, default=None, help="skip PNG rendering")
        for name in path_names:
            p.add_argument(f"--{name.replace('_', '-')}", dest=name)

    def add_selection(p: argparse.ArgumentParser) -> None:
        p.add_argument("--strategy", choices=STRATEGIES)
        p.add_argument("--k", type=int)

    def add_backend(p: argparse.ArgumentParser) -> None:
        p.add_argument("--base-url", dest="base_url")
        p.add_argument("--model")
        p.add_argument("--max-tokens", dest="max_tokens", type=int)
        p.add_argument("--temperature", type=float)
        p.add_argument("--top-p", dest="top_p", type=float, action="append",
                       help="repeatable; defaults to 1.0 0.8 0.6")

    p = sub.add_parser("ingest", help="validate a corpus file and write it canonically")
    add_common(p)
    p.add_argument("--input", required=True)

    p = sub.add_parser("stats", help="corpus summary (counts, L1 year range)")
    add_common(p)
    p.add_argument("--input", required=True)

    p = sub.add_parser("pairgen", help="build the scored cross-lingual training set")
    add_common(p)
    p.add_argument("--h", dest="h", type=int)
    p.add_argument("--w", dest="w", type=int)

    p = sub.add_parser("train", help="train the alignment head")
    add_common(p)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--val-fraction", dest="val_fraction", type=float)

    p = sub.add_parser("retrieve", help="select in-context examples per query")
    add_common(p)
    add_selection(p)

    p = sub.add_parser("prompt", help="assemble prompts from a selection dump")
    add_common(p)
    p.add_argument("--selections", help="selection dump (default <out>/selections.jsonl)")

    p = sub.add_parser("run", help="retrieve, prompt, complete, and score per top_p")
    add_common(p)
    add_selection(p)
    add_backend(p)

    p = sub.add_parser("score", help="score a predictions file against gold answers")
    add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--baseline", help="per-example file to test against (one-tailed U)")

    p = sub.add_parser("ablate-kshot", help="run the pipeline for several K values")
    add_common(p)
    add_selection(p)
    add_backend(p)
    p.add_argument("--k-values", dest="k_values", type=_csv_ints,
                   help="comma-separated, default 1,2,3")

    p = sub.add_parser("ablate-hw", help="KL/prioritization/sample-size grid over h and w")
    add_common(p)
    p.add_argument("--h-values", dest="h_values", type=_csv_ints,
                   help="comma-separated, default 20,30,40")
    p.add_argument("--w-values", dest="w_values", type=_csv_ints,
                   help="comma-separated, default 5,10,15")

    p = sub.add_parser("histograms", help="embedding-shift histograms pre/post training")
    add_common(p)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        COMMANDS[args.command](cfg, args)
        return EXIT_OK
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except BackendError as exc:
        log.error("backend error: %s", exc)
        return EXIT_BACKEND
    except TempalignError as exc:
        log.error("internal error: %s", exc)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - safety net
        log.exception("unexpected error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
