"""Experiment runner: one JSON config in, one persisted run directory out.

Each subcommand reads an experiment config, executes, and leaves behind
`<output_dir>/<run_id>/` containing:

    run.json      run id, config snapshot + digest, summary, artifact index
    steps.jsonl   per-step metric lines, appended in execution order
    ...           subcommand-specific artifacts (CSV/JSONL tables)

The run id is the first 12 hex digits of sha256 over the subcommand name and
the canonical config snapshot. `output_dir` is excluded from the digest so
the same experiment keeps its identity wherever its artifacts land. Given the
snapshot and its seed, re-execution reproduces every metric line byte for
byte; wall-clock duration lives only in run.json.

Per-example failures inside a run are recorded and skipped, not fatal.
Malformed configs and missing files abort before any model work.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import math
import os
import shutil
import sys
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .analysis import (ProjectionConfig, attention_to_e, default_projection_config,
                       layer_heatmap, mean_attention_over_heads, save_heatmap_csv,
                       save_projection_csv, tsne_project)
from .datagen import (GRAMMAR_CLASSES, AugmentConfig, CorpusRecord, build_vocabulary,
                      bundled_lexicon, generate_sentence, load_bundled_grammar,
                      load_corpus_jsonl, load_paraphrases, load_vocabulary,
                      save_corpus_jsonl, save_vocabulary, tokenize, typo_augment)
from .errors import ConfigurationError, NumericError, PrototokError, ValidationError
from .model import ModelConfig, forward, init_random_weights, load_weights
from .noise import DEFAULT_ALPHAS, NOISE_KINDS, noise_sweep, save_sweep_csv
from .prototoken import (OptimizerConfig, ProtoTokenPair, StoppingCriteria,
                         TargetSequence, assemble_input, optimize_reconstruction)
from .regularizers import RegularizerConfig, optimize_batch, save_batch_jsonl
from .teacher import TeacherSource, teacher_embedding

SCHEMA_VERSION = 1

_SECTION_KEYS = {
    "model": {"hidden_size", "num_layers", "num_heads", "mlp_hidden", "vocab_size",
              "max_positions", "norm_epsilon", "seed", "use_positions", "weights_path",
              "attn_gain", "mlp_gain", "final_gain"},
    "optimizer": {"learning_rate", "beta1", "beta2", "weight_decay", "epsilon"},
    "stopping": {"accuracy_threshold", "max_iterations"},
    "regularizer": {"lambda_anchor", "lambda_rel", "rel_kind", "huber_delta",
                    "shared_m", "batch_size", "init_from_teacher"},
    "teacher": {"mode", "path", "seed", "projection_seed"},
    "corpus": {"path", "vocab_path", "max_records"},
    "noise": {"alphas", "kinds", "trials", "record_index", "overrides"},
    "attention": {"layers", "max_records", "pairs_path"},
    "projection": {"pairs_path", "perplexity", "iterations", "learning_rate",
                   "momentum", "early_exaggeration", "exaggeration_iters", "include_m"},
    "datagen": {"classes", "sentences_per_class", "typo_variants", "paraphrase_path",
                "vocab_max_size"},
}
_TOP_KEYS = {"schema_version", "seed", "output_dir"} | set(_SECTION_KEYS)


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description plus its canonical snapshot."""

    snapshot: dict
    seed: int
    output_dir: str
    model: Optional[ModelConfig]
    weights_path: Optional[str]
    init_gains: dict
    optimizer: OptimizerConfig
    stopping: StoppingCriteria
    regularizer: RegularizerConfig
    init_from_teacher: bool
    teacher_mode: str
    teacher_path: Optional[str]
    teacher_seed: int
    teacher_projection_seed: int
    corpus_path: Optional[str]
    vocab_path: Optional[str]
    max_records: Optional[int]
    noise_alphas: tuple
    noise_kinds: tuple
    noise_trials: int
    noise_record_index: int
    noise_overrides: dict
    attention_layers: tuple
    attention_max_records: int
    attention_pairs_path: Optional[str]
    projection_pairs_path: Optional[str]
    projection_settings: dict
    projection_include_m: bool
    datagen_classes: tuple
    datagen_sentences_per_class: int
    datagen_typo_variants: int
    datagen_paraphrase_path: Optional[str]
    datagen_vocab_max_size: Optional[int]

    def teacher_source(self, dimension: int) -> TeacherSource:
        return TeacherSource(mode=self.teacher_mode, dimension=dimension,
                             path=self.teacher_path, seed=self.teacher_seed,
                             projection_seed=self.teacher_projection_seed)


def _section(raw: dict, name: str) -> dict:
    body = raw.get(name, {})
    if not isinstance(body, dict):
        raise ConfigurationError(f"config section {name!r} must be an object")
    unknown = set(body) - _SECTION_KEYS[name]
    if unknown:
        raise ConfigurationError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    return body


def _require_file(path, what: str):
    if path is None:
        return None
    if not os.path.exists(path):
        raise ConfigurationError(f"{what} does not exist: {path}")
    return str(path)


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("experiment config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(
            f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    if "seed" not in raw:
        raise ConfigurationError("config must set an explicit seed")
    seed = raw["seed"]
    if not isinstance(seed, int):
        raise ConfigurationError(f"seed must be an integer, got {seed!r}")

    model_body = _section(raw, "model")
    weights_path = _require_file(model_body.get("weights_path"), "model weights file")
    gain_keys = ("attn_gain", "mlp_gain", "final_gain")
    init_gains = {k: model_body[k] for k in gain_keys if k in model_body}
    if init_gains and weights_path is not None:
        raise ConfigurationError("init gains apply to random init only, "
                                 "not to a weights_path model")
    model = None
    dims = {k: v for k, v in model_body.items()
            if k != "weights_path" and k not in gain_keys}
    if dims:
        model = ModelConfig(**dims)
    if model is None and weights_path is None and "model" in raw:
        raise ConfigurationError("model section needs dimensions or a weights_path")

    optimizer = OptimizerConfig(**_section(raw, "optimizer"))
    stopping = StoppingCriteria(**_section(raw, "stopping"))
    reg_body = dict(_section(raw, "regularizer"))
    init_from_teacher = bool(reg_body.pop("init_from_teacher", False))
    regularizer = RegularizerConfig(**reg_body)

    teacher_body = _section(raw, "teacher")
    teacher_mode = teacher_body.get("mode", "synthetic")
    teacher_path = teacher_body.get("path")
    if teacher_mode == "file":
        teacher_path = _require_file(teacher_path, "teacher file")

    corpus_body = _section(raw, "corpus")
    corpus_path = _require_file(corpus_body.get("path"), "corpus file")
    vocab_path = _require_file(corpus_body.get("vocab_path"), "vocabulary file")
    max_records = corpus_body.get("max_records")
    if max_records is not None and max_records < 1:
        raise ConfigurationError(f"corpus.max_records must be >= 1, got {max_records}")

    noise_body = _section(raw, "noise")
    noise_trials = noise_body.get("trials", 10)
    noise_record_index = noise_body.get("record_index", 0)
    if noise_record_index < 0:
        raise ConfigurationError(f"noise.record_index must be >= 0, got {noise_record_index}")
    noise_kinds = tuple(noise_body.get("kinds", NOISE_KINDS))
    for kind in noise_kinds:
        if kind not in NOISE_KINDS:
            raise ConfigurationError(f"unknown noise kind {kind!r}")

    attention_body = _section(raw, "attention")
    attention_layers = tuple(attention_body.get("layers", (0,)))
    attention_max_records = attention_body.get("max_records", 4)
    if attention_max_records < 1:
        raise ConfigurationError("attention.max_records must be >= 1")
    attention_pairs_path = _require_file(attention_body.get("pairs_path"),
                                         "attention pairs file")

    projection_body = _section(raw, "projection")
    projection_pairs_path = _require_file(projection_body.get("pairs_path"),
                                          "projection pairs file")
    projection_settings = {k: projection_body[k]
                           for k in ("perplexity", "iterations", "learning_rate",
                                     "momentum", "early_exaggeration",
                                     "exaggeration_iters")
                           if k in projection_body}

    datagen_body = _section(raw, "datagen")
    datagen_classes = tuple(datagen_body.get("classes", GRAMMAR_CLASSES))
    for klass in datagen_classes:
        if klass not in GRAMMAR_CLASSES:
            raise ConfigurationError(f"unknown sentence class {klass!r}")
    datagen_sentences = datagen_body.get("sentences_per_class", 8)
    if datagen_sentences < 1:
        raise ConfigurationError("datagen.sentences_per_class must be >= 1")
    datagen_typo = datagen_body.get("typo_variants", 0)
    if datagen_typo < 0:
        raise ConfigurationError("datagen.typo_variants must be >= 0")
    datagen_paraphrase = _require_file(datagen_body.get("paraphrase_path"),
                                       "paraphrase file")

    return ExperimentConfig(
        snapshot=raw,
        seed=seed,
        output_dir=str(raw.get("output_dir", "runs")),
        model=model,
        weights_path=weights_path,
        init_gains=init_gains,
        optimizer=optimizer,
        stopping=stopping,
        regularizer=regularizer,
        init_from_teacher=init_from_teacher,
        teacher_mode=teacher_mode,
        teacher_path=teacher_path,
        teacher_seed=teacher_body.get("seed", 0),
        teacher_projection_seed=teacher_body.get("projection_seed", 0),
        corpus_path=corpus_path,
        vocab_path=vocab_path,
        max_records=max_records,
        noise_alphas=tuple(noise_body.get("alphas", DEFAULT_ALPHAS)),
        noise_kinds=noise_kinds,
        noise_trials=noise_trials,
        noise_record_index=noise_record_index,
        noise_overrides=dict(noise_body.get("overrides", {})),
        attention_layers=attention_layers,
        attention_max_records=attention_max_records,
        attention_pairs_path=attention_pairs_path,
        projection_pairs_path=projection_pairs_path,
        projection_settings=projection_settings,
        projection_include_m=bool(projection_body.get("include_m", True)),
        datagen_classes=datagen_classes,
        datagen_sentences_per_class=datagen_sentences,
        datagen_typo_variants=datagen_typo,
        datagen_paraphrase_path=datagen_paraphrase,
        datagen_vocab_max_size=datagen_body.get("vocab_max_size"),
    )


def load_experiment_config(path, seed: Optional[int] = None,
                           output_dir: Optional[str] = None) -> ExperimentConfig:
    """Parse a config file, applying CLI overrides before snapshotting."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    return parse_experiment_config(raw)


def save_experiment_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.snapshot, fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_digest(snapshot: dict) -> str:
    """sha256 over the canonical snapshot, ignoring where artifacts land."""
    body = {k: v for k, v in snapshot.items() if k != "output_dir"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_run_id(subcommand: str, snapshot: dict) -> str:
    digest = config_digest(snapshot)
    return hashlib.sha256(f"{subcommand}:{digest}".encode("utf-8")).hexdigest()[:12]


# ------------------------------------------------------------- run records


@dataclass
class RunRecord:
    run_id: str
    subcommand: str
    run_dir: str
    config_snapshot: dict
    digest: str
    summary: dict
    artifacts: dict
    failures: list
    duration_seconds: float


class _StepWriter:
    """Single appender for steps.jsonl; all metric lines funnel through it."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def append(self, line: dict) -> None:
        self._fh.write(json.dumps(line) + "\n")

    def close(self) -> None:
        self._fh.close()


def _nan_to_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


class _Runner:
    """Shared open/execute/persist bracket around one run directory."""

    def __init__(self, config: ExperimentConfig, subcommand: str, force: bool):
        self.config = config
        self.subcommand = subcommand
        self.run_id = derive_run_id(subcommand, config.snapshot)
        self.run_dir = os.path.join(config.output_dir, self.run_id)
        marker = os.path.join(self.run_dir, "run.json")
        if os.path.exists(marker):
            if not force:
                raise ConfigurationError(
                    f"run directory {self.run_dir} already holds a run; "
                    "pass --force to overwrite")
            shutil.rmtree(self.run_dir)
        os.makedirs(self.run_dir, exist_ok=True)
        self.steps = _StepWriter(os.path.join(self.run_dir, "steps.jsonl"))
        self.artifacts = {"steps": "steps.jsonl"}
        self.failures = []
        self._t0 = time.perf_counter()

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def add_artifact(self, key: str, filename: str) -> str:
        self.artifacts[key] = filename
        return self.path(filename)

    def fail(self, record_id: str, error: Exception) -> None:
        self.failures.append({"record": record_id, "error": str(error)})

    def finish(self, summary: dict) -> RunRecord:
        self.steps.close()
        duration = time.perf_counter() - self._t0
        record = RunRecord(run_id=self.run_id, subcommand=self.subcommand,
                           run_dir=self.run_dir,
                           config_snapshot=self.config.snapshot,
                           digest=config_digest(self.config.snapshot),
                           summary=summary, artifacts=self.artifacts,
                           failures=self.failures, duration_seconds=duration)
        with open(self.path("run.json"), "w", encoding="utf-8") as fh:
            json.dump({"run_id": record.run_id, "subcommand": record.subcommand,
                       "schema_version": SCHEMA_VERSION, "config_digest": record.digest,
                       "config": record.config_snapshot, "summary": record.summary,
                       "artifacts": record.artifacts, "failures": record.failures,
                       "duration_seconds": record.duration_seconds}, fh, indent=2)
            fh.write("\n")
        return record


def load_run_record(run_dir) -> RunRecord:
    """Read run.json back, checking the snapshot still matches its digest."""
    path = os.path.join(run_dir, "run.json")
    if not os.path.exists(path):
        raise ValidationError(f"{run_dir} holds no run.json")
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    digest = config_digest(obj["config"])
    if digest != obj["config_digest"]:
        raise ValidationError(
            f"{path}: config snapshot does not match its recorded digest "
            f"({digest[:12]} vs {obj['config_digest'][:12]})")
    return RunRecord(run_id=obj["run_id"], subcommand=obj["subcommand"],
                     run_dir=str(run_dir), config_snapshot=obj["config"],
                     digest=obj["config_digest"], summary=obj["summary"],
                     artifacts=obj["artifacts"], failures=obj["failures"],
                     duration_seconds=obj["duration_seconds"])


# --------------------------------------------------------- shared plumbing


def _resolve_weights(config: ExperimentConfig):
    if config.weights_path is not None:
        return load_weights(config.weights_path)
    if config.model is None:
        raise ConfigurationError("this subcommand needs a model section "
                                 "(dimensions or weights_path)")
    return init_random_weights(config.model, **config.init_gains)


def _load_corpus(config: ExperimentConfig):
    if config.corpus_path is None:
        raise ConfigurationError("this subcommand needs corpus.path")
    records = load_corpus_jsonl(config.corpus_path)
    if not records:
        raise ValidationError(f"corpus {config.corpus_path} is empty")
    if config.max_records is not None:
        records = records[:config.max_records]
    return records


def _resolve_vocab(config: ExperimentConfig, records, vocab_size: int):
    if config.vocab_path is not None:
        return load_vocabulary(config.vocab_path)
    return build_vocabulary((r.text for r in records), max_size=vocab_size)


def _record_targets(record, vocab, model_config) -> TargetSequence:
    ids = tokenize(record.text, vocab)
    if ids.size == 0:
        raise ValidationError(f"record {record.record_id!r} tokenizes to nothing")
    if ids.size > model_config.max_positions:
        raise ValidationError(
            f"record {record.record_id!r} needs {ids.size} positions, "
            f"model allows {model_config.max_positions}")
    return TargetSequence(ids)


def _teacher_vectors(config: ExperimentConfig, records, dimension: int):
    source = config.teacher_source(dimension)
    return [teacher_embedding(source, r.text).vector for r in records]


def _safe_name(record_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-." else "_" for c in record_id)


def _write_pairs_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _load_pairs_jsonl(path) -> dict:
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            for key in ("record", "e", "m"):
                if key not in obj:
                    raise ValidationError(f"{path}:{lineno}: pairs line missing {key!r}")
            table[obj["record"]] = obj
    if not table:
        raise ValidationError(f"{path} holds no proto-token pairs")
    return table


# ------------------------------------------------------------ subcommands


def _reconstruct_one(weights, token_ids, opt, stop, seed):
    result = optimize_reconstruction(weights, TargetSequence(token_ids),
                                     opt=opt, stop=stop, seed=seed)
    return {
        "loss_history": result.loss_history,
        "accuracy_history": result.accuracy_history,
        "iterations_used": result.iterations_used,
        "converged": result.converged,
        "decoded": result.decoded.tolist(),
        "e": result.pair.e.tolist(),
        "m": result.pair.m.tolist(),
    }


def _reconstruct_job(args):
    weights, token_ids, opt, stop, seed, record_id = args
    try:
        return record_id, _reconstruct_one(weights, token_ids, opt, stop, seed), None
    except PrototokError as exc:
        return record_id, None, str(exc)


def run_reconstruct(config: ExperimentConfig, force: bool = False,
                    workers: int = 1) -> RunRecord:
    """Fit one proto-token pair per corpus record, independently."""
    corpus = _load_corpus(config)
    weights = _resolve_weights(config)
    vocab = _resolve_vocab(config, corpus, weights.config.vocab_size)
    runner = _Runner(config, "reconstruct", force)

    jobs = []
    for i, record in enumerate(corpus):
        try:
            targets = _record_targets(record, vocab, weights.config)
        except (ValidationError, PrototokError) as exc:
            runner.fail(record.record_id, exc)
            continue
        jobs.append((weights, targets.tokens, config.optimizer, config.stopping,
                     config.seed + i, record.record_id))

    if workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_reconstruct_job, jobs))
    else:
        outcomes = [_reconstruct_job(job) for job in jobs]

    pair_rows = []
    n_converged = 0
    final_accuracies = []
    for record_id, payload, error in outcomes:
        if error is not None:
            runner.fail(record_id, RuntimeError(error))
            continue
        for k, (ce, acc) in enumerate(zip(payload["loss_history"],
                                          payload["accuracy_history"]), start=1):
            runner.steps.append({"record": record_id, "step": k,
                                 "ce_loss": ce, "token_accuracy": acc})
        n_converged += payload["converged"]
        final_accuracies.append(payload["accuracy_history"][-1])
        pair_rows.append({"record": record_id, "e": payload["e"], "m": payload["m"],
                          "decoded": payload["decoded"],
                          "converged": payload["converged"],
                          "iterations_used": payload["iterations_used"]})

    _write_pairs_jsonl(runner.add_artifact("pairs", "pairs.jsonl"), pair_rows)
    return runner.finish({
        "records": len(corpus),
        "optimized": len(pair_rows),
        "converged": n_converged,
        "mean_final_accuracy": float(np.mean(final_accuracies)) if final_accuracies else None,
    })


def _batch_step_line(record, extra=None) -> dict:
    line = {"step": record.step,
            "mean_accuracy": record.mean_accuracy,
            "ce": record.ce,
            "anchor": record.anchor,
            "rel": record.rel,
            "offdiag_correlation": _nan_to_none(record.offdiag_correlation),
            "cos_to_teacher": record.cos_to_teacher}
    if extra:
        line.update(extra)
    return line


def run_anchor(config: ExperimentConfig, force: bool = False,
               workers: int = 1) -> RunRecord:
    """Joint optimization with the teacher-cosine pull, corpus as one batch."""
    corpus = _load_corpus(config)
    weights = _resolve_weights(config)
    vocab = _resolve_vocab(config, corpus, weights.config.vocab_size)
    targets = [_record_targets(r, vocab, weights.config) for r in corpus]
    teachers = _teacher_vectors(config, corpus, weights.config.hidden_size)
    reg = dataclasses.replace(config.regularizer, batch_size=len(corpus))
    runner = _Runner(config, "anchor", force)

    result = optimize_batch(weights, targets, teachers, opt=config.optimizer,
                            stop=config.stopping, reg=reg, seed=config.seed,
                            init_from_teacher=config.init_from_teacher)
    for record in result.records:
        runner.steps.append(_batch_step_line(record))

    save_batch_jsonl(result, runner.add_artifact("batch", "batch.jsonl"))
    last = result.records[-1]
    _write_pairs_jsonl(runner.add_artifact("pairs", "pairs.jsonl"), [
        {"record": corpus[i].record_id,
         "e": result.pairs[i].e.tolist(), "m": result.pairs[i].m.tolist(),
         "decoded": result.decoded[i].tolist(),
         "accuracy": last.accuracies[i],
         "cos_to_teacher": last.cos_to_teacher[i]}
        for i in range(len(corpus))])
    return runner.finish({
        "records": len(corpus),
        "converged": result.converged,
        "iterations_used": result.iterations_used,
        "mean_final_accuracy": last.mean_accuracy,
        "mean_final_cos_to_teacher": float(np.mean(last.cos_to_teacher)),
    })


def run_relational(config: ExperimentConfig, force: bool = False,
                   workers: int = 1) -> RunRecord:
    """Paired batches: structure matching on, then off, same seeds.

    The corpus splits into batches of regularizer.batch_size; leftovers are
    recorded as skipped. Each batch runs twice, so the run emits paired
    accuracy and correlation columns for the two arms.
    """
    corpus = _load_corpus(config)
    weights = _resolve_weights(config)
    vocab = _resolve_vocab(config, corpus, weights.config.vocab_size)
    reg = config.regularizer
    if reg.lambda_rel <= 0:
        raise ConfigurationError("relational runs need regularizer.lambda_rel > 0")
    b = reg.batch_size
    n_batches = len(corpus) // b
    if n_batches == 0:
        raise ValidationError(f"corpus has {len(corpus)} records, "
                              f"batch size {b} needs at least {b}")
    runner = _Runner(config, "relational", force)
    for record in corpus[n_batches * b:]:
        runner.fail(record.record_id, RuntimeError("left over after batching"))

    baseline_reg = dataclasses.replace(reg, lambda_rel=0.0)
    pair_rows = []
    acc_rows = []
    corr_rows = []
    for bi in range(n_batches):
        group = corpus[bi * b:(bi + 1) * b]
        targets = [_record_targets(r, vocab, weights.config) for r in group]
        teachers = _teacher_vectors(config, group, weights.config.hidden_size)
        seed_b = config.seed + bi * b
        arms = {}
        for arm, arm_reg in (("constrained", reg), ("baseline", baseline_reg)):
            result = optimize_batch(weights, targets, teachers, opt=config.optimizer,
                                    stop=config.stopping, reg=arm_reg, seed=seed_b,
                                    init_from_teacher=config.init_from_teacher)
            for record in result.records:
                runner.steps.append(_batch_step_line(record, {"arm": arm, "batch": bi}))
            arms[arm] = result
        with_r, without_r = arms["constrained"], arms["baseline"]
        last_w, last_wo = with_r.records[-1], without_r.records[-1]
        for k, rec in enumerate(group):
            acc_rows.append((bi, rec.record_id, last_w.accuracies[k],
                             last_wo.accuracies[k]))
            pair_rows.append({"record": rec.record_id,
                              "e": with_r.pairs[k].e.tolist(),
                              "m": with_r.pairs[k].m.tolist(),
                              "decoded": with_r.decoded[k].tolist()})
        corr_rows.append((bi, _nan_to_none(with_r.final_correlation),
                          _nan_to_none(without_r.final_correlation),
                          with_r.converged, without_r.converged))

    with open(runner.add_artifact("accuracy_pairs", "accuracy_pairs.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("batch,record,accuracy_constrained,accuracy_baseline\n")
        for bi, rid, aw, awo in acc_rows:
            fh.write(f"{bi},{rid},{aw},{awo}\n")
    with open(runner.add_artifact("correlations", "correlations.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("batch,correlation_constrained,correlation_baseline,"
                 "converged_constrained,converged_baseline\n")
        for row in corr_rows:
            fh.write(",".join(str(x) for x in row) + "\n")
    _write_pairs_jsonl(runner.add_artifact("pairs", "pairs.jsonl"), pair_rows)

    mean_or_none = lambda xs: float(np.mean(xs)) if xs else None
    return runner.finish({
        "batches": n_batches,
        "mean_accuracy_constrained": mean_or_none([r[2] for r in acc_rows]),
        "mean_accuracy_baseline": mean_or_none([r[3] for r in acc_rows]),
        "mean_correlation_constrained": mean_or_none(
            [r[1] for r in corr_rows if r[1] is not None]),
        "mean_correlation_baseline": mean_or_none(
            [r[2] for r in corr_rows if r[2] is not None]),
    })


def run_noise(config: ExperimentConfig, force: bool = False,
              workers: int = 1) -> RunRecord:
    """Fit one record, then sweep decode accuracy over the noise grid."""
    corpus = _load_corpus(config)
    weights = _resolve_weights(config)
    vocab = _resolve_vocab(config, corpus, weights.config.vocab_size)
    if config.noise_record_index >= len(corpus):
        raise ConfigurationError(
            f"noise.record_index {config.noise_record_index} is outside the "
            f"{len(corpus)}-record corpus")
    record = corpus[config.noise_record_index]
    targets = _record_targets(record, vocab, weights.config)
    runner = _Runner(config, "noise", force)

    result = optimize_reconstruction(weights, targets, opt=config.optimizer,
                                     stop=config.stopping, seed=config.seed)
    for k, (ce, acc) in enumerate(zip(result.loss_history,
                                      result.accuracy_history), start=1):
        runner.steps.append({"phase": "optimize", "record": record.record_id,
                             "step": k, "ce_loss": ce, "token_accuracy": acc})

    sweep = noise_sweep(weights, result.pair, targets, alphas=config.noise_alphas,
                        kinds=config.noise_kinds, trials=config.noise_trials,
                        seed=config.seed, spec_overrides=config.noise_overrides)
    for cell in sweep.cells:
        runner.steps.append({"phase": "sweep", "kind": cell.kind, "alpha": cell.alpha,
                             "mean_accuracy": cell.mean_accuracy,
                             "std_accuracy": cell.std_accuracy,
                             "trials": cell.trials})
    save_sweep_csv(sweep, runner.add_artifact("sweep", "sweep.csv"))
    return runner.finish({
        "record": record.record_id,
        "converged": result.converged,
        "baseline_accuracy": sweep.baseline_accuracy,
        "cells": len(sweep.cells),
    })


def run_attention(config: ExperimentConfig, force: bool = False,
                  workers: int = 1) -> RunRecord:
    """Export per-layer lead-token attention profiles for corpus records."""
    corpus = _load_corpus(config)[:config.attention_max_records]
    weights = _resolve_weights(config)
    vocab = _resolve_vocab(config, corpus, weights.config.vocab_size)
    for layer in config.attention_layers:
        if not 0 <= layer < weights.config.num_layers:
            raise ConfigurationError(
                f"attention layer {layer} outside model with "
                f"{weights.config.num_layers} layers")
    stored = None
    if config.attention_pairs_path is not None:
        stored = _load_pairs_jsonl(config.attention_pairs_path)
    runner = _Runner(config, "attention", force)

    exported = 0
    for i, record in enumerate(corpus):
        try:
            targets = _record_targets(record, vocab, weights.config)
            if stored is not None:
                if record.record_id not in stored:
                    raise ValidationError(
                        f"no stored pair for record {record.record_id!r}")
                row = stored[record.record_id]
                pair = ProtoTokenPair(e=np.asarray(row["e"], dtype=np.float64),
                                      m=np.asarray(row["m"], dtype=np.float64))
            else:
                result = optimize_reconstruction(weights, targets,
                                                 opt=config.optimizer,
                                                 stop=config.stopping,
                                                 seed=config.seed + i)
                pair = result.pair
                for k, (ce, acc) in enumerate(zip(result.loss_history,
                                                  result.accuracy_history), start=1):
                    runner.steps.append({"phase": "optimize",
                                         "record": record.record_id, "step": k,
                                         "ce_loss": ce, "token_accuracy": acc})
            trace = forward(weights, assemble_input(pair, len(targets)),
                            capture_attention=True)
            lead = attention_to_e(trace)
            heatmap = layer_heatmap(lead, config.attention_layers)
            filename = f"attention_{_safe_name(record.record_id)}.csv"
            save_heatmap_csv(heatmap, config.attention_layers,
                             runner.add_artifact(f"attention:{record.record_id}",
                                                 filename))
            profile = mean_attention_over_heads(lead, config.attention_layers[0])
            runner.steps.append({"phase": "export", "record": record.record_id,
                                 "layers": list(config.attention_layers),
                                 "first_layer_mean_lead_share": float(np.mean(profile))})
            exported += 1
        except PrototokError as exc:
            runner.fail(record.record_id, exc)
    return runner.finish({"records": len(corpus), "exported": exported})


def run_project(config: ExperimentConfig, force: bool = False,
                workers: int = 1) -> RunRecord:
    """Map stored proto-token vectors to 2-D, labeled by corpus variant."""
    if config.projection_pairs_path is None:
        raise ConfigurationError("projection runs need projection.pairs_path")
    stored = _load_pairs_jsonl(config.projection_pairs_path)
    variants = {}
    if config.corpus_path is not None:
        variants = {r.record_id: r.variant for r in _load_corpus(config)}

    ids, labels, vectors = [], [], []
    for record_id in stored:
        row = stored[record_id]
        variant = variants.get(record_id, "")
        ids.append(f"{record_id}/e")
        labels.append(f"{variant}:e" if variant else "e")
        vectors.append(np.asarray(row["e"], dtype=np.float64))
        if config.projection_include_m:
            ids.append(f"{record_id}/m")
            labels.append(f"{variant}:m" if variant else "m")
            vectors.append(np.asarray(row["m"], dtype=np.float64))
    points = np.stack(vectors)

    base = default_projection_config(points.shape[0], seed=config.seed)
    settings = {f: getattr(base, f) for f in
                ("perplexity", "iterations", "learning_rate", "momentum",
                 "early_exaggeration", "exaggeration_iters", "seed")}
    settings.update(config.projection_settings)
    projection_config = ProjectionConfig(**settings)

    runner = _Runner(config, "project", force)
    projection = tsne_project(points, projection_config)
    for k, kl in enumerate(projection.kl_history, start=1):
        runner.steps.append({"iteration": k, "kl_divergence": kl})
    save_projection_csv(projection, runner.add_artifact("projection", "projection.csv"),
                        ids=ids, labels=labels)
    return runner.finish({
        "points": points.shape[0],
        "kl_divergence": projection.kl_divergence,
        "degenerate": projection.degenerate,
        "perplexity": projection_config.perplexity,
    })


def run_datagen(config: ExperimentConfig, force: bool = False,
                workers: int = 1) -> RunRecord:
    """Generate a labeled corpus from the bundled grammars and lexicon."""
    lexicon = bundled_lexicon()
    runner = _Runner(config, "datagen", force)
    records = []
    for ci, klass in enumerate(config.datagen_classes):
        grammar = load_bundled_grammar(klass)
        n_lexical = 0
        for j in range(config.datagen_sentences_per_class):
            sentence_seed = int(np.random.SeedSequence(
                (config.seed, ci, j)).generate_state(1, dtype=np.uint64)[0])
            text, _ = generate_sentence(grammar, lexicon, seed=sentence_seed)
            source_id = f"{klass}/{j}"
            records.append(CorpusRecord(source_id, text, label=klass))
            if config.datagen_typo_variants > 0:
                variants = typo_augment(text, AugmentConfig(seed=sentence_seed),
                                        count=config.datagen_typo_variants)
                for k, variant in enumerate(variants):
                    records.append(CorpusRecord(f"{source_id}/t{k}", variant.text,
                                                label=klass, variant="lexical",
                                                source_id=source_id))
                    n_lexical += 1
        runner.steps.append({"class": klass,
                             "sentences": config.datagen_sentences_per_class,
                             "lexical_variants": n_lexical})
    if config.datagen_paraphrase_path is not None:
        semantic = load_paraphrases(config.datagen_paraphrase_path)
        records.extend(semantic)
        runner.steps.append({"class": "paraphrases", "sentences": len(semantic),
                             "lexical_variants": 0})

    save_corpus_jsonl(records, runner.add_artifact("corpus", "corpus.jsonl"))
    vocab = build_vocabulary((r.text for r in records),
                             max_size=config.datagen_vocab_max_size)
    save_vocabulary(vocab, runner.add_artifact("vocabulary", "vocab.json"))
    return runner.finish({
        "classes": len(config.datagen_classes),
        "records": len(records),
        "vocabulary_size": len(vocab),
    })


# -------------------------------------------------------------- entrypoint


_RUNNERS = {
    "reconstruct": run_reconstruct,
    "anchor": run_anchor,
    "relational": run_relational,
    "noise": run_noise,
    "attention": run_attention,
    "project": run_project,
    "datagen": run_datagen,
}

_HELP = {
    "reconstruct": "fit a proto-token pair to every corpus record",
    "anchor": "batch optimization with the teacher-cosine pull",
    "relational": "paired batch runs with structure matching on and off",
    "noise": "decode-accuracy sweep over perturbation kinds and strengths",
    "attention": "export lead-token attention heatmaps per layer",
    "project": "2-D map of stored proto-token vectors",
    "datagen": "generate a labeled corpus from the bundled grammars",
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prototok",
        description="Reconstruct token sequences from two learnable input vectors "
                    "through a small frozen transformer.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes for per-record dispatch")
        p.add_argument("--force", action="store_true",
                       help="overwrite an existing run directory")
    args = parser.parse_args(argv)

    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        config = load_experiment_config(args.config, seed=args.seed,
                                        output_dir=args.out)
        record = _RUNNERS[args.subcommand](config, force=args.force,
                                           workers=args.workers)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PrototokError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"run {record.run_id} finished in {record.duration_seconds:.2f}s "
          f"-> {record.run_dir}")
    for key, value in record.summary.items():
        print(f"  {key}: {value}")
    if record.failures:
        print(f"  failures: {len(record.failures)} (see run.json)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
