"""Experiment orchestration behind the CLI subcommands.

Every run directory gets a run.json RunRecord carrying the canonical config
hash, the corpus content hash, and the exact invocation, so a run can be
reproduced from its outputs alone. Primary outputs (checkpoints, generations,
CSVs) are byte-identical across reruns; run.json is the one file allowed to
differ, and only in its wall-clock field.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import (
    ExperimentConfig,
    ModelSpec,
    ConfigError,
    ProbeSpec,
    PromptSpec,
    SweepSpec,
    load_prompts,
)
from .hashing import config_hash, content_hash
from .losses import PrConfig, drop_threshold, focal_scaling
from .metrics import (
    GenerationSet,
    MetricReport,
    completion_entropy,
    coverage_and_mean,
    distinct_n,
    extract_boxed_answer,
    self_bleu,
    write_metric_reports,
)
from .model import ToyModel, Vocab
from .sampling import SamplingConfig, sample_generation_set
from .training import Checkpoint, Corpus, TrainConfig, probe_token_distribution, train

CURVE_GAMMAS = (1.0, 2.0, 3.0, 5.0)
CURVE_PR_GRID = ((1.0, 1.0), (1.0, 0.5), (0.5, 0.5), (0.5, 0.9))
CURVE_POINTS = 512


@dataclass
class RunRecord:
    command: str
    config_hash: str
    corpus_hash: str | None
    invocation: dict
    outputs: dict = field(default_factory=dict)
    status: str = "ok"
    wall_clock_s: float = 0.0

    def write(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "command": self.command,
            "config_hash": self.config_hash,
            "corpus_hash": self.corpus_hash,
            "invocation": self.invocation,
            "outputs": self.outputs,
            "status": self.status,
            "wall_clock_s": self.wall_clock_s,
        }
        (out_dir / "run.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_trace_csv(path: Path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "lr"])
        for row in trace:
            writer.writerow([row.step, repr(row.loss), repr(row.lr)])


def build_model(spec: ModelSpec, corpus: Corpus, seed: int) -> ToyModel:
    chars = spec.vocab if spec.vocab is not None else corpus.charset()
    return ToyModel.init(
        Vocab(chars),
        context=spec.context,
        embed_dim=spec.embed_dim,
        hidden_dim=spec.hidden_dim,
        seed=seed,
    )


def run_train(cfg: ExperimentConfig, out_dir: Path | None = None) -> dict:
    """Train one model per the config and write checkpoint/trace/run record."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir
    started = time.monotonic()
    corpus = Corpus.load_jsonl(cfg.corpus)
    model = build_model(cfg.model, corpus, cfg.train.seed)
    checkpoint, trace = train(model, corpus, cfg.train)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out_dir / "checkpoint.bin")
    _write_trace_csv(out_dir / "trace.csv", trace)
    record = RunRecord(
        command="train",
        config_hash=config_hash(cfg.to_dict()),
        corpus_hash=content_hash(cfg.corpus),
        invocation={"config": cfg.to_dict(), "corpus": str(cfg.corpus)},
        outputs={"checkpoint": "checkpoint.bin", "trace": "trace.csv"},
        wall_clock_s=time.monotonic() - started,
    )
    record.write(out_dir)
    return {
        "checkpoint": out_dir / "checkpoint.bin",
        "trace": out_dir / "trace.csv",
        "final_loss": trace[-1].loss if trace else None,
    }


def _success(completion: str, answer: str) -> bool:
    boxed = extract_boxed_answer(completion)
    target = boxed if boxed is not None else completion.strip()
    return target == answer


def validate_eval_request(metrics, samples: int, prompts: list[PromptSpec]):
    from .config import KNOWN_METRICS

    for m in metrics:
        if m not in KNOWN_METRICS:
            raise ConfigError(f"unknown metric {m!r}, expected one of {KNOWN_METRICS}")
    if "self_bleu" in metrics and samples < 2:
        raise ConfigError("self_bleu needs at least 2 samples per prompt")
    if "coverage" in metrics and any(p.answer is None for p in prompts):
        raise ConfigError("coverage requested but some prompts carry no answer key")


def run_eval(
    checkpoint_path,
    prompts_path,
    sampling: SamplingConfig,
    out_dir: Path,
    samples: int = 10,
    metrics=("self_bleu", "distinct_1", "distinct_2", "entropy"),
) -> dict:
    """Sample completions for every prompt, write generations and metric CSVs."""
    started = time.monotonic()
    metrics = tuple(metrics)
    prompts = load_prompts(prompts_path)
    validate_eval_request(metrics, samples, prompts)
    model = Checkpoint.load(checkpoint_path).model
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sets: dict[str, GenerationSet] = {}
    with open(out_dir / "generations.jsonl", "w", encoding="utf-8") as fh:
        for p in prompts:
            gen = sample_generation_set(model, p.prompt, samples, sampling, p.id)
            sets[p.id] = gen
            for i, completion in enumerate(gen.completions):
                fh.write(
                    json.dumps(
                        {"prompt_id": p.id, "completion": completion, "sample_index": i},
                        sort_keys=True,
                    )
                )
                fh.write("\n")

    reports = []
    for name in metrics:
        if name == "self_bleu":
            reports.append(
                MetricReport(name, {p.id: self_bleu(sets[p.id]) for p in prompts})
            )
        elif name.startswith("distinct_"):
            n = int(name.split("_", 1)[1])
            reports.append(
                MetricReport(name, {p.id: distinct_n(sets[p.id], n) for p in prompts})
            )
        elif name == "entropy":
            reports.append(
                MetricReport(name, {p.id: completion_entropy(sets[p.id]) for p in prompts})
            )
        elif name == "coverage":
            matrix = np.array(
                [[_success(c, p.answer) for c in sets[p.id].completions] for p in prompts]
            )
            coverage, mean_success = coverage_and_mean(matrix)
            reports.append(
                MetricReport(
                    "coverage",
                    {p.id: float(row.any()) for p, row in zip(prompts, matrix)},
                )
            )
            reports.append(
                MetricReport(
                    "mean_success",
                    {p.id: float(row.mean()) for p, row in zip(prompts, matrix)},
                )
            )
            # aggregate rows of these two reports equal (coverage, mean_success)
            assert abs(reports[-2].mean - coverage) < 1e-12
            assert abs(reports[-1].mean - mean_success) < 1e-12
    write_metric_reports(out_dir / "metrics.csv", reports)

    record = RunRecord(
        command="eval",
        config_hash=config_hash(
            {
                "checkpoint": content_hash(checkpoint_path),
                "sampling": {
                    "top_p": sampling.top_p,
                    "temperature": sampling.temperature,
                    "max_tokens": sampling.max_tokens,
                    "seed": sampling.seed,
                },
                "samples": samples,
                "metrics": list(metrics),
            }
        ),
        corpus_hash=content_hash(prompts_path),
        invocation={
            "checkpoint": str(checkpoint_path),
            "prompts": str(prompts_path),
            "samples": samples,
            "metrics": list(metrics),
        },
        outputs={"generations": "generations.jsonl", "metrics": "metrics.csv"},
        wall_clock_s=time.monotonic() - started,
    )
    record.write(out_dir)
    return {
        "generations": out_dir / "generations.jsonl",
        "metrics": out_dir / "metrics.csv",
        "reports": {r.metric: r.mean for r in reports},
    }


def run_curves(out_path) -> Path:
    """Emit the focal factor and lambda-PR weight curves on a log-spaced grid."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    p_grid = np.geomspace(1e-6, 1.0, CURVE_POINTS)
    header = ["p"]
    columns = []
    for gamma in CURVE_GAMMAS:
        header.append(f"g_gamma{gamma:g}")
        columns.append(focal_scaling(p_grid, gamma))
    for lam, alpha in CURVE_PR_GRID:
        header.append(f"w_{lam:g}_{alpha:g}")
        delta = drop_threshold(PrConfig(lam, alpha, 1, 1))
        # position factor lam^0 = 1: curves show the weight at response start
        w = np.where(p_grid <= delta, p_grid / (alpha + (1.0 - alpha) * p_grid), 0.0)
        columns.append(w)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, p in enumerate(p_grid):
            writer.writerow([repr(float(p))] + [repr(float(col[i])) for col in columns])
    return out_path


def _cell_label(objective: str, gamma: float, beta: float) -> str:
    return f"{objective}_g{gamma:g}_b{beta:g}"


def _sweep_task(args: tuple) -> tuple:
    """One (cell, seed) unit: train then eval. Top-level so it pickles for the
    process pool. Returns (label, seed, metric means dict, error or None)."""
    (label, train_cfg, model_spec, sampling, corpus_path, prompts_path, samples, metrics, cell_dir) = args
    try:
        exp = ExperimentConfig(
            train=train_cfg,
            model=model_spec,
            sampling=sampling,
            corpus=Path(corpus_path),
            output_dir=Path(cell_dir),
            seeds=(train_cfg.seed,),
        )
        train_out = run_train(exp, Path(cell_dir))
        sampling_seeded = replace(sampling, seed=train_cfg.seed)
        eval_out = run_eval(
            train_out["checkpoint"],
            prompts_path,
            sampling_seeded,
            Path(cell_dir) / "eval",
            samples=samples,
            metrics=metrics,
        )
        values = {"final_loss": train_out["final_loss"], **eval_out["reports"]}
        return label, train_cfg.seed, values, None
    except Exception as exc:  # cell failures are recorded, not fatal to the sweep
        return label, train_cfg.seed, {}, f"{type(exc).__name__}: {exc}"


def run_sweep(spec: SweepSpec) -> dict:
    """Grid of (objective, gamma, beta) cells x seeds, then one summary CSV.

    Duplicate cells (same canonical cell config) run once. Cell failures are
    recorded in the summary as empty values and reported in the return value;
    the sweep itself keeps going.
    """
    started = time.monotonic()
    out_dir = spec.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    cells = []
    seen_hashes = set()
    for objective in spec.objectives:
        for gamma in spec.gammas:
            for beta in spec.betas:
                loss_cfg = replace(
                    spec.train.objective, objective=objective, gamma=gamma, beta=beta
                )
                cell_train = replace(spec.train, objective=loss_cfg)
                cell_hash = config_hash(cell_train.to_dict())
                if cell_hash in seen_hashes:
                    continue
                seen_hashes.add(cell_hash)
                cells.append((_cell_label(objective, gamma, beta), cell_train))

    tasks = []
    for label, cell_train in cells:
        for seed in spec.seeds:
            seeded = replace(cell_train, seed=seed)
            cell_dir = out_dir / label / f"seed_{seed}"
            tasks.append(
                (
                    label,
                    seeded,
                    spec.model,
                    spec.sampling,
                    str(spec.corpus),
                    str(spec.prompts),
                    spec.samples_per_prompt,
                    spec.metrics,
                    str(cell_dir),
                )
            )

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]

    values: dict[tuple[str, int], dict] = {}
    failures = []
    for label, seed, metrics_out, error in results:
        values[(label, seed)] = metrics_out
        if error is not None:
            failures.append({"cell": label, "seed": seed, "error": error})

    metric_names = ["final_loss"] + [
        m for m in spec.metrics if m != "coverage"
    ] + (["coverage", "mean_success"] if "coverage" in spec.metrics else [])
    labels = [label for label, _ in cells]
    summary_path = out_dir / "sweep_summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "seed"] + labels)
        for metric in metric_names:
            per_seed_rows = []
            for seed in spec.seeds:
                row = []
                for label in labels:
                    v = values.get((label, seed), {}).get(metric)
                    row.append("" if v is None else repr(float(v)))
                per_seed_rows.append(row)
                writer.writerow([metric, seed] + row)
            median_row = []
            for i, label in enumerate(labels):
                cell_vals = [
                    float(r[i]) for r in per_seed_rows if r[i] != ""
                ]
                median_row.append(repr(statistics.median(cell_vals)) if cell_vals else "")
            writer.writerow([metric, "median"] + median_row)

    record = RunRecord(
        command="sweep",
        config_hash=config_hash(
            {
                "objectives": list(spec.objectives),
                "gammas": list(spec.gammas),
                "betas": list(spec.betas),
                "seeds": list(spec.seeds),
                "train": spec.train.to_dict(),
                "model": spec.model.to_dict(),
                "samples_per_prompt": spec.samples_per_prompt,
                "metrics": list(spec.metrics),
            }
        ),
        corpus_hash=content_hash(spec.corpus),
        invocation={"cells": labels, "seeds": list(spec.seeds)},
        outputs={"summary": "sweep_summary.csv"},
        status="ok" if not failures else f"{len(failures)} cell(s) failed",
        wall_clock_s=time.monotonic() - started,
    )
    record.write(out_dir)
    return {"summary": summary_path, "cells": labels, "failures": failures}


def run_probe(spec: ProbeSpec) -> dict:
    """Pretrain broad, branch SFT per objective, probe the answer distribution.

    Per seed: one pretraining run, then one SFT continuation per objective from
    that same pretrained model. Emits a probe CSV per branch (plus the
    pretrained baseline) and a verdict JSON with median entropies, argmax
    agreement, and tail-mass comparisons against the pretrained model.
    """
    started = time.monotonic()
    pre_corpus = Corpus.load_jsonl(spec.pretrain_corpus)
    sft_corpus = Corpus.load_jsonl(spec.sft_corpus)
    if spec.model.vocab is not None:
        chars = spec.model.vocab
    else:
        chars = "".join(
            sorted(
                set(pre_corpus.charset())
                | set(sft_corpus.charset())
                | set(spec.prompt)
                | set(spec.valid_tokens)
            )
        )
    vocab = Vocab(chars)
    missing = [t for t in spec.valid_tokens if t not in chars]
    if missing:
        raise ConfigError(f"valid tokens {missing} not in vocab {chars!r}")

    labels = []
    for cfg in spec.sft_objectives:
        label = cfg.objective
        while label in labels:
            label += "_x"
        labels.append(label)

    probes: dict[str, dict[int, object]] = {"pretrained": {}}
    for label in labels:
        probes[label] = {}

    for seed in spec.seeds:
        model = ToyModel.init(
            vocab,
            context=spec.model.context,
            embed_dim=spec.model.embed_dim,
            hidden_dim=spec.model.hidden_dim,
            seed=seed,
        )
        pre_ckpt, _ = train(model, pre_corpus, replace(spec.pretrain, seed=seed))
        probes["pretrained"][seed] = probe_token_distribution(
            pre_ckpt.model, spec.prompt, spec.valid_tokens
        )
        for label, objective in zip(labels, spec.sft_objectives):
            sft_cfg = replace(spec.sft_base, objective=objective, seed=seed)
            ckpt, _ = train(pre_ckpt.model, sft_corpus, sft_cfg)
            probes[label][seed] = probe_token_distribution(
                ckpt.model, spec.prompt, spec.valid_tokens
            )

    out_dir = spec.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    from .metrics import answer_entropy

    summary: dict[str, dict] = {}
    for label, by_seed in probes.items():
        with open(out_dir / f"probe_{label}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["seed", "token", "probability"])
            for seed in spec.seeds:
                result = by_seed[seed]
                for token in spec.valid_tokens:
                    writer.writerow([seed, token, repr(result.probabilities[token])])
                writer.writerow([seed, "__tail__", repr(result.tail_mass)])
        entropies = [
            answer_entropy(np.array([by_seed[s].probabilities[t] for t in spec.valid_tokens]))
            for s in spec.seeds
        ]
        summary[label] = {
            "median_entropy": float(statistics.median(entropies)),
            "entropy_by_seed": [float(e) for e in entropies],
            "median_tail_mass": float(
                statistics.median(by_seed[s].tail_mass for s in spec.seeds)
            ),
            "argmax_by_seed": [by_seed[s].argmax_token() for s in spec.seeds],
        }

    verdict = {
        "prompt": spec.prompt,
        "valid_tokens": list(spec.valid_tokens),
        "seeds": list(spec.seeds),
        "summary": summary,
    }
    if "ce" in labels:
        ce_summary = summary["ce"]
        comparisons = {}
        for label in labels:
            if label == "ce":
                continue
            comparisons[label] = {
                "median_entropy_exceeds_ce": summary[label]["median_entropy"]
                > ce_summary["median_entropy"],
                "argmax_matches_ce_per_seed": [
                    a == b
                    for a, b in zip(
                        summary[label]["argmax_by_seed"], ce_summary["argmax_by_seed"]
                    )
                ],
                "tail_within_pretrained_budget": summary[label]["median_tail_mass"]
                <= 1.10 * summary["pretrained"]["median_tail_mass"],
            }
        verdict["vs_ce"] = comparisons
    (out_dir / "verdict.json").write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n")

    record = RunRecord(
        command="probe",
        config_hash=config_hash(
            {
                "pretrain": spec.pretrain.to_dict(),
                "sft": spec.sft_base.to_dict(),
                "objectives": [c.objective for c in spec.sft_objectives],
                "model": spec.model.to_dict(),
                "prompt": spec.prompt,
                "valid_tokens": list(spec.valid_tokens),
                "seeds": list(spec.seeds),
            }
        ),
        corpus_hash=content_hash(spec.pretrain_corpus),
        invocation={"pretrain_corpus": str(spec.pretrain_corpus), "sft_corpus": str(spec.sft_corpus)},
        outputs={f"probe_{label}": f"probe_{label}.csv" for label in probes}
        | {"verdict": "verdict.json"},
        wall_clock_s=time.monotonic() - started,
    )
    record.write(out_dir)
    return verdict
