"""Strict loading of experiment, sweep, and probe config files.

Configs are JSON trees. Unknown keys are rejected everywhere (a typo must not
silently become a default), referenced input paths must exist at load time,
and every value error surfaces as ConfigError so the CLI can map it to the
usage exit code. Relative input paths resolve against the config file's
directory; relative output paths resolve against SFTLAB_OUT_ROOT when set.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

from .losses import LossConfig
from .sampling import SamplingConfig
from .training import TrainConfig

OUTPUT_ROOT_ENV = "SFTLAB_OUT_ROOT"

DEFAULT_EVAL_METRICS = ("self_bleu", "distinct_1", "distinct_2", "entropy")
KNOWN_METRICS = ("self_bleu", "distinct_1", "distinct_2", "entropy", "coverage")


class ConfigError(ValueError):
    """Bad configuration: unknown key, missing value, out-of-range number,
    missing input file."""


def _check_keys(data: dict, allowed: set[str], where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


def _require(data: dict, key: str, where: str):
    if key not in data:
        raise ConfigError(f"missing required key {key!r} in {where}")
    return data[key]


def parse_objective(data: dict, where: str = "objective") -> LossConfig:
    _check_keys(data, {"name", "gamma", "beta", "lambda", "alpha"}, where)
    name = _require(data, "name", where)
    try:
        return LossConfig(
            objective=name,
            gamma=float(data.get("gamma", 3.0)),
            beta=None if data.get("beta") is None else float(data["beta"]),
            lam=float(data.get("lambda", 1.0)),
            alpha=float(data.get("alpha", 0.5)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ModelSpec:
    context: int = 8
    embed_dim: int = 32
    hidden_dim: int = 128
    vocab: str | None = None

    def to_dict(self) -> dict:
        return {
            "context": self.context,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "vocab": self.vocab,
        }


def parse_model(data: dict, where: str = "model") -> ModelSpec:
    _check_keys(data, {"context", "embed_dim", "hidden_dim", "vocab"}, where)
    try:
        spec = ModelSpec(
            context=int(data.get("context", 8)),
            embed_dim=int(data.get("embed_dim", 32)),
            hidden_dim=int(data.get("hidden_dim", 128)),
            vocab=data.get("vocab"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if spec.context < 1 or spec.embed_dim < 1 or spec.hidden_dim < 1:
        raise ConfigError(f"{where}: dimensions must be >= 1")
    return spec


def parse_train(data: dict, objective: LossConfig, where: str = "train") -> TrainConfig:
    _check_keys(
        data,
        {
            "learning_rate",
            "warmup_steps",
            "total_steps",
            "weight_decay",
            "batch_size",
            "seed",
            "momentum",
        },
        where,
    )
    try:
        return TrainConfig(
            objective=objective,
            learning_rate=float(data.get("learning_rate", 0.1)),
            warmup_steps=int(data.get("warmup_steps", 50)),
            total_steps=int(data.get("total_steps", 1000)),
            weight_decay=float(data.get("weight_decay", 0.01)),
            batch_size=int(data.get("batch_size", 16)),
            seed=int(data.get("seed", 0)),
            momentum=float(data.get("momentum", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_sampling(data: dict, where: str = "sampling") -> SamplingConfig:
    _check_keys(data, {"top_p", "temperature", "max_tokens", "seed"}, where)
    try:
        return SamplingConfig(
            top_p=float(data.get("top_p", 0.9)),
            temperature=float(data.get("temperature", 1.0)),
            max_tokens=int(data.get("max_tokens", 64)),
            seed=int(data.get("seed", 0)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def resolve_output_dir(raw) -> Path:
    """Relative output paths land under $SFTLAB_OUT_ROOT when it is set."""
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _input_path(raw, base_dir: Path, where: str) -> Path:
    path = Path(raw)
    if not path.is_absolute():
        path = base_dir / path
    if not path.exists():
        raise ConfigError(f"{where}: path {path} does not exist")
    return path


def _load_json(path) -> tuple[dict, Path]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data, path.parent


def _parse_seeds(data, where: str) -> tuple[int, ...]:
    seeds = data.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError(f"{where}: seeds must be a non-empty list of ints")
    return tuple(seeds)


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig
    model: ModelSpec
    sampling: SamplingConfig
    corpus: Path
    output_dir: Path
    seeds: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "model": self.model.to_dict(),
            "sampling": {
                "top_p": self.sampling.top_p,
                "temperature": self.sampling.temperature,
                "max_tokens": self.sampling.max_tokens,
                "seed": self.sampling.seed,
            },
            "seeds": list(self.seeds),
        }


def load_experiment_config(path) -> ExperimentConfig:
    data, base = _load_json(path)
    _check_keys(
        data,
        {"objective", "model", "train", "sampling", "corpus", "output_dir", "seeds"},
        str(path),
    )
    objective = parse_objective(_require(data, "objective", str(path)))
    train = parse_train(data.get("train", {}), objective)
    model = parse_model(data.get("model", {}))
    sampling = parse_sampling(data.get("sampling", {}))
    corpus = _input_path(_require(data, "corpus", str(path)), base, "corpus")
    output_dir = resolve_output_dir(_require(data, "output_dir", str(path)))
    return ExperimentConfig(
        train=train,
        model=model,
        sampling=sampling,
        corpus=corpus,
        output_dir=output_dir,
        seeds=_parse_seeds(data, str(path)),
    )


@dataclass(frozen=True)
class SweepSpec:
    objectives: tuple[str, ...]
    gammas: tuple[float, ...]
    betas: tuple[float, ...]
    seeds: tuple[int, ...]
    train: TrainConfig  # objective field is a placeholder, replaced per cell
    model: ModelSpec
    sampling: SamplingConfig
    corpus: Path
    prompts: Path
    samples_per_prompt: int
    metrics: tuple[str, ...]
    workers: int
    output_dir: Path


def load_sweep_spec(path) -> SweepSpec:
    data, base = _load_json(path)
    _check_keys(
        data,
        {
            "objectives",
            "gammas",
            "betas",
            "seeds",
            "model",
            "train",
            "sampling",
            "corpus",
            "prompts",
            "samples_per_prompt",
            "metrics",
            "workers",
            "output_dir",
        },
        str(path),
    )
    objectives = tuple(data.get("objectives", ["tofu"]))
    from .losses import OBJECTIVES

    for name in objectives:
        if name not in OBJECTIVES:
            raise ConfigError(f"unknown objective {name!r} in sweep grid")
    gammas = tuple(float(g) for g in data.get("gammas", [3.0]))
    betas = tuple(float(b) for b in data.get("betas", [0.8]))
    if not gammas or not betas or not objectives:
        raise ConfigError("sweep grid must be non-empty")
    metrics = tuple(data.get("metrics", list(DEFAULT_EVAL_METRICS)))
    for m in metrics:
        if m not in KNOWN_METRICS:
            raise ConfigError(f"unknown metric {m!r}, expected one of {KNOWN_METRICS}")
    samples = int(data.get("samples_per_prompt", 8))
    if samples < 1:
        raise ConfigError("samples_per_prompt must be >= 1")
    workers = int(data.get("workers", 1))
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return SweepSpec(
        objectives=objectives,
        gammas=gammas,
        betas=betas,
        seeds=_parse_seeds(data, str(path)),
        train=parse_train(data.get("train", {}), LossConfig("ce")),
        model=parse_model(data.get("model", {})),
        sampling=parse_sampling(data.get("sampling", {})),
        corpus=_input_path(_require(data, "corpus", str(path)), base, "corpus"),
        prompts=_input_path(_require(data, "prompts", str(path)), base, "prompts"),
        samples_per_prompt=samples,
        metrics=metrics,
        workers=workers,
        output_dir=resolve_output_dir(_require(data, "output_dir", str(path))),
    )


@dataclass(frozen=True)
class ProbeSpec:
    pretrain_corpus: Path
    pretrain: TrainConfig
    sft_corpus: Path
    sft_base: TrainConfig
    sft_objectives: tuple[LossConfig, ...]
    model: ModelSpec
    prompt: str
    valid_tokens: tuple[str, ...]
    seeds: tuple[int, ...]
    output_dir: Path


def load_probe_spec(path) -> ProbeSpec:
    data, base = _load_json(path)
    _check_keys(data, {"pretrain", "sft", "model", "probe", "seeds", "output_dir"}, str(path))
    pre = _require(data, "pretrain", str(path))
    _check_keys(pre, {"corpus", "train", "objective"}, "pretrain")
    pre_objective = parse_objective(pre.get("objective", {"name": "ce"}), "pretrain.objective")
    sft = _require(data, "sft", str(path))
    _check_keys(sft, {"corpus", "train", "objectives"}, "sft")
    raw_objectives = _require(sft, "objectives", "sft")
    if not isinstance(raw_objectives, list) or not raw_objectives:
        raise ConfigError("sft.objectives must be a non-empty list")
    probe = _require(data, "probe", str(path))
    _check_keys(probe, {"prompt", "valid_tokens"}, "probe")
    valid_tokens = tuple(_require(probe, "valid_tokens", "probe"))
    if not valid_tokens or any(len(t) != 1 for t in valid_tokens):
        raise ConfigError("probe.valid_tokens must be single characters")
    return ProbeSpec(
        pretrain_corpus=_input_path(_require(pre, "corpus", "pretrain"), base, "pretrain.corpus"),
        pretrain=parse_train(pre.get("train", {}), pre_objective, "pretrain.train"),
        sft_corpus=_input_path(_require(sft, "corpus", "sft"), base, "sft.corpus"),
        sft_base=parse_train(sft.get("train", {}), LossConfig("ce"), "sft.train"),
        sft_objectives=tuple(
            parse_objective(o, f"sft.objectives[{i}]") for i, o in enumerate(raw_objectives)
        ),
        model=parse_model(data.get("model", {})),
        prompt=str(_require(probe, "prompt", "probe")),
        valid_tokens=valid_tokens,
        seeds=_parse_seeds(data, str(path)),
        output_dir=resolve_output_dir(_require(data, "output_dir", str(path))),
    )


@dataclass(frozen=True)
class PromptSpec:
    id: str
    prompt: str
    answer: str | None = None


def load_prompts(path) -> list[PromptSpec]:
    """Eval prompt file: JSONL rows {"id", "prompt", optional "answer"}."""
    prompts = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{line_no}: bad JSON: {exc}") from None
            _check_keys(row, {"id", "prompt", "answer"}, f"{path}:{line_no}")
            pid = str(_require(row, "id", f"{path}:{line_no}"))
            if pid in seen:
                raise ConfigError(f"{path}:{line_no}: duplicate prompt id {pid!r}")
            seen.add(pid)
            prompts.append(
                PromptSpec(
                    id=pid,
                    prompt=str(_require(row, "prompt", f"{path}:{line_no}")),
                    answer=None if row.get("answer") is None else str(row["answer"]),
                )
            )
    if not prompts:
        raise ConfigError(f"{path}: no prompts")
    return prompts
