"""Training loop, corpus handling, checkpoints, and the distribution probe.

Everything here is deterministic given (config, seed, corpus): PCG64 streams
for shuffling and init, fixed-order batch accumulation, and a checkpoint
container of raw float64 bytes, so identical runs produce bit-identical
checkpoints.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hashing import config_hash
from .losses import LossConfig, Target, token_loss
from .model import Gradients, ToyModel, Vocab, backward_batch, forward, forward_batch, pad_context
from .numerics import log_softmax


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class CorpusExample:
    prompt: str
    response: str

    def __post_init__(self):
        if len(self.response) == 0:
            raise ValueError("response must be non-empty")


@dataclass
class Corpus:
    examples: list[CorpusExample]

    def __post_init__(self):
        if len(self.examples) == 0:
            raise ValueError("corpus must be non-empty")

    def __len__(self) -> int:
        return len(self.examples)

    def charset(self) -> str:
        return "".join(sorted({ch for ex in self.examples for ch in ex.prompt + ex.response}))

    @classmethod
    def load_jsonl(cls, path) -> "Corpus":
        examples = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{line_no}: bad JSON: {exc}") from None
                if not isinstance(row, dict) or set(row) != {"prompt", "response"}:
                    raise ValueError(f"{path}:{line_no}: expected keys prompt/response")
                examples.append(CorpusExample(str(row["prompt"]), str(row["response"])))
        return cls(examples)

    def save_jsonl(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for ex in self.examples:
                fh.write(json.dumps({"prompt": ex.prompt, "response": ex.response}, sort_keys=True))
                fh.write("\n")


@dataclass(frozen=True)
class TrainConfig:
    objective: LossConfig
    learning_rate: float = 0.1
    warmup_steps: int = 50
    total_steps: int = 1000
    weight_decay: float = 0.01
    batch_size: int = 16
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.warmup_steps > self.total_steps:
            raise ValueError(
                f"warmup_steps {self.warmup_steps} exceeds total_steps {self.total_steps}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def to_dict(self) -> dict:
        obj = self.objective
        return {
            "objective": {
                "name": obj.objective,
                "gamma": obj.gamma,
                "beta": obj.beta,
                "lambda": obj.lam,
                "alpha": obj.alpha,
            },
            "learning_rate": self.learning_rate,
            "warmup_steps": self.warmup_steps,
            "total_steps": self.total_steps,
            "weight_decay": self.weight_decay,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "momentum": self.momentum,
        }


@dataclass(frozen=True)
class TraceRow:
    step: int
    loss: float
    lr: float


def schedule_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to the peak, then linear decay to 0 at total_steps."""
    if step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    remaining = cfg.total_steps - cfg.warmup_steps
    if remaining == 0:
        return cfg.learning_rate
    return cfg.learning_rate * (cfg.total_steps - step) / remaining


@dataclass
class EncodedExample:
    contexts: np.ndarray  # (T, c) padded windows, one per response position
    targets: np.ndarray  # (T,) response token ids, EOS last


def encode_example(vocab: Vocab, example: CorpusExample, context: int) -> EncodedExample:
    """Training positions for one example: the prompt only conditions, every
    response character plus the closing EOS is a prediction target."""
    prompt_ids = vocab.encode(example.prompt)
    response_ids = vocab.encode(example.response) + [vocab.eos_id]
    seq = prompt_ids + response_ids
    contexts = []
    for j in range(len(response_ids)):
        prefix = seq[: len(prompt_ids) + j]
        if not prefix:
            prefix = [vocab.eos_id]
        contexts.append(pad_context(prefix, context, vocab.eos_id))
    return EncodedExample(np.stack(contexts), np.array(response_ids, dtype=np.int64))


@dataclass
class Checkpoint:
    """Versioned container: JSON header plus raw float64 parameter bytes.

    Round-trips bit-exactly; rewriting the same state yields identical bytes.
    """

    model: ToyModel
    step: int
    config_hash: str
    rng_state: dict = field(default_factory=dict)

    MAGIC = b"SFTLABCK"
    VERSION = 1

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = [(name, np.ascontiguousarray(p, dtype=np.float64)) for name, p in self.model.named_params()]
        header = {
            "format_version": self.VERSION,
            "step": self.step,
            "config_hash": self.config_hash,
            "rng_state": self.rng_state,
            "vocab_chars": self.model.vocab.chars,
            "context": self.model.context,
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(self.VERSION.to_bytes(4, "little"))
            fh.write(len(header_bytes).to_bytes(8, "little"))
            fh.write(header_bytes)
            for _, a in arrays:
                fh.write(a.tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if raw[:8] != cls.MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        version = int.from_bytes(raw[8:12], "little")
        if version != cls.VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header_len = int.from_bytes(raw[12:20], "little")
        header = json.loads(raw[20 : 20 + header_len].decode("utf-8"))
        offset = 20 + header_len
        params = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype=np.float64, count=count, offset=offset).reshape(shape)
            params[spec["name"]] = arr.copy()
            offset += count * 8
        model = ToyModel(vocab=Vocab(header["vocab_chars"]), context=header["context"], **params)
        return cls(model=model, step=header["step"], config_hash=header["config_hash"], rng_state=header["rng_state"])


def train(model: ToyModel, corpus: Corpus, cfg: TrainConfig) -> tuple[Checkpoint, list[TraceRow]]:
    """Minibatch SGD with decoupled weight decay (weights only, never biases).

    The input model is left untouched; the trained copy comes back inside the
    checkpoint. Batches are drawn from a seeded reshuffled stream, losses are
    the mean over examples of each example's per-position mean, and a
    non-finite loss aborts with the failing step.
    """
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    encoded = [encode_example(model.vocab, ex, model.context) for ex in corpus.examples]
    cfg_hash = config_hash(cfg.to_dict())
    trace: list[TraceRow] = []

    order = rng.permutation(len(encoded))
    cursor = 0

    def next_batch():
        nonlocal order, cursor
        picked = []
        while len(picked) < cfg.batch_size:
            if cursor == len(order):
                order = rng.permutation(len(encoded))
                cursor = 0
            picked.append(int(order[cursor]))
            cursor += 1
        return picked

    velocity = Gradients.zeros_like(model) if cfg.momentum > 0 else None
    decayed = {"embed", "w_hidden", "w_out"}

    for step in range(cfg.total_steps):
        lr = schedule_lr(step, cfg)
        batch = [encoded[i] for i in next_batch()]
        contexts = np.concatenate([b.contexts for b in batch])
        logits, cache = forward_batch(model, contexts)
        if not np.all(np.isfinite(logits)):
            # parameters overflowed on an earlier update; the per-token losses
            # themselves are bounded by the log floor and cannot signal this
            raise TrainingDivergedError(step, f"non-finite logits at step {step}")
        dlogits = np.zeros_like(logits)
        loss = 0.0
        row = 0
        inv_batch = 1.0 / len(batch)
        for b in batch:
            length = len(b.targets)
            weight = inv_batch / length
            for j in range(length):
                result = token_loss(
                    logits[row],
                    Target.one_hot(int(b.targets[j])),
                    cfg.objective,
                    position=j + 1,
                    length=length,
                )
                loss += result.value * weight
                dlogits[row] = result.grad * weight
                row += 1
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, f"non-finite loss at step {step}")
        grads = backward_batch(model, cache, dlogits)
        for name, param in model.named_params():
            g = getattr(grads, name)
            if velocity is not None:
                v = getattr(velocity, name)
                v *= cfg.momentum
                v += g
                g = v
            param -= lr * g
            if cfg.weight_decay > 0 and name in decayed:
                param -= lr * cfg.weight_decay * param
        trace.append(TraceRow(step, float(loss), float(lr)))

    checkpoint = Checkpoint(
        model=model,
        step=cfg.total_steps,
        config_hash=cfg_hash,
        rng_state=copy.deepcopy(rng.bit_generator.state),
    )
    return checkpoint, trace


def synth_diversity_corpus(table, samples_per_prompt: int, seed: int) -> tuple[Corpus, dict]:
    """Sample a corpus from per-prompt response frequency tables.

    table maps prompt -> {response: frequency}; each prompt's frequencies must
    be non-negative and sum to 1 within 1e-9. Returns the sampled corpus and
    the ground-truth table for later comparison against probe output.
    """
    if samples_per_prompt < 1:
        raise ValueError(f"samples_per_prompt must be >= 1, got {samples_per_prompt}")
    rng = np.random.default_rng(seed)
    examples = []
    truth = {}
    for prompt, freqs in table.items():
        responses = list(freqs.keys())
        weights = np.array([float(freqs[r]) for r in responses])
        if np.any(weights < 0):
            raise ValueError(f"negative frequency for prompt {prompt!r}")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"frequencies for prompt {prompt!r} sum to {weights.sum()}, expected 1")
        draws = rng.choice(len(responses), size=samples_per_prompt, p=weights)
        for d in draws:
            examples.append(CorpusExample(prompt, responses[int(d)]))
        truth[prompt] = {r: float(f) for r, f in freqs.items()}
    return Corpus(examples), truth


@dataclass(frozen=True)
class ProbeResult:
    """First-response-token probabilities over declared valid answers, plus the
    mass the model assigns to everything else."""

    probabilities: dict[str, float]
    tail_mass: float

    def argmax_token(self) -> str:
        return max(self.probabilities, key=self.probabilities.get)


def probe_token_distribution(model: ToyModel, prompt: str, valid_tokens) -> ProbeResult:
    """Probability the model puts on each single-character answer right after
    the prompt. Deterministic: no sampling involved."""
    valid = list(valid_tokens)
    if not valid:
        raise ValueError("need at least one valid token")
    for tok in valid:
        if len(tok) != 1:
            raise ValueError(f"valid tokens must be single characters, got {tok!r}")
    ids = [model.vocab.encode(tok)[0] for tok in valid]
    context = model.vocab.encode(prompt) if prompt else [model.vocab.eos_id]
    p = np.exp(log_softmax(forward(model, context)))
    probabilities = {tok: float(p[i]) for tok, i in zip(valid, ids)}
    return ProbeResult(probabilities, float(1.0 - sum(probabilities.values())))
