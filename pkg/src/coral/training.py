"""Adam-based NLL training loop with seeded determinism and checkpointing.

Loss per step is the token-pooled mean NLL over the batch's masked (target)
positions. Batches are processed one example at a time: each example's
forward/backward runs on its own tape with the loss pre-scaled by its share
of the batch's target tokens, so gradients accumulate to exactly the pooled
batch gradient. This is mathematically identical to padded batching with
padded positions excluded from loss and attention, without needing either.

Checkpoint file layout (all integers little-endian):

    magic "CORALCKPT" | u32 version | u32 header length | header JSON (utf-8)
    then per-tensor records until EOF:
    u32 name length | name (utf-8) | u32 rank | u64 dims... | f32 data (row-major)

The header JSON carries the model config, train config, step counter, loss
history, and the vocabulary hash. Tensor payloads are stored as f32; the
round-trip contract is bit-exactness at that stored precision.
"""

from __future__ import annotations

import json
import math
import os
import struct
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .data import TrainingExample
from .model import DecoderWeights, ModelConfig
from .tensor import Tensor

CHECKPOINT_MAGIC = b"CORALCKPT"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Checkpoint bytes do not parse; the message names the missing section."""


class UnsupportedVersionError(CheckpointFormatError):
    """Checkpoint was written by an unknown format version."""


class NonFiniteGradientError(RuntimeError):
    def __init__(self, name: str, norm: float):
        super().__init__(f"non-finite gradient for parameter {name!r} (norm={norm})")
        self.name = name
        self.norm = norm


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    adam_eps: float = 1e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 4
    epochs: int = 3
    seed: int = 0
    grad_clip_norm: float | None = None
    loss_on_context: bool = False
    max_steps: int | None = None

    def __post_init__(self):
        # zero is allowed so a frozen-weights sanity run stays expressible
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(weights: DecoderWeights) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p.data) for name, p in weights.named()},
        v={name: np.zeros_like(p.data) for name, p in weights.named()},
    )


def adam_step(
    weights: DecoderWeights,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update, in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name, float(np.linalg.norm(g)))
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name, p in weights.named():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise T.ShapeError(
                f"adam_step: gradient shape {g.shape} does not match parameter "
                f"{name!r} of shape {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)


def example_loss(
    weights: DecoderWeights,
    ex: TrainingExample,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    loss_on_context: bool = False,
) -> tuple[Tensor, int]:
    """Masked next-token NLL for one example: forward on ids[:-1], targets
    ids[1:]. Returns (mean-NLL tensor, number of target tokens)."""
    ids = ex.input_ids
    logits = M.forward(weights, ids[:-1], train_mode=train_mode, rng=rng)
    targets = ids[1:]
    if loss_on_context:
        mask = [True] * len(targets)
    else:
        mask = ex.loss_mask[1:]
    n = sum(mask)
    return T.cross_entropy_masked(logits, targets, mask), n


@dataclass
class Checkpoint:
    version: int
    model_config: ModelConfig
    train_config: TrainConfig
    step: int
    loss_history: list[float]
    vocab_hash: str
    tensors: dict[str, np.ndarray]  # f32, canonical model order

    def to_weights(self) -> DecoderWeights:
        tensors = {
            name: Tensor(arr.astype(np.float64), requires_grad=True)
            for name, arr in self.tensors.items()
        }
        return DecoderWeights(self.model_config, tensors)


def make_checkpoint(
    weights: DecoderWeights,
    train_config: TrainConfig,
    step: int,
    loss_history: list[float],
    vocab_hash: str = "",
) -> Checkpoint:
    return Checkpoint(
        version=CHECKPOINT_VERSION,
        model_config=weights.config,
        train_config=train_config,
        step=step,
        loss_history=list(loss_history),
        vocab_hash=vocab_hash,
        tensors={name: p.data.astype(np.float32) for name, p in weights.named()},
    )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_history: list[float]
    aborted: bool = False
    abort_reason: str = ""


def _clip_grads(grads: dict[str, np.ndarray], clip_norm: float) -> None:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > clip_norm and total > 0:
        factor = clip_norm / total
        for g in grads.values():
            g *= factor


def train(
    weights: DecoderWeights,
    examples: list[TrainingExample],
    config: TrainConfig,
    vocab_hash: str = "",
    checkpoint_dir: str | None = None,
) -> TrainResult:
    """Run the fine-tuning loop. Deterministic for a fixed seed: shuffle
    order and dropout masks all derive from it.

    Stops after ``config.epochs`` passes, or earlier at ``config.max_steps``
    optimizer steps. A non-finite loss or gradient aborts training before
    the bad update is applied, so the returned checkpoint holds the last
    good weights. With checkpoint_dir set, one checkpoint is written per
    epoch plus the final one.
    """
    if not examples:
        raise ValueError("train: examples must be non-empty")
    for ex in examples:
        if len(ex.input_ids) > weights.config.max_seq_len:
            raise ValueError(
                f"train: example of length {len(ex.input_ids)} exceeds "
                f"max_seq_len {weights.config.max_seq_len}"
            )

    rng = np.random.default_rng(config.seed)
    params = dict(weights.named())
    state = init_adam_state(weights)
    history: list[float] = []
    aborted = False
    reason = ""
    step = 0

    def save_epoch(tag: str):
        if checkpoint_dir is not None:
            ckpt = make_checkpoint(weights, config, step, history, vocab_hash)
            save_checkpoint(ckpt, os.path.join(checkpoint_dir, f"checkpoint-{tag}.ckpt"))

    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(examples), config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            batch = [examples[i] for i in order[start : start + config.batch_size]]
            T.zero_grads(params.values())
            # pooled weighting: target-token counts are known from the masks
            total = sum(
                len(ex.input_ids) - 1 if config.loss_on_context else sum(ex.loss_mask[1:])
                for ex in batch
            )
            batch_loss = 0.0
            bad = False
            for ex in batch:
                with T.Tape():
                    loss, n = example_loss(
                        weights, ex, train_mode=True, rng=rng,
                        loss_on_context=config.loss_on_context,
                    )
                    contrib = T.scale(loss, n / total)
                    if not np.isfinite(contrib.item()):
                        bad = True
                        break
                    T.backward(contrib)
                batch_loss += contrib.item()
            if bad:
                aborted = True
                reason = "non-finite loss"
                break
            try:
                grads = {name: p.grad for name, p in params.items() if p.grad is not None}
                if config.grad_clip_norm is not None:
                    _clip_grads(grads, config.grad_clip_norm)
                adam_step(weights, grads, state, config)
            except NonFiniteGradientError as e:
                aborted = True
                reason = str(e)
                break
            history.append(batch_loss)
            step += 1
        if aborted or (config.max_steps is not None and step >= config.max_steps):
            if not aborted:
                save_epoch(f"epoch{epoch + 1}")
            break
        save_epoch(f"epoch{epoch + 1}")

    T.zero_grads(params.values())
    final = make_checkpoint(weights, config, step, history, vocab_hash)
    if checkpoint_dir is not None:
        save_checkpoint(final, os.path.join(checkpoint_dir, "checkpoint-final.ckpt"))
    return TrainResult(checkpoint=final, loss_history=history, aborted=aborted, abort_reason=reason)


# ---------------------------------------------------------------------------
# checkpoint serialization


def _header_json(ckpt: Checkpoint) -> bytes:
    header = {
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config),
        "step": ckpt.step,
        "loss_history": ckpt.loss_history,
        "vocab_hash": ckpt.vocab_hash,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    header = _header_json(ckpt)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", ckpt.version))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for name, arr in ckpt.tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            for dim in data.shape:
                f.write(struct.pack("<Q", dim))
            f.write(data.tobytes())


def _read_exact(f, n: int, section: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint: unexpected EOF reading {section}")
    return buf


def load_checkpoint(path: str, vocab_hash: str | None = None) -> Checkpoint:
    """Parse a checkpoint file. If vocab_hash is given and differs from the
    stored one, a warning is issued (the load still succeeds)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise UnsupportedVersionError(
                f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "json header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointFormatError(f"unparseable json header: {e}") from e
        for key in ("model_config", "train_config", "step", "loss_history", "vocab_hash"):
            if key not in header:
                raise CheckpointFormatError(f"json header missing section {key!r}")

        tensors: dict[str, np.ndarray] = {}
        while True:
            lead = f.read(4)
            if lead == b"":
                break
            if len(lead) != 4:
                raise CheckpointFormatError("truncated checkpoint: unexpected EOF reading tensor name length")
            (nlen,) = struct.unpack("<I", lead)
            name = _read_exact(f, nlen, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"rank of tensor {name!r}"))
            dims = struct.unpack(
                "<" + "Q" * rank, _read_exact(f, 8 * rank, f"dims of tensor {name!r}")
            )
            count = math.prod(dims) if dims else 1
            raw = _read_exact(f, 4 * count, f"data of tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()

    model_config = ModelConfig(**header["model_config"])
    expected = [name for name, _ in M.tensor_shapes(model_config)]
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise CheckpointFormatError(f"checkpoint missing tensor section(s): {missing}")

    ckpt = Checkpoint(
        version=version,
        model_config=model_config,
        train_config=TrainConfig(**header["train_config"]),
        step=int(header["step"]),
        loss_history=[float(x) for x in header["loss_history"]],
        vocab_hash=header["vocab_hash"],
        tensors=tensors,
    )
    if vocab_hash is not None and ckpt.vocab_hash and vocab_hash != ckpt.vocab_hash:
        warnings.warn(
            f"checkpoint vocabulary hash {ckpt.vocab_hash[:12]}... does not match "
            f"the provided vocabulary ({vocab_hash[:12]}...)",
            stacklevel=2,
        )
    return ckpt
