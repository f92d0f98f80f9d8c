"""Self-supervised next-template training on normal sequences.

Sliding windows of length N_w with step 1 predict the template of the
following message. Mini-batches are shuffled with a seeded generator,
the batch loss is the mean per-sample cross-entropy, Adam with decoupled
weight decay takes one step per batch, and the attention state is
smoothed once per batch with the batch-mean raw attention. After each
epoch the mean validation cross-entropy decides early stopping; the best
epoch's parameters and attention state are what training returns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import UNSEEN_TEMPLATE_ID
from . import tensor as tz
from .errors import ArtifactError, TrainingDiverged
from .features import SemanticIndex
from .model import AttentionState, CSCLogModel, ModelConfig, update_attention_state
from .parser import ParsedMessage, ParsedSession
from .persist import decode_array, encode_array, read_json, write_json

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class WindowSample:
    window: tuple[ParsedMessage, ...]
    target: int  # template id of the message after the window (may be UNSEEN)
    origin: tuple[str, int]  # (session id, window offset)


def make_samples(sessions: Sequence[ParsedSession], window_length: int) -> list[WindowSample]:
    """Step-1 sliding windows; a session of length N yields max(0, N - N_w)."""
    if window_length < 1:
        raise ValueError(f"window length must be >= 1, got {window_length}")
    samples = []
    for session in sessions:
        msgs = session.messages
        for offset in range(len(msgs) - window_length):
            samples.append(
                WindowSample(
                    window=tuple(msgs[offset : offset + window_length]),
                    target=msgs[offset + window_length].template_id,
                    origin=(session.id, offset),
                )
            )
    return samples


def sample_loss(model: CSCLogModel, sample: WindowSample, state: AttentionState,
                training: bool = False, rng: np.random.Generator | None = None):
    """Cross-entropy of the forward distribution against the sample target."""
    if sample.target == UNSEEN_TEMPLATE_ID:
        raise ValueError("cannot take a loss against an UNSEEN target")
    out = model.forward(sample.window, state, training=training, rng=rng)
    return tz.cross_entropy(out.probs, sample.target), out


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 20
    patience: int | None = None  # default: half the epoch budget, rounded up
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, batch_size, and epochs must be positive")
        if self.patience is None:
            self.patience = math.ceil(0.5 * self.epochs)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "patience": self.patience,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
        }


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    param_arrays: dict[str, np.ndarray]  # best-epoch parameters
    state: AttentionState  # best-epoch attention state
    history: list[EpochStats]
    best_epoch: int
    stopped_early: bool
    diverged: bool = False


def _snapshot(model: CSCLogModel) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.params.items()}


def _restore(model: CSCLogModel, arrays: dict[str, np.ndarray]) -> None:
    for name, p in model.params.items():
        p.data = arrays[name].copy()


def validation_loss(model: CSCLogModel, samples: Sequence[WindowSample], state: AttentionState) -> float:
    """Mean cross-entropy over samples with in-vocabulary targets.

    Parameters and the attention state are read, never written. Returns nan
    when no sample is usable.
    """
    total = 0.0
    used = 0
    for sample in samples:
        if sample.target == UNSEEN_TEMPLATE_ID:
            continue
        loss, _ = sample_loss(model, sample, state, training=False)
        total += loss.item()
        used += 1
    return total / used if used else float("nan")


def train(
    model: CSCLogModel,
    samples: Sequence[WindowSample],
    val_samples: Sequence[WindowSample],
    config: TrainConfig,
) -> TrainResult:
    """Optimize in place and finish with the best-validation weights loaded.

    Raises TrainingDiverged (with the best result so far attached) as soon
    as a non-finite loss or gradient shows up. With no usable validation
    samples the train loss drives early stopping instead.
    """
    if not samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(config.seed)
    opt = tz.Adam(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    state = model.fresh_state()
    gamma = model.config.gamma

    history: list[EpochStats] = []
    best_loss = float("inf")
    best_epoch = 0
    best_params = _snapshot(model)
    best_state = state.copy()
    since_best = 0
    stopped_early = False

    def _finish(diverged: bool) -> TrainResult:
        _restore(model, best_params)
        return TrainResult(
            param_arrays=best_params,
            state=best_state.copy(),
            history=history,
            best_epoch=best_epoch,
            stopped_early=stopped_early,
            diverged=diverged,
        )

    n = len(samples)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        epoch_total = 0.0
        for start in range(0, n, config.batch_size):
            chunk = order[start : start + config.batch_size]
            opt.zero_grad()
            beta_tildes = []
            batch_total = 0.0
            try:
                for idx in chunk:
                    loss, out = sample_loss(model, samples[int(idx)], state, training=True, rng=rng)
                    scaled = tz.mul(loss, tz.Tensor(1.0 / len(chunk)))
                    scaled.backward()
                    batch_total += loss.item()
                    beta_tildes.append(out.beta_tilde)
                if not math.isfinite(batch_total):
                    raise ValueError("non-finite batch loss")
                opt.step()
            except ValueError as exc:
                log.error("training diverged at epoch %d: %s", epoch, exc)
                raise TrainingDiverged(str(exc)) from exc
            update_attention_state(state, beta_tildes, gamma)
            epoch_total += batch_total
        train_loss = epoch_total / n
        val_loss = validation_loss(model, val_samples, state)
        criterion = train_loss if math.isnan(val_loss) else val_loss
        history.append(EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        log.info("epoch %d: train %.6f val %.6f", epoch, train_loss, val_loss)

        if criterion < best_loss:
            best_loss = criterion
            best_epoch = epoch
            best_params = _snapshot(model)
            best_state = state.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                stopped_early = True
                break

    return _finish(diverged=False)


def history_csv(history: Sequence[EpochStats]) -> str:
    lines = ["epoch,train_loss,val_loss"]
    lines.extend(f"{h.epoch},{h.train_loss!r},{h.val_loss!r}" for h in history)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path,
    model: CSCLogModel,
    state: AttentionState,
    train_config: TrainConfig,
    store_hash: str,
) -> None:
    """Exact round-trip container: every tensor bit-for-bit, the attention
    state, both configs, and the template-store fingerprint."""
    payload = {
        "version": CHECKPOINT_VERSION,
        "store_hash": store_hash,
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict(),
        "attention_state": state.to_dict(),
        "params": {name: encode_array(p.data) for name, p in model.params.items()},
    }
    write_json(path, payload)


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: dict
    state: AttentionState
    param_arrays: dict[str, np.ndarray]
    store_hash: str


def load_checkpoint(path, expected_store_hash: str | None = None) -> Checkpoint:
    payload = read_json(path)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ArtifactError(f"unsupported checkpoint version {payload.get('version')!r}")
    if expected_store_hash is not None and payload["store_hash"] != expected_store_hash:
        raise ArtifactError(
            "checkpoint was trained against a different template store "
            f"({payload['store_hash'][:12]}... != {expected_store_hash[:12]}...)"
        )
    return Checkpoint(
        model_config=ModelConfig.from_dict(payload["model_config"]),
        train_config=payload["train_config"],
        state=AttentionState.from_dict(payload["attention_state"]),
        param_arrays={name: decode_array(rec) for name, rec in payload["params"].items()},
        store_hash=payload["store_hash"],
    )


def restore_model(checkpoint: Checkpoint, index: SemanticIndex) -> CSCLogModel:
    """Rebuild a model from checkpoint arrays over a freshly built semantic index."""
    model = CSCLogModel(checkpoint.model_config, index, seed=0)
    expected = set(model.params)
    got = set(checkpoint.param_arrays)
    if expected != got:
        raise ArtifactError(f"checkpoint parameters do not match the architecture: {sorted(expected ^ got)}")
    for name, p in model.params.items():
        arr = checkpoint.param_arrays[name]
        if arr.shape != p.data.shape:
            raise ArtifactError(f"checkpoint tensor {name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.copy()
    return model
