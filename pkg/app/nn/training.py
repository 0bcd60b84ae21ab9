"""Training loop, prediction and the architecture sweep.

Per epoch the training records are oversampled to equal class counts, every draw
gets a fresh random crop, and the parameters with the best validation accuracy
so far are kept.
"""

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import AllZeroSignal, DatasetIOError, SignalTooShort, UnlabeledData
from ..preprocessing import center_crop, normalize, power_spectrum, random_crop, window_samples
from ..signals import LABEL_ORDER, Dataset, EgmSignal, Label, LabeledSignal
from .checkpoint import Checkpoint
from .layers import softmax, softmax_cross_entropy
from .network import Network, NetworkConfig, build_network
from .optim import OptimizerState, adam_step

logger = logging.getLogger(__name__)

EPOCH_LOG_COLUMNS = ["epoch", "train_loss", "train_acc", "val_acc"]
SWEEP_VARIANTS = {
    "egm_lstm": {"tail_lstm": True, "fft_branch": False},
    "egm_gap": {"tail_lstm": False, "fft_branch": False},
    "egm_fft_lstm": {"tail_lstm": True, "fft_branch": True},
    "egm_fft_gap": {"tail_lstm": False, "fft_branch": True},
}


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(100, ge=1)
    batch_size: int = Field(32, ge=1)
    seed: int = Field(0, description="Seeds initialisation, oversampling, crops and dropout")
    crop_window_ms: float = Field(1500.0, gt=0)
    oversample: bool = Field(True, description="Balance classes every epoch by sampling with replacement")
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    check_finite: bool = Field(False, description="Fail fast on NaN or infinity in any pass")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    is_best: bool = False


@dataclass
class FitResult:
    checkpoint: Checkpoint
    history: List[EpochLog] = field(default_factory=list)


def balanced_indices(labels: Sequence[Label], rng: np.random.Generator) -> np.ndarray:
    """Every record once, plus draws with replacement until each present class has the majority count."""
    by_class: Dict[Label, np.ndarray] = {}
    for label in LABEL_ORDER:
        idx = np.flatnonzero(np.array([lab == label for lab in labels], dtype=bool))
        if idx.size:
            by_class[label] = idx
    majority = max(idx.size for idx in by_class.values())
    chosen = []
    for idx in by_class.values():
        chosen.append(idx)
        if idx.size < majority:
            chosen.append(rng.choice(idx, size=majority - idx.size, replace=True))
    return rng.permutation(np.concatenate(chosen))


def _normalized_samples(signal: EgmSignal) -> np.ndarray:
    try:
        return normalize(signal).samples
    except AllZeroSignal:
        # a flat crop carries no activation; feed it as zeros
        return np.zeros(len(signal))


def prepare_inputs(
    signals: Iterable[EgmSignal],
    config: NetworkConfig,
    crop_window_ms: float,
    rng: Optional[np.random.Generator] = None,
):
    """Crop (random when ``rng`` is given, centred otherwise), normalise, and build the optional spectra.

    Returns ``(egm, fft)`` arrays shaped (B, L, 1); ``fft`` is None without an FFT branch.
    """
    egm, fft = [], []
    for signal in signals:
        crop = random_crop(signal, crop_window_ms, rng) if rng is not None else center_crop(signal, crop_window_ms)
        samples = _normalized_samples(crop)
        egm.append(samples)
        if config.fft_branch:
            power = power_spectrum(samples).power
            if config.fft_normalize and power.max() > 0:
                power = power / power.max()
            fft.append(power)
    egm_batch = np.asarray(egm, dtype=np.float32)[:, :, None]
    fft_batch = np.asarray(fft, dtype=np.float32)[:, :, None] if config.fft_branch else None
    return egm_batch, fft_batch


def _check_records(records: Sequence[LabeledSignal], crop_window_ms: float, what: str) -> None:
    for record in records:
        if record.label is None:
            raise UnlabeledData(f"{what} record {record.signal_id} has no label")
        signal = record.signal
        if len(signal) < window_samples(crop_window_ms, signal.sampling_rate):
            raise SignalTooShort(f"{what} record {record.signal_id} is shorter than {crop_window_ms:.0f} ms")


def _predict_indices(net: Network, signals: Sequence[EgmSignal], crop_window_ms: float, batch_size: int) -> np.ndarray:
    predictions = []
    for start in range(0, len(signals), batch_size):
        egm, fft = prepare_inputs(signals[start : start + batch_size], net.config, crop_window_ms)
        # argmax keeps the lowest class index on ties
        predictions.append(np.argmax(net.predict_proba(egm, fft), axis=1))
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def fit(
    train: Dataset,
    val: Dataset,
    net_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    log_path: Optional[os.PathLike] = None,
) -> FitResult:
    """Train with Adam and return the checkpoint of the best validation epoch (earliest on ties).

    Raises:
        UnlabeledData: if a training or validation record has no label
        SignalTooShort: if a record is shorter than the crop window
    """
    train_records = list(train.records)
    val_records = list(val.records)
    _check_records(train_records, train_cfg.crop_window_ms, "Training")
    _check_records(val_records, train_cfg.crop_window_ms, "Validation")
    if not train_records:
        raise UnlabeledData("No training records")

    rng = np.random.default_rng(train_cfg.seed)
    params = build_network(net_cfg, rng)
    net = Network(net_cfg, params, check_finite=train_cfg.check_finite)
    state = OptimizerState(
        lr=train_cfg.learning_rate, beta1=train_cfg.beta1, beta2=train_cfg.beta2, epsilon=train_cfg.epsilon
    )
    labels = [record.label for record in train_records]
    targets = np.array([label.index for label in labels])
    val_signals = [record.signal for record in val_records]
    val_targets = np.array([record.label.index for record in val_records])

    history: List[EpochLog] = []
    best: Optional[Checkpoint] = None
    for epoch in range(1, train_cfg.epochs + 1):
        order = balanced_indices(labels, rng) if train_cfg.oversample else rng.permutation(len(train_records))
        loss_sum, correct = 0.0, 0
        for start in range(0, order.size, train_cfg.batch_size):
            batch = order[start : start + train_cfg.batch_size]
            egm, fft = prepare_inputs([train_records[i].signal for i in batch], net_cfg, train_cfg.crop_window_ms, rng)
            logits = net.forward(egm, fft, training=True, rng=rng)
            loss, grad = softmax_cross_entropy(logits, targets[batch])
            params.zero_grads()
            net.backward(grad.astype(logits.dtype))
            adam_step(params.trainable_tensors(), params.grads, state)
            loss_sum += loss * batch.size
            correct += int(np.sum(np.argmax(logits, axis=1) == targets[batch]))

        predicted = _predict_indices(net, val_signals, train_cfg.crop_window_ms, train_cfg.batch_size)
        val_acc = float(np.mean(predicted == val_targets)) if val_targets.size else 0.0
        is_best = best is None or val_acc > best.best_validation_accuracy
        if is_best:
            best = Checkpoint(net_cfg, params.copy(), val_acc, epoch)
        entry = EpochLog(epoch, loss_sum / order.size, correct / order.size, val_acc, is_best)
        history.append(entry)
        logger.info(
            "epoch %d train_loss %.4f train_acc %.4f val_acc %.4f%s",
            epoch,
            entry.train_loss,
            entry.train_acc,
            entry.val_acc,
            " (best)" if is_best else "",
        )
        if log_path is not None:
            write_epoch_log(history, log_path)

    return FitResult(checkpoint=best, history=history)


def write_epoch_log(history: Sequence[EpochLog], path: os.PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(EPOCH_LOG_COLUMNS)
            for entry in history:
                writer.writerow([entry.epoch, repr(entry.train_loss), repr(entry.train_acc), repr(entry.val_acc)])
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}") from e


def predict_proba(
    checkpoint: Checkpoint, signals: Sequence[EgmSignal], crop_window_ms: float = 1500.0, batch_size: int = 32
) -> np.ndarray:
    net = Network(checkpoint.config, checkpoint.params)
    outputs = []
    for start in range(0, len(signals), batch_size):
        egm, fft = prepare_inputs(signals[start : start + batch_size], checkpoint.config, crop_window_ms)
        outputs.append(softmax(net.forward(egm, fft, training=False)))
    return np.concatenate(outputs) if outputs else np.zeros((0, checkpoint.config.n_classes))


def labels_from_probabilities(probabilities: np.ndarray) -> List[Label]:
    """Argmax per row; the lowest class index wins ties."""
    return [Label.from_index(i) for i in np.argmax(np.asarray(probabilities), axis=1)]


def predict(
    checkpoint: Checkpoint, signals: Sequence[EgmSignal], crop_window_ms: float = 1500.0, batch_size: int = 32
) -> List[Label]:
    """Eval-mode labels from a centre crop of each signal.

    Raises:
        SignalTooShort: if a signal is shorter than the crop window
    """
    return labels_from_probabilities(predict_proba(checkpoint, signals, crop_window_ms, batch_size))


@dataclass
class SweepRow:
    n_stages: int
    accuracies: Dict[str, float] = field(default_factory=dict)
    best_epochs: Dict[str, int] = field(default_factory=dict)


def sweep(
    train: Dataset,
    val: Dataset,
    base_cfg: NetworkConfig,
    train_cfg: TrainConfig,
    stages: Sequence[int],
    variants: Optional[Sequence[str]] = None,
) -> List[SweepRow]:
    """Best validation accuracy for every (stage count, variant) pair."""
    variants = list(variants or SWEEP_VARIANTS)
    rows = []
    for n_stages in stages:
        row = SweepRow(n_stages)
        for variant in variants:
            fields = {**base_cfg.model_dump(), **SWEEP_VARIANTS[variant], "n_stages": n_stages}
            cfg = NetworkConfig.create(**fields)
            logger.info("Sweep: N=%d variant %s", n_stages, variant)
            result = fit(train, val, cfg, train_cfg)
            row.accuracies[variant] = result.checkpoint.best_validation_accuracy
            row.best_epochs[variant] = result.checkpoint.epoch_of_best
        rows.append(row)
    return rows


def write_sweep_csv(rows: Sequence[SweepRow], path: os.PathLike, values: str = "accuracies") -> None:
    """Table with one row per stage count and one column per variant; ``values`` picks accuracies or best_epochs."""
    path = Path(path)
    columns = list(SWEEP_VARIANTS)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["n_stages", *columns])
            for row in rows:
                cells = getattr(row, values)
                writer.writerow([row.n_stages, *[_cell(cells.get(c)) for c in columns]])
    except OSError as e:
        raise DatasetIOError(f"Cannot write {path}: {e}") from e


def _cell(value) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)
