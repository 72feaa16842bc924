"""Mini-batch training of WDCNN with Adam and best-epoch checkpointing."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dsp import FeatureSet, NormStats
from .functional import bce_with_logits, bce_with_logits_grad
from .model import Network, WdcnnConfig, build_network, build_wdcnn
from .optim import AdamState, NonFiniteGradientError, adam_step

log = logging.getLogger(__name__)

BATCH_SIZES = (32, 64, 128)
LEARNING_RATES = (1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
MAX_EPOCHS = 10


@dataclass(frozen=True)
class HyperParams:
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = MAX_EPOCHS

    def to_dict(self):
        return asdict(self)


# tuned values for the in-repo model, per representation
TUNED = {
    "Time": HyperParams(32, 1e-4, 6),
    "Spectrum": HyperParams(32, 1e-3, 8),
    "PowerCepstrum": HyperParams(32, 1e-3, 6),
}


def hyper_grid(batch_sizes=BATCH_SIZES, learning_rates=LEARNING_RATES, max_epochs=MAX_EPOCHS) -> list[HyperParams]:
    return [HyperParams(b, lr, max_epochs) for b in batch_sizes for lr in learning_rates]


@dataclass
class TrainedModel:
    config: WdcnnConfig
    hyper: HyperParams
    params: np.ndarray
    buffers: np.ndarray
    norm_stats: NormStats | None
    seed: int
    epoch: int  # epoch whose parameters are kept (1-based)
    training_log: list[dict] = field(default_factory=list)
    _net: Network | None = field(default=None, repr=False, compare=False)

    def network(self) -> Network:
        if self._net is None:
            self._net = build_network(self.config, dtype=self.params.dtype)
            self._net.load_state(self.params, self.buffers)
        return self._net

    @property
    def n_params(self) -> int:
        return self.params.size

    def predict_logits(self, inputs: np.ndarray, batch_size: int = 512) -> np.ndarray:
        net = self.network()
        out = [net.forward(inputs[i : i + batch_size], training=False) for i in range(0, len(inputs), batch_size)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros((0, self.config.num_outputs))


def forward(model: Network, batch: np.ndarray, training: bool = False) -> np.ndarray:
    return model.forward(batch, training)


def backward(model: Network, batch: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Training-mode forward, then the exact gradient of the mean BCE loss."""
    logits = model.forward(batch, training=True)
    loss = bce_with_logits(logits, labels)
    grads = model.backward(bce_with_logits_grad(logits, labels))
    return loss, grads


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        idx = perm[i : i + batch_size]
        if idx.size < 2 and n >= 2:
            # batch norm needs at least two samples; a lone trailing sample is dropped
            continue
        yield idx


def train(features: FeatureSet, hyper: HyperParams, seed: int, validation: FeatureSet | None = None,
          config: WdcnnConfig | None = None, epochs: int | None = None) -> TrainedModel:
    """Train on normalized features.

    With ``validation``, parameters are checkpointed at the epoch with the
    highest validation macro AUROC (earliest epoch on ties).  Without it the
    model trains for exactly ``epochs`` (default ``hyper.max_epochs``) epochs.
    """
    from ..evaluation import macro_auroc, score  # local: evaluation imports this package

    if len(features) == 0:
        raise ValueError("no training inputs")
    if features.norm_stats is None:
        raise ValueError("training features must be normalized first")
    if config is None:
        config = WdcnnConfig(input_length=features.input_shape[-1], seed=seed)
    n_epochs = hyper.max_epochs if epochs is None else epochs
    net = build_wdcnn(config)
    state = AdamState.zeros_like(net.params)
    rng = np.random.default_rng([seed, 1])
    x_all = features.inputs
    y_all = features.labels.astype(np.float64)

    best = None
    history = []
    for epoch in range(1, n_epochs + 1):
        losses = []
        for idx in _batches(len(features), hyper.batch_size, rng):
            loss, grads = backward(net, x_all[idx], y_all[idx])
            try:
                adam_step(net.params, grads, state, hyper.learning_rate)
            except NonFiniteGradientError as exc:
                where = net.layer_of(int(exc.bad_indices[0]))
                raise NonFiniteGradientError(exc.bad_indices, f"epoch {epoch}, layer {where}") from exc
            losses.append(loss)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)) if losses else float("nan")}
        if validation is not None:
            tmp = TrainedModel(config, hyper, net.params, net.buffers, features.norm_stats, seed, epoch, _net=net)
            entry["val_macro_auroc"] = macro_auroc(score(tmp, validation))
            if best is None or entry["val_macro_auroc"] > best[0]:
                best = (entry["val_macro_auroc"], epoch, *net.state())
        history.append(entry)
        log.debug("epoch %d %s", epoch, entry)

    if best is not None:
        _, epoch, params, buffers = best
    else:
        epoch, (params, buffers) = n_epochs, net.state()
    return TrainedModel(config, hyper, params, buffers, features.norm_stats, seed, epoch, history)


# --------------------------------------------------------------------------- checkpoints
#
# b"CWRM" | uint32 LE header length | JSON header | padding to 8 | float32 LE
# parameters followed by float32 LE batch-norm running statistics.

CHECKPOINT_MAGIC = b"CWRM"


def save_checkpoint(path: str | Path, model: TrainedModel) -> None:
    header = {
        "format": "cwrubench-model/1",
        "config": model.config.to_dict(),
        "hyper": model.hyper.to_dict(),
        "norm_stats": model.norm_stats.to_dict() if model.norm_stats else None,
        "epoch": model.epoch,
        "seed": model.seed,
        "n_params": int(model.params.size),
        "n_buffers": int(model.buffers.size),
        "training_log": model.training_log,
    }
    blob = json.dumps(header).encode()
    pad = (-(8 + len(blob))) % 8
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<I", len(blob) + pad) + blob + b" " * pad)
        fh.write(model.params.astype("<f4").tobytes())
        fh.write(model.buffers.astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> TrainedModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, 4)
    h = json.loads(raw[8 : 8 + hlen])
    off = 8 + hlen
    params = np.frombuffer(raw, "<f4", h["n_params"], off).astype(np.float32)
    buffers = np.frombuffer(raw, "<f4", h["n_buffers"], off + 4 * h["n_params"]).astype(np.float32)
    stats = NormStats(**h["norm_stats"]) if h["norm_stats"] else None
    return TrainedModel(WdcnnConfig.from_dict(h["config"]), HyperParams(**h["hyper"]), params, buffers,
                        stats, h["seed"], h["epoch"], h["training_log"])
