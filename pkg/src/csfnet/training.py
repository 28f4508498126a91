"""Training loop, evaluation, checkpoints and the ablation matrix."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data import FollowupDataset
from .metrics import MetricsReport, evaluate_scores
from .model import AblationFlags, CSFNet, ModelConfig
from .optim import Adam
from .spatial import BackboneConfig
from .storage import read_tensor, write_tensor
from .tensor import Tensor, cross_entropy

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "csfnet-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


def _strict(cls, d: dict, what: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown {what} keys: {', '.join(unknown)}")
    return d


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 4
    lr_step: int = 20
    lr_decay: float = 0.5
    seed: int = 0
    threshold: float = 0.5
    use_t0: bool = True
    use_t1: bool = True
    use_clinical: bool = True
    use_cmaf: bool = True
    use_trf: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        self.flags  # validates the ablation combination

    @property
    def flags(self) -> AblationFlags:
        return AblationFlags(self.use_t0, self.use_t1, self.use_clinical, self.use_cmaf, self.use_trf)

    def with_flags(self, flags: AblationFlags) -> "TrainConfig":
        return replace(self, **asdict(flags))

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        """200 epochs on 16x64x64 ROIs."""
        model = ModelConfig(backbone=BackboneConfig(input_shape=(16, 64, 64)))
        return cls(**{"epochs": 200, "model": model, **overrides})

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(_strict(cls, d, "config"))
        if "model" in d:
            m = dict(_strict(ModelConfig, d["model"], "model"))
            if "backbone" in m:
                m["backbone"] = BackboneConfig(**_strict(BackboneConfig, m["backbone"], "backbone"))
            d["model"] = ModelConfig(**m)
        return cls(**d)


@dataclass
class TrainResult:
    model: CSFNet
    loss_curve: list[float]
    initial_loss: float
    val_auc: list[float | None]
    best_epoch: int


def build_model(config: TrainConfig) -> CSFNet:
    return CSFNet(config.model, config.flags, seed=config.seed)


def _batch_inputs(model: CSFNet, dataset: FollowupDataset, idx) -> tuple:
    fl = model.flags
    dtype = model.head.fc1.weight.dtype
    t0 = Tensor(dataset.volumes(idx, "t0").astype(dtype)) if fl.use_t0 else None
    t1 = Tensor(dataset.volumes(idx, "t1").astype(dtype)) if fl.use_t1 else None
    clinical = dataset.clinical(idx).astype(dtype) if fl.use_clinical else None
    return t0, t1, clinical


def predict(model: CSFNet, dataset: FollowupDataset, indices, batch_size: int = 8) -> np.ndarray:
    """Malignancy probabilities for the given case indices."""
    out = []
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        out.append(model.predict_proba(*_batch_inputs(model, dataset, idx)))
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model: CSFNet, dataset: FollowupDataset, split: str = "test", threshold: float = 0.5) -> MetricsReport:
    indices = dataset.split_indices(split)
    if not indices:
        raise ValueError(f"split {split!r} is empty")
    return evaluate_scores(predict(model, dataset, indices), dataset.labels(indices), threshold)


def _mean_loss(model: CSFNet, dataset: FollowupDataset, indices, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(indices), batch_size):
        idx = indices[start:start + batch_size]
        loss = cross_entropy(model(*_batch_inputs(model, dataset, idx)), dataset.labels(idx))
        total += float(loss.data) * len(idx)
    return total / len(indices)


def train(config: TrainConfig, dataset: FollowupDataset) -> TrainResult:
    """Adam on cross-entropy; returns the checkpoint with the best validation AUC.

    Without a usable validation split (empty or single-class) the final epoch
    is kept.
    """
    train_idx = dataset.split_indices("train")
    labels = dataset.labels(train_idx)
    if not (labels == 1).any() or not (labels == 0).any():
        raise ValueError("training split needs both classes")
    val_idx = dataset.split_indices("val")
    val_usable = len(set(dataset.labels(val_idx).tolist())) == 2

    model = build_model(config)
    opt = Adam(model.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps,
               lr_step=config.lr_step, lr_decay=config.lr_decay)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EA1]))
    initial_loss = _mean_loss(model, dataset, train_idx, config.batch_size)

    loss_curve: list[float] = []
    val_auc: list[float | None] = []
    best_auc, best_epoch, best_state = -math.inf, config.epochs - 1, None
    for epoch in range(config.epochs):
        opt.set_epoch(epoch)
        order = [train_idx[i] for i in shuffle_rng.permutation(len(train_idx))]
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = cross_entropy(model(*_batch_inputs(model, dataset, idx)), dataset.labels(idx))
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, value)
            loss.backward()
            opt.step()
            opt.zero_grad()
            # relu hides NaN weights from the loss, so check the parameters too
            if not all(np.isfinite(p.data).all() for p in opt.params):
                raise TrainingDiverged(epoch, math.nan)
            total += value * len(idx)
        loss_curve.append(total / len(order))
        auc = None
        if val_usable:
            auc = evaluate(model, dataset, "val", config.threshold).auc
            if auc is not None and auc > best_auc:
                best_auc, best_epoch, best_state = auc, epoch, model.state_dict()
        val_auc.append(auc)
        logger.info("epoch %d loss %.5f val_auc %s lr %.2e", epoch, loss_curve[-1], auc, opt.lr)
    if best_state is not None:
        model.load_state_dict(best_state)
    return TrainResult(model, loss_curve, initial_loss, val_auc, best_epoch)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(directory, model: CSFNet, config: TrainConfig, metrics: dict | None = None) -> Path:
    """Write ``checkpoint.json`` plus one tensor file per parameter (flattened, shape kept in the index)."""
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    index = []
    for name, p in model.named_parameters():
        rel = f"params/{name}.csfv"
        write_tensor(directory / rel, p.data.reshape(-1, 1, 1))
        index.append({"name": name, "shape": list(p.shape), "file": rel})
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": config.seed,
        "config": config.to_dict(),
        "parameters": index,
        "metrics": metrics or {},
    }
    path = directory / "checkpoint.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(directory) -> tuple[CSFNet, TrainConfig, dict]:
    directory = Path(directory)
    path = directory / "checkpoint.json" if directory.is_dir() else directory
    directory = path.parent
    doc = json.loads(path.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} csfnet checkpoint")
    config = TrainConfig.from_dict(doc["config"])
    model = build_model(config)
    state = {}
    for entry in doc["parameters"]:
        arr = read_tensor(directory / entry["file"], what=entry["name"])
        state[entry["name"]] = arr.reshape(entry["shape"])
    model.load_state_dict(state)
    return model, config, doc.get("metrics", {})


# ---------------------------------------------------------------------------
# ablation matrix
# ---------------------------------------------------------------------------

ABLATION_ROWS: dict[str, AblationFlags] = {
    "t0 image": AblationFlags(use_t0=True, use_t1=False, use_clinical=False, use_cmaf=False, use_trf=False),
    "t0 image+clinical": AblationFlags(use_t0=True, use_t1=False, use_clinical=True, use_cmaf=True, use_trf=False),
    "t1 image": AblationFlags(use_t0=False, use_t1=True, use_clinical=False, use_cmaf=False, use_trf=False),
    "t1 image+clinical": AblationFlags(use_t0=False, use_t1=True, use_clinical=True, use_cmaf=True, use_trf=False),
    "without CMAF+clinical": AblationFlags(use_t0=True, use_t1=True, use_clinical=False, use_cmaf=False, use_trf=True),
    "without temporal fusion": AblationFlags(use_t0=True, use_t1=True, use_clinical=True, use_cmaf=True, use_trf=False),
    "CSF-Net (full)": AblationFlags(),
}


def row_slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name.lower()).strip("_").replace("__", "_")


def _run_row(args) -> tuple[str, MetricsReport, list[float]]:
    name, config, dataset = args
    result = train(config, dataset)
    split = "test" if dataset.split_indices("test") else "val"
    return name, evaluate(result.model, dataset, split, config.threshold), result.loss_curve


def run_ablation(base_config: TrainConfig, dataset: FollowupDataset, rows: list[str] | None = None,
                 jobs: int = 1) -> dict[str, MetricsReport]:
    """Train and evaluate each ablation row on the same dataset and seed."""
    names = rows or list(ABLATION_ROWS)
    unknown = [n for n in names if n not in ABLATION_ROWS]
    if unknown:
        raise ValueError(f"unknown ablation rows {unknown}")
    tasks = [(n, base_config.with_flags(ABLATION_ROWS[n]), dataset) for n in names]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_row, tasks))
    else:
        results = [_run_row(t) for t in tasks]
    return {name: report for name, report, _ in results}
