"""Teacher pretraining, student training and hybrid distillation.

All three share one loop: shuffled mini-batches, AdamW, per-epoch validation,
early stopping on validation accuracy with the best weights restored, then a
final test evaluation. Randomness comes from three independent streams
spawned from the run seed (shuffle, augmentation, adapter init), so turning
the distillation weights to zero leaves the student's trajectory untouched.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import Tensor, cross_entropy, focal_loss, no_grad, softmax
from ..data.augment import make_augmenter
from ..data.splits import DatasetSplits
from ..errors import ConfigError, NumericError, TrainingError
from ..layers import Module
from ..metrics import EvalResult, evaluate
from ..models import StudentModel, TeacherModel
from ..optim import AdamW
from .alignment import ChannelAdapters, align, teacher_attention_to_spatial
from .config import DistillConfig
from .losses import loss_attn, loss_ce, loss_logit, loss_total

CSV_FIELDS = ["epoch", "loss_total", "loss_ce", "loss_logit", "loss_attn", "val_acc", "val_f1"]
EVAL_BATCH = 128


@dataclass
class EpochLog:
    epoch: int
    loss_total: float
    loss_ce: float
    loss_logit: float
    loss_attn: float
    val_acc: float
    val_f1: float


@dataclass
class TrainReport:
    kind: str
    config: Dict
    history: List[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    val: Dict = field(default_factory=dict)
    test: Dict = field(default_factory=dict)

    @property
    def test_accuracy(self) -> float:
        return self.test["accuracy"]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for e in self.history:
            w.writerow([e.epoch] + [f"{getattr(e, k):.6f}" for k in CSV_FIELDS[1:]])
        return buf.getvalue()

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "history": [asdict(e) for e in self.history],
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "val": self.val,
            "test": self.test,
        }

    def write(self, csv_path, json_path=None) -> None:
        with open(csv_path, "w", newline="") as f:
            f.write(self.csv_text())
        if json_path is not None:
            with open(json_path, "w") as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")


def rng_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """(shuffle, augment, adapter-init) generators, independent of each other."""
    return tuple(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))


def predict_proba(predict: Callable[[Tensor], Tensor], images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, images.shape[0], batch_size):
            logits = predict(Tensor(images[start : start + batch_size]))
            out.append(softmax(logits, axis=1).data.astype(np.float64))
    probs = np.concatenate(out, axis=0)
    return probs / probs.sum(axis=1, keepdims=True)


def evaluate_model(predict: Callable[[Tensor], Tensor], data: DatasetSplits, split: str) -> EvalResult:
    x, y = data.arrays(split)
    return evaluate(predict_proba(predict, x), y)


def student_logits(model: StudentModel) -> Callable[[Tensor], Tensor]:
    return lambda x: model(x)[0]


def teacher_logits(model: TeacherModel) -> Callable[[Tensor], Tensor]:
    return lambda x: model(x)[0]


def _snapshot(modules: Sequence[Module]) -> List[Dict[str, np.ndarray]]:
    return [m.state_dict() for m in modules]


def _restore(modules: Sequence[Module], states) -> None:
    for m, s in zip(modules, states):
        m.load_state_dict(s)


BatchLoss = Callable[[np.ndarray, np.ndarray, np.ndarray], Tuple[Tensor, Dict[str, float]]]


def _fit(
    kind: str,
    modules: Sequence[Module],
    predict: Callable[[Tensor], Tensor],
    batch_loss: BatchLoss,
    data: DatasetSplits,
    cfg: DistillConfig,
    shuffle_rng: np.random.Generator,
    augment_rng: np.random.Generator,
    log: Optional[Callable[[EpochLog], None]] = None,
) -> TrainReport:
    for split in ("train", "val", "test"):
        data.arrays(split)  # raises DataError on an empty split
    params = [p for m in modules for p in m.parameters() if p.requires_grad]
    o = cfg.optimizer
    opt = AdamW(params, lr=o.lr, betas=(o.beta1, o.beta2), eps=o.eps, weight_decay=o.weight_decay)
    augmenter = make_augmenter() if cfg.augment else None
    report = TrainReport(kind=kind, config=cfg.to_dict())
    best_acc, best_state, since_best = -1.0, None, 0

    for epoch in range(1, cfg.epochs + 1):
        sums = dict.fromkeys(CSV_FIELDS[1:5], 0.0)
        seen = 0
        for idx, x, y in data.batches("train", cfg.batch_size, shuffle_rng, augmenter, augment_rng):
            try:
                total, parts = batch_loss(idx, x, y)
            except NumericError as e:
                raise TrainingError(f"training diverged at epoch {epoch}: {e}") from e
            if not np.isfinite(total.data).all():
                raise TrainingError(f"training diverged at epoch {epoch}: loss is {float(total.data)}")
            opt.zero_grad()
            total.backward()
            opt.step()
            n = len(idx)
            seen += n
            sums["loss_total"] += float(total.data) * n
            for k, v in parts.items():
                sums[k] += v * n
        val = evaluate_model(predict, data, "val")
        entry = EpochLog(epoch, *(sums[k] / seen for k in CSV_FIELDS[1:5]), val.accuracy, val.f1_macro)
        report.history.append(entry)
        if log is not None:
            log(entry)
        if val.accuracy > best_acc:
            best_acc, best_state, since_best = val.accuracy, _snapshot(modules), 0
            report.best_epoch = epoch
        else:
            since_best += 1
        report.stopped_epoch = epoch
        if since_best >= cfg.early_stop_patience:
            break

    _restore(modules, best_state)
    report.val = evaluate_model(predict, data, "val").to_dict(with_confusion=True)
    report.test = evaluate_model(predict, data, "test").to_dict(with_confusion=True)
    return report


def _check_classes(data: DatasetSplits, *models) -> None:
    for m in models:
        if m.config.n_classes != data.n_classes:
            raise ConfigError(f"{m.config.arch} has {m.config.n_classes} classes, dataset has {data.n_classes}")
        if m.config.image_size != data.image_size:
            raise ConfigError(f"{m.config.arch} expects {m.config.image_size}px images, dataset has {data.image_size}px")


def train_supervised(student: StudentModel, data: DatasetSplits, cfg: DistillConfig, log=None) -> TrainReport:
    """Student-only baseline: cross-entropy on hard labels."""
    _check_classes(data, student)
    shuffle_rng, augment_rng, _ = rng_streams(cfg.seed)

    def batch_loss(idx, x, y):
        z_s, _ = student(Tensor(x))
        l_ce = loss_ce(z_s, y)
        return l_ce, {"loss_ce": float(l_ce.data)}

    return _fit("supervised", [student], student_logits(student), batch_loss, data, cfg, shuffle_rng, augment_rng, log)


def run_teacher_pretrain(teacher: TeacherModel, data: DatasetSplits, cfg: DistillConfig, log=None) -> TrainReport:
    """Phase one: fit the teacher with focal loss (or cross-entropy), then freeze it."""
    _check_classes(data, teacher)
    if teacher.frozen:
        raise ConfigError("teacher is already frozen")
    shuffle_rng, augment_rng, _ = rng_streams(cfg.seed)

    def batch_loss(idx, x, y):
        z, _ = teacher(Tensor(x))
        if cfg.teacher_loss == "focal":
            loss = focal_loss(z, y, cfg.focal_gamma)
        else:
            loss = cross_entropy(z, y)
        return loss, {"loss_ce": float(loss.data)}

    report = _fit("teacher", [teacher], teacher_logits(teacher), batch_loss, data, cfg, shuffle_rng, augment_rng, log)
    teacher.freeze()
    return report


class TeacherCache:
    """Teacher logits and spatial attention for un-augmented training images."""

    def __init__(self, teacher: TeacherModel, data: DatasetSplits, batch_size: int = EVAL_BATCH):
        idx = data.split("train")
        self.pos = {int(i): k for k, i in enumerate(idx)}
        logits, maps = [], []
        with no_grad():
            for start in range(0, idx.size, batch_size):
                z, a = teacher(Tensor(data.images[idx[start : start + batch_size]]))
                logits.append(z.data)
                maps.append(teacher_attention_to_spatial(a).data)
        self.logits = np.concatenate(logits)
        self.maps = np.concatenate(maps)

    def lookup(self, idx: np.ndarray) -> Tuple[Tensor, Tensor]:
        rows = [self.pos[int(i)] for i in idx]
        return Tensor(self.logits[rows]), Tensor(self.maps[rows])


def make_adapters(teacher: TeacherModel, student: StudentModel, cfg: DistillConfig, rng: np.random.Generator) -> ChannelAdapters:
    return ChannelAdapters(1, student.feature_channels, cfg.common_channels, rng, cfg.train_teacher_adapter)


def run_distillation(
    teacher: TeacherModel,
    student: StudentModel,
    data: DatasetSplits,
    cfg: DistillConfig,
    adapters: Optional[ChannelAdapters] = None,
    log=None,
) -> TrainReport:
    """Phase two: train the student (and both adapters) on CE + alpha * logit KD + beta * attention KD.

    The teacher is frozen on entry and never updated. When both weights are
    zero the teacher is not consulted and the run reduces to
    ``train_supervised``; the soft-loss columns are then logged as 0.
    Otherwise every component is logged, including a zero-weighted one,
    which is then evaluated outside the gradient tape.
    """
    _check_classes(data, teacher, student)
    if not teacher.frozen:
        teacher.freeze()
    shuffle_rng, augment_rng, adapter_rng = rng_streams(cfg.seed)
    if adapters is None:
        adapters = make_adapters(teacher, student, cfg, adapter_rng)
    use_teacher = cfg.alpha > 0 or cfg.beta > 0
    cache = TeacherCache(teacher, data) if use_teacher and cfg.cache_teacher and not cfg.augment else None
    detach_t = not cfg.train_teacher_adapter

    def teacher_outputs(idx, x):
        if cache is not None:
            return cache.lookup(idx)
        with no_grad():
            z_t, a_t = teacher(Tensor(x))
            return z_t, teacher_attention_to_spatial(a_t)

    def batch_loss(idx, x, y):
        z_s, feat = student(Tensor(x))
        l_ce = loss_ce(z_s, y)
        parts = {"loss_ce": float(l_ce.data)}
        if not use_teacher:
            return l_ce, parts
        z_t, map_t = teacher_outputs(idx, x)
        if cfg.alpha > 0:
            l_logit = loss_logit(z_t, z_s, cfg.tau)
        else:
            with no_grad():
                l_logit = loss_logit(z_t, z_s, cfg.tau)
        if cfg.beta > 0:
            l_attn = loss_attn(*align(map_t, feat, adapters), detach_teacher=detach_t)
        else:
            with no_grad():
                l_attn = loss_attn(*align(map_t, feat, adapters))
        parts["loss_logit"] = float(l_logit.data)
        parts["loss_attn"] = float(l_attn.data)
        return loss_total(l_ce, l_logit, l_attn, cfg.alpha, cfg.beta), parts

    return _fit("distill", [student, adapters], student_logits(student), batch_loss, data, cfg,
                shuffle_rng, augment_rng, log)
