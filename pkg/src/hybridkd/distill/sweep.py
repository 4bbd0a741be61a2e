"""Temperature sweep and distillation-mode comparison."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..data.splits import DatasetSplits
from ..errors import ConfigError
from ..models import StudentConfig, StudentModel, TeacherModel
from .config import MODES, DistillConfig
from .train import TrainReport, run_distillation

DEFAULT_TAUS = (1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
SWEEP_FIELDS = ["tau", "test_acc", "f1", "auc", "map"]
MODE_FIELDS = ["mode", "acc", "f1", "precision", "recall", "auc", "map"]
MODE_ORDER = ("none", "logit", "attn", "hybrid")


def _csv(header: Sequence[str], rows: List[List]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


@dataclass
class SweepReport:
    taus: List[float]
    runs: List[TrainReport] = field(default_factory=list)

    def rows(self) -> List[Dict]:
        out = []
        for tau, r in zip(self.taus, self.runs):
            t = r.test
            out.append({"tau": tau, "test_acc": t["accuracy"], "f1": t["f1_macro"], "auc": t["auc_macro"],
                        "map": t["map_macro"]})
        return out

    def csv_text(self) -> str:
        return _csv(SWEEP_FIELDS, [[row[k] for k in SWEEP_FIELDS] for row in self.rows()])

    def to_dict(self) -> Dict:
        return {"rows": self.rows(), "runs": [r.to_dict() for r in self.runs]}

    def accuracy_spread(self) -> float:
        acc = [row["test_acc"] for row in self.rows()]
        return max(acc) - min(acc)


def temperature_sweep(
    taus: Sequence[float],
    teacher: TeacherModel,
    data: DatasetSplits,
    cfg: DistillConfig,
    student_cfg: Optional[StudentConfig] = None,
    log: Optional[Callable[[str], None]] = None,
) -> SweepReport:
    """One hybrid distillation per temperature, each from the same seeded student initialisation."""
    taus = [float(t) for t in taus]
    if not taus:
        raise ConfigError("temperature list is empty")
    for t in taus:
        if not t >= 1e-6:
            raise ConfigError(f"temperature must be >= 1e-6, got {t}")
    report = SweepReport(taus)
    for tau in taus:
        student = StudentModel(student_cfg, seed=cfg.seed)
        run = run_distillation(teacher, student, data, cfg.replace(tau=tau))
        report.runs.append(run)
        if log is not None:
            log(f"tau={tau:g} test_acc={run.test_accuracy:.4f} epochs={run.stopped_epoch}")
    return report


@dataclass
class ModeComparison:
    """Per-mode test metrics, averaged over seeds."""

    modes: List[str]
    seeds: List[int]
    runs: Dict[str, List[TrainReport]] = field(default_factory=dict)
    students: Dict[str, List[StudentModel]] = field(default_factory=dict, repr=False)

    def mean(self, mode: str, key: str) -> float:
        return float(np.mean([r.test[key] for r in self.runs[mode]]))

    def rows(self) -> List[Dict]:
        keys = {"acc": "accuracy", "f1": "f1_macro", "precision": "precision_macro", "recall": "recall_macro",
                "auc": "auc_macro", "map": "map_macro"}
        return [{"mode": m, **{k: self.mean(m, v) for k, v in keys.items()}} for m in self.modes]

    def csv_text(self) -> str:
        return _csv(MODE_FIELDS, [[row[k] for k in MODE_FIELDS] for row in self.rows()])

    def to_dict(self) -> Dict:
        return {
            "seeds": self.seeds,
            "rows": self.rows(),
            "per_seed": {m: [r.test_accuracy for r in rs] for m, rs in self.runs.items()},
        }


def compare_modes(
    teacher: TeacherModel,
    data: DatasetSplits,
    cfg: DistillConfig,
    seeds: Sequence[int] = (0, 1, 2),
    modes: Sequence[str] = MODE_ORDER,
    student_cfg: Optional[StudentConfig] = None,
    log: Optional[Callable[[str], None]] = None,
) -> ModeComparison:
    """Student-only, logit-only, attention-only and hybrid runs for each seed."""
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}; choose from {sorted(MODES)}")
    out = ModeComparison(list(modes), list(seeds), {m: [] for m in modes}, {m: [] for m in modes})
    for seed in seeds:
        for m in modes:
            run_cfg = cfg.with_mode(m).replace(seed=seed)
            student = StudentModel(student_cfg, seed=seed)
            run = run_distillation(teacher, student, data, run_cfg)
            out.runs[m].append(run)
            out.students[m].append(student)
            if log is not None:
                log(f"seed={seed} mode={m} test_acc={run.test_accuracy:.4f} epochs={run.stopped_epoch}")
    return out


def write_report(text: str, payload: Dict, csv_path, json_path) -> None:
    with open(csv_path, "w", newline="") as f:
        f.write(text)
    with open(json_path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
