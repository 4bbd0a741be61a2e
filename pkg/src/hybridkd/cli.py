"""``hybridkd`` command line: data generation, both training phases, ablations, eval, int8 and benchmarks.

Every subcommand resolves its settings (built-in defaults, then ``--config``
JSON, then explicit flags), writes them to ``<out>/run_config.json`` and only
then starts working. Errors print ``category: detail`` on one stderr line and
exit non-zero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .data import SyntheticSpec, export_synthetic, generate, load_directory
from .distill import (
    DEFAULT_TAUS,
    MODE_ORDER,
    DistillConfig,
    compare_modes,
    evaluate_model,
    run_distillation,
    run_teacher_pretrain,
    temperature_sweep,
    write_report,
)
from .distill.train import student_logits
from .errors import ConfigError, KDError
from .metrics import evaluate
from .models import StudentConfig, StudentModel, TeacherConfig, TeacherModel
from .plotting import plot_confusion, plot_latency, plot_modes, plot_quant, plot_sweep, plot_training
from .quantbench import (
    MEMORY_NOTE,
    bench_csv,
    bench_json,
    benchmark,
    calibration_batches,
    load_checkpoint,
    quantize_model,
    save_checkpoint,
)

log = logging.getLogger("hybridkd")

# Settings that may come from --config; the value here is the built-in default.
DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "data": None,
    "tier": "hard",
    "classes": 8,
    "per_class": 300,
    "size": 64,
    "epochs": 60,
    "batch_size": 32,
    "lr": 1e-3,
    "weight_decay": 0.01,
    "patience": 8,
    "tau": 6.0,
    "alpha": 0.7,
    "beta": 0.3,
    "common_channels": 32,
    "augment": True,
    "cache_teacher": False,
    "focal": True,
    "gamma": 2.0,
    "mode": "hybrid",
    "seeds": "0,1,2",
    "taus": ",".join(f"{t:g}" for t in DEFAULT_TAUS),
    "teacher": None,
    "model": None,
    "split": "test",
    "calib": 256,
    "runs": 30,
    "warmup": 5,
    "input_size": None,
    "probs": None,
    "labels": None,
}


def _add_common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="seed for every random stream (default 0)")
    p.add_argument("--config", help="JSON file of settings; explicit flags take precedence")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="PNG folder root/<class>/*.png; synthetic data is generated when omitted")
    p.add_argument("--tier", choices=["easy", "hard"])
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--size", type=int, help="image side length in pixels")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs")
    p.add_argument("--augment", action=argparse.BooleanOptionalAction)


def _add_kd(p: argparse.ArgumentParser) -> None:
    p.add_argument("--teacher", help="teacher checkpoint (.kdf)")
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--common-channels", type=int)
    p.add_argument("--cache-teacher", action=argparse.BooleanOptionalAction,
                   help="precompute teacher outputs (only used without augmentation)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridkd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic dataset as PNG folders")
    _add_common(p)
    _add_data(p)

    p = sub.add_parser("train-teacher", help="pretrain the attention teacher")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--focal", action=argparse.BooleanOptionalAction, help="focal loss (default) or cross-entropy")
    p.add_argument("--gamma", type=float, help="focal exponent")

    p = sub.add_parser("distill", help="train the student with a distillation mode")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    _add_kd(p)
    p.add_argument("--mode", choices=list(MODE_ORDER) + ["all"])
    p.add_argument("--seeds", help="comma-separated seeds for --mode all")

    p = sub.add_parser("sweep-tau", help="hybrid distillation across temperatures")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    _add_kd(p)
    p.add_argument("--taus", help="comma-separated temperatures")

    p = sub.add_parser("eval", help="metrics of a checkpoint, or of saved probabilities")
    _add_common(p)
    _add_data(p)
    p.add_argument("--model", help="checkpoint (.kdf)")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--probs", help=".npy of class probabilities (N, C); needs --labels")
    p.add_argument("--labels", help=".npy of integer labels (N,)")

    p = sub.add_parser("quantize", help="int8 post-training quantization of a student checkpoint")
    _add_common(p)
    _add_data(p)
    p.add_argument("--model", help="float student checkpoint (.kdf)")
    p.add_argument("--calib", type=int, help="number of training images for calibration")

    p = sub.add_parser("bench", help="latency, memory, size, params and FLOPs of checkpoints")
    _add_common(p)
    p.add_argument("--model", action="append", help="checkpoint (.kdf); repeatable")
    p.add_argument("--runs", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--input-size", type=int, help="input side length (default: the model's)")
    return parser


def resolve(args: argparse.Namespace) -> Dict[str, Any]:
    """Merge built-in defaults, the --config file and explicit flags, in that order."""
    file_cfg: Dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config) as f:
                file_cfg = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read --config {args.config}: {e}") from e
        if not isinstance(file_cfg, dict):
            raise ConfigError("--config must hold a JSON object")
        unknown = set(file_cfg) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown keys in --config: {sorted(unknown)}")
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose", "command") and v is not None}
    cfg = {k: v for k, v in DEFAULTS.items()}
    cfg.update(file_cfg)
    cfg.update(flags)
    cfg["command"] = args.command
    return cfg


def distill_config(cfg: Dict[str, Any], seed: Optional[int] = None) -> DistillConfig:
    return DistillConfig.from_dict({
        "tau": float(cfg["tau"]),
        "alpha": float(cfg["alpha"]),
        "beta": float(cfg["beta"]),
        "batch_size": int(cfg["batch_size"]),
        "epochs": int(cfg["epochs"]),
        "optimizer": {"lr": float(cfg["lr"]), "weight_decay": float(cfg["weight_decay"])},
        "early_stop_patience": int(cfg["patience"]),
        "common_channels": int(cfg["common_channels"]),
        "seed": int(cfg["seed"] if seed is None else seed),
        "augment": bool(cfg["augment"]),
        "cache_teacher": bool(cfg["cache_teacher"]),
        "teacher_loss": "focal" if cfg["focal"] else "ce",
        "focal_gamma": float(cfg["gamma"]),
    })


def _spec(cfg) -> SyntheticSpec:
    return SyntheticSpec(n_classes=int(cfg["classes"]), images_per_class=int(cfg["per_class"]),
                         image_size=int(cfg["size"]), tier=cfg["tier"], seed=int(cfg["seed"]))


def load_data(cfg):
    if cfg["data"]:
        data = load_directory(cfg["data"], int(cfg["size"]), seed=int(cfg["seed"]))
        if data.skipped:
            print(f"skipped {data.skipped} unreadable image(s)", file=sys.stderr)
        return data
    return generate(_spec(cfg))


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e


def _load_teacher(cfg) -> TeacherModel:
    if not cfg["teacher"]:
        raise ConfigError("--teacher checkpoint is required")
    if not Path(cfg["teacher"]).is_file():
        raise ConfigError(f"teacher checkpoint {cfg['teacher']} does not exist")
    teacher = load_checkpoint(cfg["teacher"])
    if not isinstance(teacher, TeacherModel):
        raise ConfigError(f"{cfg['teacher']} is not a teacher checkpoint")
    teacher.freeze()
    return teacher


def _load_model(path):
    if not path:
        raise ConfigError("--model checkpoint is required")
    if not Path(path).is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    return load_checkpoint(path)


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _csv_rows(header: List[str], rows: List[List]) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(f"{v:.6f}" if isinstance(v, float) else str(v) for v in r))
    return "\n".join(lines) + "\n"


# -- subcommands ---------------------------------------------------------------------------


def cmd_gen_data(cfg, out: Path) -> None:
    spec = _spec(cfg)
    n = export_synthetic(spec, out)
    data = load_directory(out, spec.image_size, seed=spec.seed)
    print(f"wrote {n} images to {out}; split sizes train={data.train.size} val={data.val.size} test={data.test.size}")


def cmd_train_teacher(cfg, out: Path) -> None:
    data = load_data(cfg)
    dc = distill_config(cfg)
    teacher = TeacherModel(TeacherConfig(n_classes=data.n_classes, image_size=data.image_size), seed=dc.seed)
    report = run_teacher_pretrain(teacher, data, dc, log=_epoch_printer("teacher"))
    save_checkpoint(teacher, out / "teacher.kdf")
    report.write(out / "teacher_report.csv", out / "teacher_report.json")
    plot_training(report.history, out / "teacher_curves.png", "teacher")
    print(f"teacher test accuracy {report.test_accuracy:.4f} (best epoch {report.best_epoch})")


def _student_config(data) -> StudentConfig:
    return StudentConfig(n_classes=data.n_classes, image_size=data.image_size)


def _epoch_printer(tag: str):
    def show(e):
        log.info("%s epoch %d loss %.4f val_acc %.4f", tag, e.epoch, e.loss_total, e.val_acc)

    return show


def cmd_distill(cfg, out: Path) -> None:
    teacher = _load_teacher(cfg)
    data = load_data(cfg)
    dc = distill_config(cfg)
    if cfg["mode"] == "all":
        cmp = compare_modes(teacher, data, dc, seeds=_ints(cfg["seeds"]), student_cfg=_student_config(data),
                            log=log.info)
        write_report(cmp.csv_text(), cmp.to_dict(), out / "modes.csv", out / "modes.json")
        plot_modes(cmp.rows(), out / "modes.png")
        for row in cmp.rows():
            print(f"{row['mode']:>7s} acc {row['acc']:.4f} f1 {row['f1']:.4f}")
        return
    run_cfg = dc.with_mode(cfg["mode"])
    student = StudentModel(_student_config(data), seed=run_cfg.seed)
    report = run_distillation(teacher, student, data, run_cfg, log=_epoch_printer(cfg["mode"]))
    save_checkpoint(student, out / "student.kdf")
    report.write(out / "distill_report.csv", out / "distill_report.json")
    plot_training(report.history, out / "distill_curves.png", f"student ({cfg['mode']})")
    print(f"student ({cfg['mode']}) test accuracy {report.test_accuracy:.4f} (best epoch {report.best_epoch})")


def cmd_sweep_tau(cfg, out: Path) -> None:
    teacher = _load_teacher(cfg)
    data = load_data(cfg)
    dc = distill_config(cfg)
    report = temperature_sweep(_floats(cfg["taus"]), teacher, data, dc, _student_config(data), log=log.info)
    write_report(report.csv_text(), report.to_dict(), out / "sweep.csv", out / "sweep.json")
    plot_sweep(report.rows(), out / "sweep.png")
    for row in report.rows():
        print(f"tau {row['tau']:>5g} acc {row['test_acc']:.4f} f1 {row['f1']:.4f} auc {row['auc']:.4f} map {row['map']:.4f}")


EVAL_FIELDS = ["accuracy", "precision_macro", "recall_macro", "f1_macro", "auc_macro", "map_macro"]


def cmd_eval(cfg, out: Path) -> None:
    if cfg["probs"]:
        if not cfg["labels"]:
            raise ConfigError("--probs needs --labels")
        result = evaluate(np.load(cfg["probs"]), np.load(cfg["labels"]))
        names = [str(k) for k in range(result.confusion.shape[0])]
    else:
        model = _load_model(cfg["model"])
        data = load_data(cfg)
        result = evaluate_model(lambda x: model(x)[0], data, cfg["split"])
        names = data.class_names
    d = result.to_dict()
    (out / "eval.csv").write_text(_csv_rows(EVAL_FIELDS, [[d[k] for k in EVAL_FIELDS]]))
    _write_json(out / "eval.json", result.to_dict(with_confusion=True))
    plot_confusion(result.confusion, names, out / "confusion.png")
    for k in EVAL_FIELDS:
        print(f"{k:>16s} {d[k]:.4f}")


QUANT_FIELDS = ["float_acc", "int8_acc", "delta_pp", "float_bytes", "int8_bytes", "size_ratio"]


def cmd_quantize(cfg, out: Path) -> None:
    model = _load_model(cfg["model"])
    if not isinstance(model, StudentModel):
        raise ConfigError("quantize expects a float student checkpoint")
    data = load_data(cfg)
    x_train, _ = data.arrays("train")
    calib = calibration_batches(x_train, int(cfg["calib"]), rng=np.random.default_rng(int(cfg["seed"])))
    qmodel = quantize_model(model, calib)
    float_bytes = save_checkpoint(model, out / "student_float.kdf")
    int8_bytes = save_checkpoint(qmodel, out / "student_int8.kdf")
    f_acc = evaluate_model(student_logits(model), data, "test").accuracy
    q_acc = evaluate_model(lambda x: qmodel(x)[0], data, "test").accuracy
    row = [f_acc, q_acc, (f_acc - q_acc) * 100.0, float_bytes, int8_bytes, int8_bytes / float_bytes]
    (out / "quant.csv").write_text(_csv_rows(QUANT_FIELDS, [row]))
    _write_json(out / "quant.json", dict(zip(QUANT_FIELDS, row)))
    plot_quant(dict(zip(QUANT_FIELDS, row)), out / "quant.png")
    print(f"float acc {f_acc:.4f}  int8 acc {q_acc:.4f}  delta {row[2]:+.2f}pp  size {int8_bytes}/{float_bytes} B "
          f"({row[5]:.3f})")


def cmd_bench(cfg, out: Path) -> None:
    paths = cfg["model"] or []
    if isinstance(paths, str):
        paths = [paths]
    if not paths:
        raise ConfigError("bench needs at least one --model")
    reports = []
    for path in paths:
        model = _load_model(path)
        size = int(cfg["input_size"] or model.config.image_size)
        reports.append(benchmark(model, size, runs=int(cfg["runs"]), warmup=int(cfg["warmup"]),
                                 name=Path(path).stem, seed=int(cfg["seed"])))
    (out / "bench.csv").write_text(bench_csv(reports))
    (out / "bench.json").write_text(bench_json(reports))
    plot_latency([r.row() for r in reports], out / "latency.png")
    print(MEMORY_NOTE)
    for r in reports:
        print(f"{r.model:>16s} {r.params_m:.4f}M params {r.flops_g:.5f} GFLOPs {r.size_mb:.4f} MB "
              f"{r.lat_ms_mean:.3f} +/- {r.lat_ms_std:.3f} ms  mem {r.mem_mb:.3f} MB")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "sweep-tau": cmd_sweep_tau,
    "eval": cmd_eval,
    "quantize": cmd_quantize,
    "bench": cmd_bench,
}


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = resolve(args)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run_config.json", cfg)
    COMMANDS[args.command](cfg, out)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(argv)
    except KDError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
    except OSError as e:
        print(f"io: {e}", file=sys.stderr)
    except (ValueError, TypeError) as e:
        print(f"config: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
