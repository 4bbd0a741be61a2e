from .alignment import ChannelAdapters, align, teacher_attention_to_spatial
from .config import MODES, AdamWConfig, DistillConfig
from .losses import loss_attn, loss_ce, loss_logit, loss_total
from .train import (
    CSV_FIELDS,
    EpochLog,
    TeacherCache,
    TrainReport,
    evaluate_model,
    make_adapters,
    predict_proba,
    rng_streams,
    run_distillation,
    run_teacher_pretrain,
    train_supervised,
)
from .sweep import (
    DEFAULT_TAUS,
    MODE_FIELDS,
    MODE_ORDER,
    SWEEP_FIELDS,
    ModeComparison,
    SweepReport,
    compare_modes,
    temperature_sweep,
    write_report,
)
