from .bench import BENCH_FIELDS, MEMORY_NOTE, BenchReport, bench_csv, bench_json, benchmark
from .checkpoint import checkpoint_bytes, load_checkpoint, read_checkpoint, save_checkpoint
from .flops import LayerCount, conv_count, count_params_flops, layer_table, linear_count
from .quantize import (
    QuantModel,
    activation_qparams,
    calibrate,
    calibration_batches,
    dequantize,
    fake_quant,
    quantize_model,
    quantize_symmetric,
)
