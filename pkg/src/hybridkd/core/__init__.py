from .tensor import (
    Tape,
    Tensor,
    add,
    add_batch_bias,
    add_bias,
    as_tensor,
    default_dtype,
    exp,
    get_default_dtype,
    get_tape,
    hardswish,
    is_grad_enabled,
    linear,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    scale_channels,
    set_default_dtype,
    sigmoid,
    sub,
    transpose,
    tsum,
)
from .functional import (
    bilinear_matrix,
    bilinear_resize,
    conv2d,
    conv_output_size,
    cross_entropy,
    focal_loss,
    global_avg_pool,
    group_norm,
    kl_div,
    layer_norm,
    log_softmax,
    softmax,
)
from .gradcheck import grad_check, numerical_grad
