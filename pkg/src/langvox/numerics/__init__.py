from .tensor import (
    NumericalError,
    ShapeError,
    Tensor,
    as_tensor,
    concat,
    exp,
    log,
    matmul,
    mean,
    relu,
    reshape,
    sqrt,
    tabs,
    take,
    transpose,
    tsum,
)
from .functional import (
    DegenerateError,
    batch_norm,
    conv2d,
    cosine_matrix,
    cosine_sim,
    cross_entropy,
    l2_normalize,
    linear,
    log_softmax,
    softmax,
    sparse_matmul,
    upsample_bilinear,
)
from .optim import LrSchedule, Parameter, SgdMomentum, StateError, schedule_lr
from .gradcheck import GradCheckReport, fd_check
