from moef.numerics.module import MLP, LayerNorm, Linear, Module, glorot_uniform, parameter
from moef.numerics.optim import Adagrad, AdagradState, adagrad_step
from moef.numerics.tensor import (
    GradientStateError,
    add,
    neg,
    SparseRows,
    Tensor,
    as_tensor,
    backward,
    clip,
    computation_tape,
    concat,
    div,
    elementwise,
    embedding,
    exp,
    getitem,
    log,
    log1p,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    stack,
    sub,
    tanh,
    tensor_sum,
    transpose,
    zero_grad,
)
from moef.numerics.gradcheck import numerical_gradient, relative_error
