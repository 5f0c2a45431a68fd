"""
A small reverse-mode autodiff engine on top of numpy. It only knows the handful of operations the downscaling
networks and their likelihood losses need: elementwise arithmetic, the sigmoid family, exp/log, relu, reductions,
channel slicing and a same-padding conv2d.

Every operation records a node on the ComputationTape of its inputs. Tensors without a tape are constants, so the
same functions run the inference path without bookkeeping. Results are checked for NaN/Inf after every operation.

    tape = ComputationTape()
    x = tape.leaf(np.array(3.), name='x')
    grads = backward(square(x))   # {'x': 6.}
"""
from collections import OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_expit

from dc_bdl_tools.Utils.errors import ContractError, DomainError, NonFiniteError

# 32 bit by default. Gradient checks switch to 64.
_DTYPE = np.float32


def set_precision(bits):
    """
    Sets the floating point precision used for all new tensors.

    Parameters
    ----------
    bits: int
        32 or 64
    """
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ContractError('precision must be 32 or 64, not {}'.format(bits))


def get_dtype():
    return _DTYPE


class ComputationTape(object):
    """
    Ordered record of the operations applied to a set of named leaf tensors. Nodes are appended in evaluation order,
    so walking the list backwards visits every node after all of its consumers.
    """

    def __init__(self):
        self.leaves = OrderedDict()
        self.nodes = []

    def leaf(self, data, name):
        """
        Register a differentiable input. The data are copied so the caller's array is never frozen.
        """
        if name in self.leaves:
            raise ContractError('leaf {} is already on the tape'.format(name))
        t = Tensor(np.array(data, dtype=_DTYPE), tape=self, name=name)
        self.leaves[name] = t
        return t

    def replay(self):
        """
        Re-evaluates every recorded node from the current leaf values and returns the value of the last node.
        Under the same rounding mode this reproduces the recorded forward pass bit for bit.
        """
        values = {id(t): t.data for t in self.leaves.values()}
        last = None
        for node in self.nodes:
            args = [values.get(id(p), p.data) for p in node.parents]
            last = _evaluate(node.op, node.forward_fn, args)
            values[id(node)] = last
        return last

    def __len__(self):
        return len(self.nodes)


class Tensor(object):
    """
    Immutable n-dimensional array plus the information needed to differentiate through it.
    """

    def __init__(self, data, tape=None, parents=(), forward_fn=None, vjp_fn=None, op='const', name=None):
        self.data = data
        self.data.flags.writeable = False
        self.tape = tape
        self.parents = tuple(parents)
        self.forward_fn = forward_fn
        self.vjp_fn = vjp_fn
        self.op = op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def requires_grad(self):
        return self.tape is not None

    def item(self):
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self):
        label = self.name if self.name is not None else self.op
        return 'Tensor({}, shape={}, dtype={})'.format(label, self.shape, self.data.dtype)


def as_tensor(x):
    """Wraps arrays and scalars as constant tensors."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.array(x, dtype=_DTYPE))


def _evaluate(op, forward_fn, args):
    data = np.asarray(forward_fn(*args), dtype=_DTYPE)
    if not np.all(np.isfinite(data)):
        bad = np.argwhere(~np.isfinite(data))
        raise NonFiniteError(op, tuple(bad[0]) if data.ndim else None)
    return data


def _apply(op, forward_fn, vjp_fn, *args):
    parents = [as_tensor(a) for a in args]
    tapes = {id(p.tape): p.tape for p in parents if p.tape is not None}
    if len(tapes) > 1:
        raise ContractError('{}: inputs live on different tapes'.format(op))
    data = _evaluate(op, forward_fn, [p.data for p in parents])

    # constants in, constant out
    if not tapes:
        return Tensor(data, op=op)

    tape = list(tapes.values())[0]
    out = Tensor(data, tape=tape, parents=parents, forward_fn=forward_fn, vjp_fn=vjp_fn, op=op)
    tape.nodes.append(out)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the shape of the input it flowed into."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss):
    """
    Reverse-mode sweep over the tape of a scalar loss.

    Parameters
    ----------
    loss: Tensor
        A single-element tensor living on a ComputationTape.

    Returns
    -------
    OrderedDict
        Leaf name -> gradient array, in leaf registration order. Leaves the loss does not depend on get zeros.
    """
    if loss.size != 1:
        raise ContractError('backward needs a scalar loss, got shape {}'.format(loss.shape))
    if loss.tape is None:
        raise ContractError('loss is a constant; nothing to differentiate')
    tape = loss.tape

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        parent_grads = node.vjp_fn(g, node.data, *[p.data for p in node.parents])
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or parent.tape is None:
                continue
            pg = _unbroadcast(np.asarray(pg, dtype=_DTYPE), parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg

    res = OrderedDict()
    for name, leaf in tape.leaves.items():
        res[name] = grads.get(id(leaf), np.zeros_like(leaf.data))
    return res


##################
# ELEMENTWISE OPS #
##################
def add(a, b):
    return _apply('add', np.add, lambda g, out, x, y: (g, g), a, b)


def sub(a, b):
    return _apply('sub', np.subtract, lambda g, out, x, y: (g, -g), a, b)


def mul(a, b):
    return _apply('mul', np.multiply, lambda g, out, x, y: (g * y, g * x), a, b)


def div(a, b):
    return _apply('div', np.divide, lambda g, out, x, y: (g / y, -g * out / y), a, b)


def neg(a):
    return _apply('neg', np.negative, lambda g, out, x: (-g,), a)


def square(a):
    return _apply('square', np.square, lambda g, out, x: (2 * x * g,), a)


def exp(a):
    return _apply('exp', np.exp, lambda g, out, x: (g * out,), a)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError('log of a non-positive value')
    return _apply('log', np.log, lambda g, out, x: (g / x,), a)


def sigmoid(a):
    return _apply('sigmoid', expit, lambda g, out, x: (g * out * (1 - out),), a)


def log_sigmoid(a):
    """log(sigmoid(a)) without the underflow of taking the log of a tiny sigmoid."""
    return _apply('log_sigmoid', log_expit, lambda g, out, x: (g * expit(-x),), a)


def relu(a):
    return _apply('relu', lambda x: np.maximum(x, 0), lambda g, out, x: (g * (x > 0),), a)


def clip(a, low, high):
    """Clamp to [low, high]; the gradient is zero where the clamp is active."""
    return _apply('clip', lambda x: np.clip(x, low, high), lambda g, out, x: (g * ((x >= low) & (x <= high)),), a)


##############
# REDUCTIONS #
##############
def sum_all(a):
    return _apply('sum', lambda x: np.sum(x), lambda g, out, x: (np.broadcast_to(g, x.shape),), a)


def mean_all(a):
    return _apply('mean', lambda x: np.mean(x), lambda g, out, x: (np.broadcast_to(g / x.size, x.shape),), a)


#################
# ARRAY PLUMBING #
#################
def slice_channels(a, start, stop):
    """Select channels [start, stop) of a [batch, channel, ...] tensor."""

    def vjp(g, out, x):
        full = np.zeros_like(x)
        full[:, start:stop] = g
        return (full,)

    return _apply('slice_channels', lambda x: x[:, start:stop], vjp, a)


##########
# CONV2D #
##########
def _windows(x, kh, kw):
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def _conv2d_forward(x, k, b):
    win = _windows(x, k.shape[2], k.shape[3])
    return np.einsum('bchwij,ocij->bohw', win, k, optimize=True) + b[None, :, None, None]


def _conv2d_vjp(g, out, x, k, b):
    kh, kw = k.shape[2], k.shape[3]
    dk = np.einsum('bchwij,bohw->ocij', _windows(x, kh, kw), g, optimize=True)
    db = g.sum(axis=(0, 2, 3))

    # same-padding correlation is undone by correlating the padded output gradient with the flipped kernel
    dx = np.einsum('bohwij,ocij->bchw', _windows(g, kh, kw), k[:, :, ::-1, ::-1], optimize=True)
    return dx, dk, db


def conv2d(x, kernels, bias):
    """
    Same-size cross-correlation with zero padding.

    Parameters
    ----------
    x: Tensor
        [batch, channels_in, H, W]
    kernels: Tensor
        [channels_out, channels_in, kH, kW], kH and kW odd
    bias: Tensor
        [channels_out]

    Returns
    -------
    Tensor
        [batch, channels_out, H, W]
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ContractError('conv2d expects 4-d input and kernels, got {} and {}'.format(x.shape, kernels.shape))
    if kernels.shape[2] % 2 == 0 or kernels.shape[3] % 2 == 0:
        raise ContractError('conv2d kernel extents must be odd, got {}'.format(kernels.shape[2:]))
    if kernels.shape[1] != x.shape[1]:
        raise ContractError('conv2d: input has {} channels, kernels expect {}'.format(x.shape[1], kernels.shape[1]))
    if bias.shape != (kernels.shape[0],):
        raise ContractError('conv2d: bias shape {} does not match {} output channels'.format(bias.shape,
                                                                                           kernels.shape[0]))
    return _apply('conv2d', _conv2d_forward, _conv2d_vjp, x, kernels, bias)
