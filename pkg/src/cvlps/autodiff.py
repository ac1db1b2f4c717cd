"""Reverse-mode automatic differentiation on real values.

Complex quantities never enter the tape directly: every complex value is
carried as an (re, im) pair of real arrays, so the gradients produced here
are the partial derivatives of a real scalar loss with respect to real and
imaginary parts separately. That convention maps one-to-one onto the
optimizer update and agrees with central finite differences, which is what
``gradcheck`` certifies.

A ``Tape`` records primitive operations in topological order; ``backward``
walks them exactly once in reverse. Primitives are scalar operations
applied elementwise over arrays (with numpy broadcasting); index selection
(``take``/``put``/``vmax``) treats indices as locally constant, so argmax
style selections propagate gradient only through the winning element.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


class Param:
    """A trainable real scalar or tensor with an accumulated gradient."""

    def __init__(self, value, name: str = "", role: str = "weight"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.role = role

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name or 'unnamed'}, shape={self.value.shape})"


@dataclass
class Node:
    op: str
    parents: tuple
    ctx: tuple
    value: np.ndarray
    param: Param | None = None


class Var:
    """Handle to one tape node (or a bare value when not recording)."""

    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.tape.lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(self.tape.lift(other), self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Tape:
    """Append-only record of primitives; single-use backward."""

    def __init__(self, record: bool = True):
        self.nodes: list[Node] = []
        self.recording = record
        self._backward_done = False

    def _push(self, op, parents, ctx, value, param=None) -> Var:
        if not self.recording:
            return Var(self, -1, value)
        self.nodes.append(Node(op, tuple(p.idx for p in parents), ctx, value, param))
        return Var(self, len(self.nodes) - 1, value)

    def const(self, value) -> Var:
        """A leaf that receives no gradient."""
        return self._push("leaf", (), (), np.asarray(value, dtype=np.float64))

    def param(self, p: Param) -> Var:
        """A leaf bound to a Param; backward accumulates into p.grad."""
        return self._push("leaf", (), (), p.value, param=p)

    def lift(self, x) -> Var:
        return x if isinstance(x, Var) else self.const(x)

    def backward(self, loss: Var):
        """Accumulate dloss/dleaf into every bound Param."""
        if not self.recording:
            raise RuntimeError("cannot backpropagate through a non-recording tape")
        if self._backward_done:
            raise RuntimeError("backward was already run on this tape; build a new one")
        if np.size(loss.value) != 1:
            raise ValueError("loss must be a real scalar")
        self._backward_done = True
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[loss.idx] = np.ones_like(np.asarray(loss.value, dtype=np.float64))
        for i in range(loss.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.op == "leaf":
                if node.param is not None:
                    node.param.grad += _unbroadcast(g, node.param.value.shape)
                continue
            for pos, pg in _BACKWARD[node.op](node, g):
                pidx = node.parents[pos]
                grads[pidx] = pg if grads[pidx] is None else grads[pidx] + pg
            grads[i] = None  # free as we go


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape of the broadcast operand."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives

_BACKWARD = {}


def _op(name):
    def deco(fn):
        _BACKWARD[name] = fn
        return fn

    return deco


def add(a: Var, b) -> Var:
    b = a.tape.lift(b)
    return a.tape._push("add", (a, b), (a.shape, b.shape), a.value + b.value)


@_op("add")
def _b_add(node, g):
    sa, sb = node.ctx
    return [(0, _unbroadcast(g, sa)), (1, _unbroadcast(g, sb))]


def sub(a: Var, b) -> Var:
    b = a.tape.lift(b)
    return a.tape._push("sub", (a, b), (a.shape, b.shape), a.value - b.value)


@_op("sub")
def _b_sub(node, g):
    sa, sb = node.ctx
    return [(0, _unbroadcast(g, sa)), (1, _unbroadcast(-g, sb))]


def mul(a: Var, b) -> Var:
    b = a.tape.lift(b)
    return a.tape._push("mul", (a, b), (a.value, b.value), a.value * b.value)


@_op("mul")
def _b_mul(node, g):
    av, bv = node.ctx
    return [(0, _unbroadcast(g * bv, np.shape(av))), (1, _unbroadcast(g * av, np.shape(bv)))]


def div(a: Var, b) -> Var:
    b = a.tape.lift(b)
    if np.any(b.value == 0):
        raise ZeroDivisionError("division by zero in traced expression")
    return a.tape._push("div", (a, b), (a.value, b.value), a.value / b.value)


@_op("div")
def _b_div(node, g):
    av, bv = node.ctx
    ga = _unbroadcast(g / bv, np.shape(av))
    gb = _unbroadcast(-g * av / (bv * bv), np.shape(bv))
    return [(0, ga), (1, gb)]


def neg(a: Var) -> Var:
    return a.tape._push("neg", (a,), (), -a.value)


@_op("neg")
def _b_neg(node, g):
    return [(0, -g)]


def vexp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape._push("exp", (a,), (out,), out)


@_op("exp")
def _b_exp(node, g):
    return [(0, g * node.ctx[0])]


def vlog(a: Var) -> Var:
    if np.any(a.value <= 0):
        raise ValueError("log of non-positive value in traced expression")
    return a.tape._push("log", (a,), (a.value,), np.log(a.value))


@_op("log")
def _b_log(node, g):
    return [(0, g / node.ctx[0])]


def vsqrt(a: Var) -> Var:
    out = np.sqrt(a.value)
    return a.tape._push("sqrt", (a,), (out,), out)


@_op("sqrt")
def _b_sqrt(node, g):
    return [(0, g / (2.0 * node.ctx[0]))]


def relu(a: Var) -> Var:
    mask = (a.value > 0).astype(np.float64)
    return a.tape._push("relu", (a,), (mask,), a.value * mask)


@_op("relu")
def _b_relu(node, g):
    return [(0, g * node.ctx[0])]


def vatan2(y: Var, x) -> Var:
    x = y.tape.lift(x)
    return y.tape._push("atan2", (y, x), (y.value, x.value), np.arctan2(y.value, x.value))


@_op("atan2")
def _b_atan2(node, g):
    yv, xv = node.ctx
    d = xv * xv + yv * yv
    return [(0, _unbroadcast(g * xv / d, np.shape(yv))), (1, _unbroadcast(-g * yv / d, np.shape(xv)))]


def vsum(a: Var, axis=None, keepdims=False) -> Var:
    out = np.sum(a.value, axis=axis, keepdims=keepdims)
    return a.tape._push("sum", (a,), (a.shape, axis, keepdims), out)


@_op("sum")
def _b_sum(node, g):
    in_shape, axis, keepdims = node.ctx
    if axis is None:
        return [(0, np.broadcast_to(g, in_shape).copy())]
    if not keepdims:
        g = np.expand_dims(g, axis)
    return [(0, np.broadcast_to(g, in_shape).copy())]


def vmean(a: Var, axis=None, keepdims=False) -> Var:
    n = a.value.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def reshape(a: Var, shape) -> Var:
    return a.tape._push("reshape", (a,), (a.shape,), a.value.reshape(shape))


@_op("reshape")
def _b_reshape(node, g):
    return [(0, g.reshape(node.ctx[0]))]


def take(a: Var, flat_idx: np.ndarray) -> Var:
    """Gather from the flattened input; out.shape == flat_idx.shape.

    The index array is locally constant: this is the "max-select" style
    primitive, gradient flows only into the selected elements.
    """
    flat_idx = np.asarray(flat_idx)
    out = a.value.reshape(-1)[flat_idx]
    return a.tape._push("take", (a,), (flat_idx, a.shape), out)


@_op("take")
def _b_take(node, g):
    flat_idx, in_shape = node.ctx
    gx = np.zeros(int(np.prod(in_shape)) if in_shape else 1, dtype=np.float64)
    np.add.at(gx, flat_idx.reshape(-1), np.asarray(g).reshape(-1))
    return [(0, gx.reshape(in_shape))]


def put(a: Var, flat_idx: np.ndarray, out_shape) -> Var:
    """Scatter into zeros: out.flat[flat_idx] = a (indices must be unique)."""
    flat_idx = np.asarray(flat_idx)
    out = np.zeros(int(np.prod(out_shape)), dtype=np.float64)
    out[flat_idx.reshape(-1)] = a.value.reshape(-1)
    return a.tape._push("put", (a,), (flat_idx, a.shape), out.reshape(out_shape))


@_op("put")
def _b_put(node, g):
    flat_idx, in_shape = node.ctx
    return [(0, np.asarray(g).reshape(-1)[flat_idx.reshape(-1)].reshape(in_shape))]


def vmax(a: Var, axis: int) -> Var:
    """Maximum along one axis, gradient to the first maximal element."""
    moved = np.moveaxis(a.value, axis, -1)
    arg = np.argmax(moved, axis=-1)
    lead = np.indices(arg.shape).reshape(len(arg.shape), -1)
    flat = np.ravel_multi_index(tuple(lead) + (arg.reshape(-1),), moved.shape)
    # indices are in moved layout; convert to original layout
    src = np.moveaxis(np.arange(a.value.size).reshape(a.shape), axis, -1).reshape(-1)
    return take(a, src[flat].reshape(arg.shape))


def stack(vars_: list, axis: int = 0) -> Var:
    tape = vars_[0].tape
    out = np.stack([v.value for v in vars_], axis=axis)
    return tape._push("stack", tuple(vars_), (axis, len(vars_)), out)


@_op("stack")
def _b_stack(node, g):
    axis, n = node.ctx
    return [(i, np.take(g, i, axis=axis)) for i in range(n)]


def matmul(a: Var, w: Var) -> Var:
    """a[..., k] @ w[k, n] -> [..., n]."""
    return a.tape._push("matmul", (a, w), (a.value, w.value), a.value @ w.value)


@_op("matmul")
def _b_matmul(node, g):
    av, wv = node.ctx
    ga = g @ wv.T
    gw = av.reshape(-1, av.shape[-1]).T @ np.asarray(g).reshape(-1, wv.shape[-1])
    return [(0, ga), (1, gw)]


def conv_circ(x: Var, w: Var) -> Var:
    """Real circular cross-correlation: x [B,C,*sp], w [O,C,*k], stride 1."""
    xv, wv = x.value, w.value
    if xv.ndim == 3:
        out = _kernels.conv1_fwd(xv, wv)
    elif xv.ndim == 4:
        out = _kernels.conv2_fwd(xv, wv)
    else:
        raise ValueError("conv_circ expects [B,C,N] or [B,C,H,W]")
    return x.tape._push("conv", (x, w), (xv, wv), out)


@_op("conv")
def _b_conv(node, g):
    xv, wv = node.ctx
    if xv.ndim == 3:
        gx = _kernels.conv1_gx(g, wv, xv.shape[-1])
        gw = _kernels.conv1_gw(g, xv, wv.shape[-1])
    else:
        gx = _kernels.conv2_gx(g, wv, xv.shape[-2], xv.shape[-1])
        gw = _kernels.conv2_gw(g, xv, wv.shape[-2], wv.shape[-1])
    return [(0, gx), (1, gw)]


def modrelu_scale(re: Var, im: Var, b: Var) -> Var:
    """The real gain relu(|z| + b)/|z| with hand-written partials.

    Zero (with zero gradient) wherever |z| + b <= 0 or z == 0; multiplying
    (re, im) by this gain gives the magnitude-thresholded, phase-preserving
    activation.
    """
    rv, iv, bv = re.value, im.value, b.value
    m2 = rv * rv + iv * iv
    m = np.sqrt(m2)
    active = ((m + bv) > 0) & (m > 0)
    safe_m = np.where(m > 0, m, 1.0)
    s = np.where(active, (m + bv) / safe_m, 0.0)
    m3 = safe_m * m2 + (~active)  # avoid 0 division off the active set
    ds_dre = np.where(active, -bv * rv / m3, 0.0)
    ds_dim = np.where(active, -bv * iv / m3, 0.0)
    ds_db = np.where(active, 1.0 / safe_m, 0.0)
    ctx = (ds_dre, ds_dim, ds_db, re.shape, im.shape, b.shape)
    return re.tape._push("modrelu_scale", (re, im, b), ctx, s)


@_op("modrelu_scale")
def _b_modrelu_scale(node, g):
    ds_dre, ds_dim, ds_db, sr, si, sb = node.ctx
    return [
        (0, _unbroadcast(g * ds_dre, sr)),
        (1, _unbroadcast(g * ds_dim, si)),
        (2, _unbroadcast(g * ds_db, sb)),
    ]


def stop_gradient(a: Var) -> Var:
    return a.tape.const(np.array(a.value, copy=True))


def softmax(x: Var, axis: int = -1) -> Var:
    """Numerically stable softmax; the max shift is treated as constant."""
    shift = x.tape.const(np.max(x.value, axis=axis, keepdims=True))
    e = vexp(sub(x, shift))
    return div(e, vsum(e, axis=axis, keepdims=True))


def logsumexp(x: Var, axis: int = -1) -> Var:
    shift = x.tape.const(np.max(x.value, axis=axis, keepdims=True))
    return add(vlog(vsum(vexp(sub(x, shift)), axis=axis, keepdims=True)), shift)


def cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Mean softmax cross-entropy; logits [B, n] real, labels [B] ints."""
    logp = sub(logits, logsumexp(logits, axis=-1))
    n = logits.shape[-1]
    flat = np.arange(len(labels)) * n + np.asarray(labels)
    return neg(vmean(take(logp, flat)))


def st_onehot(soft: Var, axis: int = -1) -> Var:
    """Straight-through hard selection.

    Forward value is the exact one-hot of argmax(soft) along ``axis`` (ties
    to the lowest index); backward passes the incoming gradient straight to
    the soft distribution, so the hard and soft paths backpropagate
    identically.
    """
    sv = soft.value
    arg = np.argmax(sv, axis=axis)
    hard = np.zeros_like(sv)
    np.put_along_axis(hard, np.expand_dims(arg, axis), 1.0, axis=axis)
    return soft.tape._push("st_onehot", (soft,), (), hard)


@_op("st_onehot")
def _b_st_onehot(node, g):
    return [(0, g)]


# ---------------------------------------------------------------------------
# complex values as (re, im) pairs


class CVal:
    """A complex tensor carried as two real Vars; ``im=None`` means real."""

    __slots__ = ("re", "im")

    def __init__(self, re: Var, im: Var | None = None):
        self.re = re
        self.im = im

    @property
    def value(self) -> np.ndarray:
        if self.im is None:
            return self.re.value
        return self.re.value + 1j * self.im.value

    @property
    def shape(self):
        return self.re.shape


def cval(tape: Tape, z) -> CVal:
    """Lift a (complex or real) ndarray into constant leaves."""
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return CVal(tape.const(np.ascontiguousarray(z.real)), tape.const(np.ascontiguousarray(z.imag)))
    return CVal(tape.const(z.astype(np.float64)))


def cadd(a: CVal, b: CVal) -> CVal:
    if a.im is None and b.im is None:
        return CVal(add(a.re, b.re))
    tape = a.re.tape
    are, aim = a.re, a.im if a.im is not None else tape.const(np.zeros(a.shape))
    bre, bim = b.re, b.im if b.im is not None else tape.const(np.zeros(b.shape))
    return CVal(add(are, bre), add(aim, bim))


def cconv_pair(x: CVal, w: CVal, bias: CVal | None = None) -> CVal:
    """Complex circular convolution from four real convolutions.

    x [B,C,*sp], w [O,C,*k]; real inputs (im None) stay real when the
    kernel is real too.
    """
    if x.im is None and w.im is None:
        out = CVal(conv_circ(x.re, w.re))
    else:
        tape = x.re.tape
        xre = x.re
        xim = x.im if x.im is not None else tape.const(np.zeros(x.shape))
        wre, wim = w.re, w.im if w.im is not None else tape.const(np.zeros(w.shape))
        out = CVal(
            sub(conv_circ(xre, wre), conv_circ(xim, wim)),
            add(conv_circ(xre, wim), conv_circ(xim, wre)),
        )
    if bias is not None:
        b_shape = (1, -1) + (1,) * (len(x.shape) - 2)
        out_re = add(out.re, reshape(bias.re, b_shape))
        if out.im is None:
            return CVal(out_re)
        b_im = reshape(bias.im, b_shape) if bias.im is not None else None
        return CVal(out_re, out.im if b_im is None else add(out.im, b_im))
    return out


def clinear_pair(x: CVal, w: CVal, bias: CVal | None = None) -> CVal:
    """Complex affine map: x [..., in] @ w [in, out] (+ bias [out])."""
    if x.im is None and w.im is None:
        out = CVal(matmul(x.re, w.re))
    else:
        tape = x.re.tape
        xre = x.re
        xim = x.im if x.im is not None else tape.const(np.zeros(x.shape))
        wre, wim = w.re, w.im if w.im is not None else tape.const(np.zeros(w.shape))
        out = CVal(
            sub(matmul(xre, wre), matmul(xim, wim)),
            add(matmul(xre, wim), matmul(xim, wre)),
        )
    if bias is not None:
        if out.im is None:
            return CVal(add(out.re, bias.re))
        im_b = bias.im if bias.im is not None else None
        return CVal(add(out.re, bias.re), out.im if im_b is None else add(out.im, im_b))
    return out


def modrelu_pair(x: CVal, b: Var) -> CVal:
    """Magnitude-thresholded, phase-preserving activation on a pair.

    ``b`` must already be shaped to broadcast against x (e.g. [C,1] for
    1D feature maps, [C,1,1] for 2D).
    """
    if x.im is None:
        raise ValueError("modrelu_pair needs a complex pair; use relu for real tensors")
    s = modrelu_scale(x.re, x.im, b)
    return CVal(mul(s, x.re), mul(s, x.im))


def cmodulus(x: CVal) -> Var:
    if x.im is None:
        return vsqrt(mul(x.re, x.re))
    return vsqrt(add(mul(x.re, x.re), mul(x.im, x.im)))


def cglobal_mean(x: CVal, spatial: int) -> CVal:
    """Mean over the trailing ``spatial`` axes; shift-invariant head."""
    axes = tuple(range(len(x.shape) - spatial, len(x.shape)))
    if x.im is None:
        return CVal(vmean(x.re, axis=axes))
    return CVal(vmean(x.re, axis=axes), vmean(x.im, axis=axes))


# ---------------------------------------------------------------------------
# verification and optimization


@dataclass
class GradcheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradcheckReport:
    tol: float
    entries: list[GradcheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def __str__(self):
        lines = [
            f"  {e.name:<24s} max_rel_err={e.max_rel_err:.3e}  "
            f"{'pass' if e.passed else 'FAIL'}"
            for e in self.entries
        ]
        status = "pass" if self.passed else "FAIL"
        return "\n".join(lines + [f"gradcheck: {status} (tol {self.tol:g})"])


def gradcheck(f, params: list[Param], h: float = 1e-6, tol: float = 1e-4) -> GradcheckReport:
    """Compare tape gradients of ``f(params) -> Var`` with central differences.

    ``f`` must build a fresh recording tape on every call and return the
    scalar loss Var. The caller guarantees ``f`` has no kink within ``h``
    of the evaluation point.
    """
    for p in params:
        p.zero_grad()
    loss = f(params)
    loss.tape.backward(loss)
    report = GradcheckReport(tol=tol)
    for p in params:
        g_ad = p.grad.copy()
        g_fd = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        fd = g_fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(np.asarray(f(params).value))
            flat[i] = orig - h
            fm = float(np.asarray(f(params).value))
            flat[i] = orig
            fd[i] = (fp - fm) / (2.0 * h)
        rel = np.abs(g_ad - g_fd) / (np.abs(g_fd) + 1e-12)
        err = float(rel.max()) if rel.size else 0.0
        report.entries.append(GradcheckEntry(p.name or "param", err, err <= tol))
    return report


ADAMW_PRESETS = {
    # task -> (lr, weight_decay)
    "classify": (1e-3, 1e-5),
    "segment": (1e-3, 5e-4),
    "reconstruct": (5e-4, 0.0),
}


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.value -= self.lr * (update + self.weight_decay * p.value)
