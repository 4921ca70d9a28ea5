"""Reverse-mode automatic differentiation on dense float64 arrays.

A ``Tensor`` wraps a numpy array plus an optional gradient buffer. Applying
an operation records the inputs and a backward closure on the output, so the
implicit graph is built as values are computed. ``Tensor.backward()`` walks
that graph once in reverse topological order and accumulates gradients into
every tensor that requires them.

Design rules kept deliberately strict:

- all computation is float64; shapes are fixed at construction,
- there is no implicit broadcasting: elementwise ops demand identical
  shapes, and the few mixed-shape ops (``add_rowvec``, ``conv2d`` bias)
  state their contract explicitly,
- ties in max-style reductions resolve to the first index in row-major
  order, so every run of a graph is bit-for-bit reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "add_rowvec",
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "softmax_rows",
    "sum_all",
    "take_row",
    "take_element",
    "slice_cols",
    "conv2d",
    "max_pool2d",
    "global_avg_pool",
    "global_max_pool",
    "lstm_cell_step",
    "cross_entropy",
    "check_gradients",
    "lift_row",
    "squeeze_row",
]


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    ``requires_grad`` marks leaves that should receive gradients; it
    propagates automatically to every value computed from such a leaf.
    ``data`` must not be mutated once the tensor participates in a graph;
    use :meth:`assign` to install new values between training steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def assign(self, data) -> None:
        """Replace the stored values; the shape is immutable."""
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign cannot change shape {self.data.shape} to {arr.shape}")
        self.data = arr

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` for every leaf.

        Only defined for scalar outputs. Forward values are never touched,
        so a graph can be re-walked after backward and produce the same
        numbers.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _topo_order(root: Tensor) -> list:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} requires identical shapes, got {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    """Multiply by a plain Python constant (not differentiated through)."""
    factor = float(factor)

    def backward(g):
        _accumulate(a, g * factor)

    return _node(a.data * factor, (a,), backward)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-K vector to every row of an (N, K) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec needs (N, K) and (K,), got {m.shape} and {v.shape}")

    def backward(g):
        _accumulate(m, g)
        _accumulate(v, g.sum(axis=0))

    return _node(m.data + v.data[None, :], (m, v), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs (N, K) @ (K, M), got {a.shape} and {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward(g):
        _accumulate(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out_data[~pos] = ez / (1.0 + ez)

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _node(np.asarray(a.data.sum()), (a,), backward)


def take_row(m: Tensor, index: int) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeError(f"take_row needs a 2-d tensor, got {m.shape}")
    if not 0 <= index < m.shape[0]:
        raise ShapeError(f"row {index} out of range for shape {m.shape}")

    def backward(g):
        full = np.zeros_like(m.data)
        full[index] = g
        _accumulate(m, full)

    return _node(m.data[index].copy(), (m,), backward)


def take_element(v: Tensor, index: int) -> Tensor:
    if v.data.ndim != 1:
        raise ShapeError(f"take_element needs a 1-d tensor, got {v.shape}")
    if not 0 <= index < v.shape[0]:
        raise ShapeError(f"element {index} out of range for shape {v.shape}")

    def backward(g):
        full = np.zeros_like(v.data)
        full[index] = float(g)
        _accumulate(v, full)

    return _node(np.asarray(v.data[index]), (v,), backward)


def slice_cols(m: Tensor, start: int, stop: int) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeError(f"slice_cols needs a 2-d tensor, got {m.shape}")
    if not 0 <= start < stop <= m.shape[1]:
        raise ShapeError(f"column slice [{start}:{stop}] out of range for shape {m.shape}")

    def backward(g):
        full = np.zeros_like(m.data)
        full[:, start:stop] = g
        _accumulate(m, full)

    return _node(m.data[:, start:stop].copy(), (m,), backward)


# ---------------------------------------------------------------------------
# softmax and loss
# ---------------------------------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    """Normalized exponentials of a vector, computed with max-subtraction."""
    if logits.data.ndim != 1 or logits.shape[0] < 1:
        raise ShapeError(f"softmax needs a non-empty 1-d tensor, got {logits.shape}")
    if np.isnan(logits.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = logits.data - logits.data.max()
    e = np.exp(shifted)
    out_data = e / e.sum()

    def backward(g):
        _accumulate(logits, out_data * (g - float(np.dot(g, out_data))))

    return _node(out_data, (logits,), backward)


def softmax_rows(logits: Tensor) -> Tensor:
    """Row-wise softmax of an (N, C) matrix, max-subtracted per row."""
    if logits.data.ndim != 2 or logits.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs an (N, C) tensor, got {logits.shape}")
    if np.isnan(logits.data).any():
        raise NumericError("softmax input contains NaN")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=1, keepdims=True)
        _accumulate(logits, out_data * (g - inner))

    return _node(out_data, (logits,), backward)


PROB_FLOOR = 1e-12


def cross_entropy(p: Tensor, target_onehot: np.ndarray) -> Tensor:
    """-sum(g * log p) for a one-hot target; p is clamped at 1e-12 before log."""
    target = np.asarray(target_onehot, dtype=np.float64)
    if p.data.ndim != 1 or target.shape != p.shape:
        raise ShapeError(f"cross_entropy needs matching 1-d shapes, got {p.shape} and {target.shape}")
    total = float(p.data.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"cross_entropy needs a normalized probability vector, sum was {total!r}")
    clamped = np.maximum(p.data, PROB_FLOOR)
    loss = -float(np.dot(target, np.log(clamped)))

    def backward(g):
        gp = np.where(p.data > PROB_FLOOR, -target / clamped, 0.0)
        _accumulate(p, float(g) * gp)

    return _node(np.asarray(loss), (p,), backward)


# ---------------------------------------------------------------------------
# spatial operations (single image H x W x C or batched B x H x W x C)
# ---------------------------------------------------------------------------

def _as_batched(x: Tensor, op: str):
    if x.data.ndim == 3:
        return x.data[None, ...], True
    if x.data.ndim == 4:
        return x.data, False
    raise ShapeError(f"{op} needs an (H, W, C) or (B, H, W, C) tensor, got {x.shape}")


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # xp: (B, Hp, Wp, Cin) -> (B*Ho*Wo, kh*kw*Cin), window layout matching
    # kernels reshaped as (kh*kw*Cin, Cout)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # windows: (B, Ho, Wo, Cin, kh, kw) -> (B, Ho, Wo, kh, kw, Cin)
    windows = windows.transpose(0, 1, 2, 4, 5, 3)
    b, ho, wo = windows.shape[:3]
    return np.ascontiguousarray(windows).reshape(b * ho * wo, kh * kw * windows.shape[5])


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """2-d convolution (cross-correlation) over the spatial axes.

    ``kernels`` is (kh, kw, Cin, Cout) with odd kh, kw; ``bias`` is (Cout,).
    ``padding`` is "same" (zero-padded, spatial size preserved) or "valid".
    """
    xb, squeeze = _as_batched(x, "conv2d")
    if kernels.data.ndim != 4:
        raise ShapeError(f"conv2d kernels must be (kh, kw, Cin, Cout), got {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if xb.shape[3] != cin:
        raise ShapeError(
            f"conv2d input has {xb.shape[3]} channels but kernels expect Cin={cin} "
            f"(input {x.shape}, kernels {kernels.shape})"
        )
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d bias must be ({cout},), got {bias.shape}")
    if padding not in ("same", "valid"):
        raise ShapeError(f"conv2d padding must be 'same' or 'valid', got {padding!r}")

    b, h, w, _ = xb.shape
    if padding == "same":
        ph, pw = kh // 2, kw // 2
        xp = np.pad(xb, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        ho, wo = h, w
    else:
        if h < kh or w < kw:
            raise ShapeError(f"conv2d valid padding needs input >= kernel, got {h}x{w} vs {kh}x{kw}")
        ph = pw = 0
        xp = xb
        ho, wo = h - kh + 1, w - kw + 1

    cols = _im2col(xp, kh, kw)
    k2d = kernels.data.reshape(kh * kw * cin, cout)
    out2d = cols @ k2d + bias.data[None, :]
    out_data = out2d.reshape(b, ho, wo, cout)
    if squeeze:
        out_data = out_data[0]

    def backward(g):
        g4 = g[None, ...] if squeeze else g
        g2d = g4.reshape(b * ho * wo, cout)
        if bias.requires_grad:
            _accumulate(bias, g2d.sum(axis=0))
        if kernels.requires_grad:
            # im2col is recomputed here instead of cached: memory stays flat
            # and the extra pass is cheap next to the GEMMs.
            cols_b = _im2col(xp, kh, kw)
            _accumulate(kernels, (cols_b.T @ g2d).reshape(kh, kw, cin, cout))
        if x.requires_grad:
            gcols = (g2d @ k2d.T).reshape(b, ho, wo, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for di in range(kh):
                for dj in range(kw):
                    gxp[:, di:di + ho, dj:dj + wo, :] += gcols[:, :, :, di, dj, :]
            gx = gxp[:, ph:ph + h, pw:pw + w, :] if padding == "same" else gxp
            _accumulate(x, gx[0] if squeeze else gx)

    return _node(out_data, (x, kernels, bias), backward)


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient flows to the first argmax."""
    xb, squeeze = _as_batched(x, "max_pool2d")
    b, h, w, c = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    ho, wo = h // 2, w // 2
    # window cells flattened in row-major order so argmax ties resolve to
    # the first cell
    windows = xb.reshape(b, ho, 2, wo, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, ho, wo, 4, c)
    arg = windows.argmax(axis=3)
    out_data = np.take_along_axis(windows, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    if squeeze:
        out_data = out_data[0]

    def backward(g):
        g4 = g[None, ...] if squeeze else g
        gw = np.zeros((b, ho, wo, 4, c))
        np.put_along_axis(gw, arg[:, :, :, None, :], g4[:, :, :, None, :], axis=3)
        gx = gw.reshape(b, ho, wo, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, h, w, c)
        _accumulate(x, gx[0] if squeeze else gx)

    return _node(out_data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (H, W, C) -> (C,); no parameters."""
    xb, squeeze = _as_batched(x, "global_avg_pool")
    b, h, w, c = xb.shape
    out_data = xb.mean(axis=(1, 2))
    if squeeze:
        out_data = out_data[0]

    def backward(g):
        g2 = g[None, :] if squeeze else g
        gx = np.broadcast_to(g2[:, None, None, :] / (h * w), (b, h, w, c)).copy()
        _accumulate(x, gx[0] if squeeze else gx)

    return _node(out_data, (x,), backward)


def global_max_pool(x: Tensor) -> Tensor:
    """Max over the spatial axes; gradient flows to the first argmax."""
    xb, squeeze = _as_batched(x, "global_max_pool")
    b, h, w, c = xb.shape
    flat = xb.reshape(b, h * w, c)
    arg = flat.argmax(axis=1)
    out_data = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]
    if squeeze:
        out_data = out_data[0]

    def backward(g):
        g2 = g[None, :] if squeeze else g
        gflat = np.zeros((b, h * w, c))
        np.put_along_axis(gflat, arg[:, None, :], g2[:, None, :], axis=1)
        gx = gflat.reshape(b, h, w, c)
        _accumulate(x, gx[0] if squeeze else gx)

    return _node(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------

def lstm_cell_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                   w_x: Tensor, w_h: Tensor, bias: Tensor):
    """One LSTM step: gates ordered (input, forget, candidate, output).

    ``x`` is (D,) or (B, D); states follow with (U,) or (B, U). Kernels are
    ``w_x`` (D, 4U), ``w_h`` (U, 4U), ``bias`` (4U,). Returns (h, c).
    """
    vector_in = x.data.ndim == 1
    if vector_in:
        x = lift_row(x)
        h_prev = lift_row(h_prev)
        c_prev = lift_row(c_prev)
    if x.data.ndim != 2 or h_prev.data.ndim != 2 or c_prev.data.ndim != 2:
        raise ShapeError("lstm_cell_step needs 1-d or 2-d inputs")
    d = x.shape[1]
    u = h_prev.shape[1]
    if w_x.shape != (d, 4 * u) or w_h.shape != (u, 4 * u) or bias.shape != (4 * u,):
        raise ShapeError(
            f"lstm_cell_step kernels inconsistent: x {x.shape}, h {h_prev.shape}, "
            f"w_x {w_x.shape}, w_h {w_h.shape}, bias {bias.shape}"
        )
    if c_prev.shape != h_prev.shape or x.shape[0] != h_prev.shape[0]:
        raise ShapeError(f"lstm_cell_step state shapes disagree: {x.shape}, {h_prev.shape}, {c_prev.shape}")

    z = add_rowvec(add(matmul(x, w_x), matmul(h_prev, w_h)), bias)
    i = sigmoid(slice_cols(z, 0, u))
    f = sigmoid(slice_cols(z, u, 2 * u))
    g = tanh(slice_cols(z, 2 * u, 3 * u))
    o = sigmoid(slice_cols(z, 3 * u, 4 * u))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    if vector_in:
        return squeeze_row(h), squeeze_row(c)
    return h, c


def lift_row(v: Tensor) -> Tensor:
    """View a (K,) vector as a (1, K) matrix inside the graph."""
    def backward(g):
        _accumulate(v, g[0])

    return _node(v.data[None, :], (v,), backward)


def squeeze_row(m: Tensor) -> Tensor:
    """Collapse a (1, K) matrix back to a (K,) vector inside the graph."""
    def backward(g):
        _accumulate(m, g[None, :])

    return _node(m.data[0].copy(), (m,), backward)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def check_gradients(build_output, params, eps: float = 1e-5,
                    sample: int | None = None, rng=None) -> float:
    """Compare analytic gradients of a scalar graph against central differences.

    ``build_output`` is a zero-argument callable that reconstructs the graph
    and returns its scalar output tensor; it is re-invoked for every
    perturbed evaluation, which keeps the numeric estimate independent of
    the recorded backward rules. Returns the maximum over all checked
    entries of ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.

    ``sample`` limits the check to that many entries per parameter (drawn
    with ``rng``); by default every entry is checked.
    """
    params = list(params)
    out = build_output()
    if not isinstance(out, Tensor):
        raise ShapeError("build_output must return a Tensor")
    if out.data.size != 1:
        raise ShapeError(f"gradient check needs a scalar output, got shape {out.shape}")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        if sample is not None and flat.size > sample:
            chooser = rng if rng is not None else np.random.default_rng(0)
            indices = chooser.choice(flat.size, size=sample, replace=False)
        else:
            indices = range(flat.size)
        for idx in indices:
            saved = flat[idx]
            flat[idx] = saved + eps
            up = build_output().item()
            flat[idx] = saved - eps
            down = build_output().item()
            flat[idx] = saved
            numeric = (up - down) / (2.0 * eps)
            err = abs(aflat[idx] - numeric) / max(1e-8, abs(aflat[idx]) + abs(numeric))
            worst = max(worst, err)
    return worst
