"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tape records every operation in creation order (a Wengert list). For a
define-by-run graph, creation order is a topological order, so backward()
seeds the loss adjoint with 1 and sweeps the list in reverse, accumulating
adjoints into every reachable node. Intermediate tensors (e.g. the per-point
feature matrix of the encoder) keep their adjoint after the sweep, which is
what channel-weighted saliency needs.

Everything is float64 and eager; there is no fusion or graph rewriting.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "linear",
    "relu",
    "max_pool_points",
    "max_pool_groups",
    "cosine_logits",
    "soft_cross_entropy",
    "pick",
    "pick_rows",
    "take_row",
    "sum_all",
    "mean_all",
    "add",
    "add_const",
    "mul_const",
    "scale",
    "euclidean",
    "grad_check",
]

_NORM_EPS = 1e-12


class Tensor:
    """A node on a Tape: cached forward value plus an adjoint slot."""

    __slots__ = ("tape", "data", "parents", "grad", "_grad_fn", "name")

    def __init__(self, tape, data, parents=(), grad_fn=None, name=""):
        self.tape = tape
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = tuple(parents)
        self.grad = None
        self._grad_fn = grad_fn
        self.name = name
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"


class Tape:
    """Ordered record of one forward pass; nodes appear after their inputs."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __len__(self):
        return len(self._nodes)

    def leaf(self, data, name="") -> Tensor:
        """Wrap raw values (parameters or constants) as a gradient sink."""
        return Tensor(self, data, (), None, name)

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every node that the scalar loss depends on.

        Adjoints accumulate by addition, so a tensor used in several places
        (a parameter bound once and encoded three times, say) collects the
        sum of all its downstream contributions.
        """
        if loss.tape is not self:
            raise ValueError("loss tensor belongs to a different tape")
        if loss.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.asarray(1.0)
        for node in reversed(self._nodes):
            if node.grad is None or node._grad_fn is None:
                continue
            parent_grads = node._grad_fn(node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=np.float64)
                else:
                    parent.grad = parent.grad + g


def _tape_of(*tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError("operands recorded on different tapes")
    return tape


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: out[i, j] = sum_k x[i, k] * w[k, j] + b[j]."""
    tape = _tape_of(x, w, b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ValueError("linear expects x (N,in), w (in,out), b (out,)")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(
            f"linear shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}"
        )
    out = x.data @ w.data + b.data

    def grad_fn(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor(tape, out, (x, w, b), grad_fn, "linear")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); the subgradient at 0 is 0."""
    mask = x.data > 0.0

    def grad_fn(g):
        return (g * mask,)

    return Tensor(x.tape, np.where(mask, x.data, 0.0), (x,), grad_fn, "relu")


def max_pool_points(a: Tensor) -> Tensor:
    """Column-wise max over the point axis: (N, d) -> (d,).

    Each channel routes its adjoint to the lowest-index row attaining the
    max, which keeps backward deterministic under ties.
    """
    if a.ndim != 2:
        raise ValueError("max_pool_points expects a 2-D array (N, d)")
    n, d = a.shape
    if n == 0:
        raise ValueError("max_pool_points rejects an empty point axis")
    arg = a.data.argmax(axis=0)  # first max per column
    out = a.data[arg, np.arange(d)]

    def grad_fn(g):
        z = np.zeros_like(a.data)
        z[arg, np.arange(d)] = g
        return (z,)

    return Tensor(a.tape, out, (a,), grad_fn, "max_pool_points")


def max_pool_groups(a: Tensor, sizes) -> Tensor:
    """Per-group column-wise max: rows of `a` are B stacked clouds.

    `sizes` gives the row count of each group; the output is (B, d). The
    tie rule matches max_pool_points within every group.
    """
    sizes = np.asarray(sizes, dtype=np.intp)
    if a.ndim != 2:
        raise ValueError("max_pool_groups expects a 2-D array")
    if sizes.min(initial=1) < 1:
        raise ValueError("every group must contain at least one row")
    if int(sizes.sum()) != a.shape[0]:
        raise ValueError("group sizes do not add up to the row count")
    d = a.shape[1]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    out = np.empty((len(sizes), d))
    args = np.empty((len(sizes), d), dtype=np.intp)
    for g_idx in range(len(sizes)):
        block = a.data[offsets[g_idx] : offsets[g_idx + 1]]
        arg = block.argmax(axis=0)
        args[g_idx] = arg + offsets[g_idx]
        out[g_idx] = block[arg, np.arange(d)]

    def grad_fn(g):
        z = np.zeros_like(a.data)
        cols = np.arange(d)
        for g_idx in range(len(sizes)):
            z[args[g_idx], cols] += g[g_idx]
        return (z,)

    return Tensor(a.tape, out, (a,), grad_fn, "max_pool_groups")


def cosine_logits(f: Tensor, bank: Tensor) -> Tensor:
    """Cosine similarity of feature rows against every bank row.

    f is (d,) or (B, d); bank is (K, d). The result is clipped into
    [-1, 1] to absorb rounding above Cauchy-Schwarz; the clip is treated
    as identity in backward (it only binds on exactly parallel vectors).
    """
    tape = _tape_of(f, bank)
    single = f.ndim == 1
    fd = f.data[None, :] if single else f.data
    if bank.ndim != 2 or fd.shape[1] != bank.shape[1]:
        raise ValueError(f"cosine_logits shape mismatch: f {f.shape}, bank {bank.shape}")
    fn = np.linalg.norm(fd, axis=1)  # (B,)
    mn = np.linalg.norm(bank.data, axis=1)  # (K,)
    if fn.min(initial=np.inf) <= _NORM_EPS:
        raise ValueError("cosine_logits: feature norm underflow (zero vector)")
    if mn.min(initial=np.inf) <= _NORM_EPS:
        raise ValueError("cosine_logits: prototype norm underflow (zero row)")
    z = (fd @ bank.data.T) / (fn[:, None] * mn[None, :])
    z = np.clip(z, -1.0, 1.0)

    def grad_fn(g):
        g2 = g[None, :] if single else g
        df = (g2 / mn[None, :]) @ bank.data / fn[:, None] \
            - ((g2 * z).sum(axis=1))[:, None] * fd / (fn**2)[:, None]
        dbank = (g2 / fn[:, None]).T @ fd / mn[:, None] \
            - ((g2 * z).sum(axis=0))[:, None] * bank.data / (mn**2)[:, None]
        return (df[0] if single else df), dbank

    return Tensor(tape, z[0] if single else z, (f, bank), grad_fn, "cosine_logits")


def soft_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Cross-entropy of log-softmax(logits) against a fixed target row.

    targets is a constant probability vector (or matrix matching a batch of
    logit rows). Returns a scalar for 1-D logits and a per-row vector for
    2-D logits. Stabilized with the usual max-shift log-sum-exp.
    """
    t = np.asarray(targets, dtype=np.float64)
    single = logits.ndim == 1
    y = logits.data[None, :] if single else logits.data
    t2 = t[None, :] if single else t
    if y.shape != t2.shape:
        raise ValueError(f"soft_cross_entropy shape mismatch: {logits.shape} vs {t.shape}")
    m = y.max(axis=1, keepdims=True)
    ex = np.exp(y - m)
    lse = np.log(ex.sum(axis=1)) + m[:, 0]  # (B,)
    loss = lse * t2.sum(axis=1) - (t2 * y).sum(axis=1)
    sm = ex / ex.sum(axis=1, keepdims=True)

    def grad_fn(g):
        g2 = np.asarray(g).reshape(-1, 1)
        dy = g2 * (sm * t2.sum(axis=1, keepdims=True) - t2)
        return (dy[0] if single else dy,)

    return Tensor(logits.tape, loss[0] if single else loss, (logits,), grad_fn, "soft_ce")


def pick(x: Tensor, index: int) -> Tensor:
    """Scalar element of a 1-D tensor."""
    if x.ndim != 1:
        raise ValueError("pick expects a 1-D tensor")
    index = int(index)

    def grad_fn(g):
        z = np.zeros_like(x.data)
        z[index] = g
        return (z,)

    return Tensor(x.tape, x.data[index], (x,), grad_fn, "pick")


def pick_rows(x: Tensor, indices) -> Tensor:
    """out[b] = x[b, indices[b]] for a 2-D tensor."""
    idx = np.asarray(indices, dtype=np.intp)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ValueError("pick_rows expects x (B, K) and one index per row")
    rows = np.arange(x.shape[0])

    def grad_fn(g):
        z = np.zeros_like(x.data)
        z[rows, idx] = g
        return (z,)

    return Tensor(x.tape, x.data[rows, idx], (x,), grad_fn, "pick_rows")


def take_row(x: Tensor, index: int) -> Tensor:
    """Row slice of a 2-D tensor as a 1-D tensor."""
    if x.ndim != 2:
        raise ValueError("take_row expects a 2-D tensor")
    index = int(index)

    def grad_fn(g):
        z = np.zeros_like(x.data)
        z[index] = g
        return (z,)

    return Tensor(x.tape, x.data[index], (x,), grad_fn, "take_row")


def sum_all(x: Tensor) -> Tensor:
    def grad_fn(g):
        return (np.full_like(x.data, float(g)),)

    return Tensor(x.tape, x.data.sum(), (x,), grad_fn, "sum")


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size

    def grad_fn(g):
        return (np.full_like(x.data, float(g) / n),)

    return Tensor(x.tape, x.data.mean(), (x,), grad_fn, "mean")


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _tape_of(a, b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def grad_fn(g):
        return g, g

    return Tensor(tape, a.data + b.data, (a, b), grad_fn, "add")


def add_const(a: Tensor, c: float) -> Tensor:
    def grad_fn(g):
        return (g,)

    return Tensor(a.tape, a.data + c, (a,), grad_fn, "add_const")


def mul_const(a: Tensor, c) -> Tensor:
    """Elementwise product with a constant array (or scalar)."""
    c = np.asarray(c, dtype=np.float64)

    def grad_fn(g):
        return (g * c,)

    return Tensor(a.tape, a.data * c, (a,), grad_fn, "mul_const")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def grad_fn(g):
        return (g * c,)

    return Tensor(a.tape, a.data * c, (a,), grad_fn, "scale")


def euclidean(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean distance between two 1-D tensors (subgradient 0 at a == b)."""
    tape = _tape_of(a, b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("euclidean expects two 1-D tensors of equal length")
    if not (np.isfinite(a.data).all() and np.isfinite(b.data).all()):
        raise ValueError("euclidean rejects non-finite inputs")
    diff = a.data - b.data
    dist = float(np.sqrt((diff * diff).sum()))

    def grad_fn(g):
        if dist <= _NORM_EPS:
            z = np.zeros_like(diff)
            return z, z
        d = (float(g) / dist) * diff
        return d, -d

    return Tensor(tape, dist, (a, b), grad_fn, "euclidean")


def grad_check(f, theta: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between f's analytic gradient and central differences.

    f maps a flat parameter vector to (value, gradient). Central differences
    use step h per coordinate: (f(t + h e_i) - f(t - h e_i)) / (2 h). The
    relative error is |a - n| / max(1, |a|, |n|), so near-zero gradients are
    compared on an absolute scale.
    """
    if h <= 0:
        raise ValueError("grad_check requires h > 0")
    theta = np.asarray(theta, dtype=np.float64)
    value, analytic = f(theta)
    if not np.isfinite(value):
        raise ValueError("grad_check: function value is not finite")
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ValueError("analytic gradient shape does not match theta")
    worst = 0.0
    for i in range(theta.size):
        bump = np.zeros_like(theta)
        bump.flat[i] = h
        up, _ = f(theta + bump)
        down, _ = f(theta - bump)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("grad_check: perturbed function value is not finite")
        numeric = (up - down) / (2.0 * h)
        a = analytic.flat[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
