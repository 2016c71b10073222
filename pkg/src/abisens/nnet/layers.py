"""Network building blocks: linear stacks, a gated recurrent unit, and the
two summary architectures (permutation-invariant deep set, recurrent).

Every module has a tape-based ``forward`` used during training and a plain
numpy ``apply`` used at inference time; both compute the same expressions
in the same order, so their outputs coincide bitwise.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .tape import Node, Tape, _val


class Param:
    """Persistent weight array, bound to a fresh leaf node per batch."""

    __slots__ = ("value", "node")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.node = None

    def bind(self, t: Tape) -> Node:
        self.node = t.leaf(self.value)
        return self.node


class Module:
    def named_params(self, prefix=""):
        raise NotImplementedError

    def bind(self, t: Tape) -> None:
        for _, p in self.named_params():
            p.bind(t)


def glorot(rng, fan_in, fan_out, shape=None):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape if shape is not None else (fan_in, fan_out))


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, zero_init=False):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            w = glorot(rng, in_dim, out_dim)
        self.w = Param(w)
        self.b = Param(np.zeros(out_dim))

    def named_params(self, prefix=""):
        return [(prefix + "w", self.w), (prefix + "b", self.b)]

    def forward(self, t: Tape, x):
        return t.add(t.matmul(x, self.w.node), self.b.node)

    def apply(self, x):
        return x @ self.w.value + self.b.value


class MLP(Module):
    """Dense stack with tanh between layers (smooth, so the flow Jacobians
    and gradient checks stay well behaved), plus an optional linear skip
    from input to output so affine maps are exactly representable."""

    def __init__(self, dims, rng, zero_last=False, skip=False):
        if len(dims) < 2:
            raise UsageError("MLP needs at least input and output dims")
        self.layers = [
            Linear(dims[k], dims[k + 1], rng, zero_init=(zero_last and k == len(dims) - 2))
            for k in range(len(dims) - 1)
        ]
        self.skip = Linear(dims[0], dims[-1], rng, zero_init=zero_last) if skip else None

    def named_params(self, prefix=""):
        out = []
        for k, layer in enumerate(self.layers):
            out.extend(layer.named_params(f"{prefix}lin{k}."))
        if self.skip is not None:
            out.extend(self.skip.named_params(f"{prefix}skip."))
        return out

    def forward(self, t: Tape, x):
        h = x
        for layer in self.layers[:-1]:
            h = t.tanh(layer.forward(t, h))
        out = self.layers[-1].forward(t, h)
        if self.skip is not None:
            out = t.add(out, self.skip.forward(t, x))
        return out

    def apply(self, x):
        h = x
        for layer in self.layers[:-1]:
            h = np.tanh(layer.apply(h))
        out = self.layers[-1].apply(h)
        if self.skip is not None:
            out = out + self.skip.apply(x)
        return out


class GRU(Module):
    def __init__(self, in_dim, hidden, rng):
        self.hidden = hidden
        self.wz = Param(glorot(rng, in_dim, hidden))
        self.uz = Param(glorot(rng, hidden, hidden))
        self.bz = Param(np.zeros(hidden))
        self.wr = Param(glorot(rng, in_dim, hidden))
        self.ur = Param(glorot(rng, hidden, hidden))
        self.br = Param(np.zeros(hidden))
        self.wc = Param(glorot(rng, in_dim, hidden))
        self.uc = Param(glorot(rng, hidden, hidden))
        self.bc = Param(np.zeros(hidden))

    def named_params(self, prefix=""):
        names = ["wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc"]
        return [(prefix + n, getattr(self, n)) for n in names]

    def forward(self, t: Tape, x_seq) -> Node:
        """Run over a (B, T, F) series; returns the final hidden state."""
        x_seq = _val(x_seq)
        n, steps, _ = x_seq.shape
        h = t.leaf(np.zeros((n, self.hidden)))
        for k in range(steps):
            x = x_seq[:, k, :]
            z = t.sigmoid(t.add(t.add(t.matmul(t.leaf(x), self.wz.node), t.matmul(h, self.uz.node)), self.bz.node))
            r = t.sigmoid(t.add(t.add(t.matmul(t.leaf(x), self.wr.node), t.matmul(h, self.ur.node)), self.br.node))
            c = t.tanh(t.add(t.add(t.matmul(t.leaf(x), self.wc.node), t.matmul(t.mul(r, h), self.uc.node)), self.bc.node))
            h = t.add(h, t.mul(z, t.sub(c, h)))
        return h

    def apply(self, x_seq):
        n, steps, _ = x_seq.shape
        h = np.zeros((n, self.hidden))
        for k in range(steps):
            x = x_seq[:, k, :]
            z = _np_sigmoid(x @ self.wz.value + h @ self.uz.value + self.bz.value)
            r = _np_sigmoid(x @ self.wr.value + h @ self.ur.value + self.br.value)
            c = np.tanh(x @ self.wc.value + (r * h) @ self.uc.value + self.bc.value)
            h = h + z * (c - h)
        return h


def _np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class DeepSetSummary(Module):
    """Permutation-invariant summary: row-wise MLP, mean pool, outer MLP."""

    kind = "deepset"

    def __init__(self, in_dim, summary_dim, hidden, rng):
        self.in_dim = in_dim
        self.summary_dim = summary_dim
        self.inner = MLP([in_dim, hidden, hidden], rng, skip=True)
        self.outer = MLP([hidden, hidden, summary_dim], rng, skip=True)

    def named_params(self, prefix=""):
        return self.inner.named_params(prefix + "inner.") + self.outer.named_params(prefix + "outer.")

    def forward(self, t: Tape, x):
        xv = _val(x)
        if xv.ndim != 3 or xv.shape[1] == 0:
            raise UsageError("deep set expects a nonempty (batch, set, feature) array")
        n, set_size, f = xv.shape
        flat = t.reshape(x if isinstance(x, Node) else t.leaf(xv), (n * set_size, f))
        feat = t.tanh(self.inner.forward(t, flat))
        pooled = t.mean(t.reshape(feat, (n, set_size, -1)), axis=1)
        return self.outer.forward(t, pooled)

    def apply(self, x):
        if x.ndim != 3 or x.shape[1] == 0:
            raise UsageError("deep set expects a nonempty (batch, set, feature) array")
        n, set_size, f = x.shape
        feat = np.tanh(self.inner.apply(x.reshape(n * set_size, f)))
        pooled = feat.reshape(n, set_size, -1).mean(axis=1)
        return self.outer.apply(pooled)


class RecurrentSummary(Module):
    """Order-sensitive summary for time series: GRU, then a linear head."""

    kind = "recurrent"

    def __init__(self, in_dim, summary_dim, hidden, rng):
        self.in_dim = in_dim
        self.summary_dim = summary_dim
        self.gru = GRU(in_dim, hidden, rng)
        self.head = Linear(hidden, summary_dim, rng)

    def named_params(self, prefix=""):
        return self.gru.named_params(prefix + "gru.") + self.head.named_params(prefix + "head.")

    def forward(self, t: Tape, x):
        xv = _val(x)
        if xv.ndim != 3 or xv.shape[1] == 0:
            raise UsageError("recurrent summary expects a nonempty (batch, time, feature) array")
        return self.head.forward(t, self.gru.forward(t, xv))

    def apply(self, x):
        if x.ndim != 3 or x.shape[1] == 0:
            raise UsageError("recurrent summary expects a nonempty (batch, time, feature) array")
        return self.head.apply(self.gru.apply(x))


class Classifier(Module):
    """Softmax model-comparison head on (summary, context) features."""

    def __init__(self, in_dim, n_models, hidden, rng):
        self.n_models = n_models
        self.mlp = MLP([in_dim, hidden, hidden, n_models], rng)

    def named_params(self, prefix=""):
        return self.mlp.named_params(prefix + "mlp.")

    def forward(self, t: Tape, features):
        return self.mlp.forward(t, features)

    def apply(self, features):
        return self.mlp.apply(features)

    def probabilities(self, features):
        logits = self.apply(features)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        ex = np.exp(shifted)
        return ex / ex.sum(axis=-1, keepdims=True)
