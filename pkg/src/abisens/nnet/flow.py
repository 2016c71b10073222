"""Conditional affine coupling flow.

Each block keeps a masked half of the coordinates fixed and applies an
affine map to the rest, with scale and shift predicted by a subnet reading
the fixed half plus the conditioning vector (learned summary + encoded
context). Scales are soft-clamped through a bounded odd nonlinearity, so
log-determinants stay finite for any input.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError, UsageError
from .layers import MLP, Module, Tape, _val


class CouplingBlock(Module):
    def __init__(self, dim, cond_dim, hidden, clamp, mask, rng):
        self.dim = dim
        self.clamp = float(clamp)
        self.mask = np.asarray(mask, dtype=float)
        self.inv_mask = 1.0 - self.mask
        self.subnet = MLP([dim + cond_dim, hidden, hidden, 2 * dim], rng, zero_last=True, skip=True)

    def named_params(self, prefix=""):
        return self.subnet.named_params(prefix + "subnet.")

    def _scale_shift_apply(self, passive, cond):
        st = self.subnet.apply(np.concatenate([passive, cond], axis=1))
        raw, shift = st[:, : self.dim], st[:, self.dim :]
        s = np.arctan(raw * (1.0 / self.clamp)) * (2.0 * self.clamp / math.pi)
        return s, shift

    def forward(self, t: Tape, x, cond):
        xp = t.mul(x, self.mask)
        st = self.subnet.forward(t, t.concat([xp, cond], axis=1))
        raw = t.cols(st, 0, self.dim)
        shift = t.cols(st, self.dim, 2 * self.dim)
        s = t.mul(t.arctan(t.mul(raw, 1.0 / self.clamp)), 2.0 * self.clamp / math.pi)
        act = t.mul(t.add(t.mul(x, t.exp(s)), shift), self.inv_mask)
        y = t.add(xp, act)
        ld = t.sum(t.mul(s, self.inv_mask), axis=1)
        return y, ld

    def apply(self, x, cond):
        xp = x * self.mask
        s, shift = self._scale_shift_apply(xp, cond)
        act = (x * np.exp(s) + shift) * self.inv_mask
        y = xp + act
        ld = (s * self.inv_mask).sum(axis=1)
        return y, ld

    def inverse(self, y, cond):
        yp = y * self.mask
        s, shift = self._scale_shift_apply(yp, cond)
        x_act = ((y - shift) * np.exp(-s)) * self.inv_mask
        return yp + x_act


class CouplingFlow(Module):
    """Stack of affine coupling blocks with alternating binary masks."""

    def __init__(self, dim, cond_dim, n_blocks=6, hidden=64, clamp=1.9, rng=None):
        if dim < 2:
            raise UsageError("coupling flows need at least two dimensions")
        self.dim = dim
        self.cond_dim = cond_dim
        masks = [np.arange(dim) % 2 == (k % 2) for k in range(n_blocks)]
        self.blocks = [CouplingBlock(dim, cond_dim, hidden, clamp, m, rng) for k, m in enumerate(masks)]

    def named_params(self, prefix=""):
        out = []
        for k, block in enumerate(self.blocks):
            out.extend(block.named_params(f"{prefix}block{k}."))
        return out

    def forward(self, t: Tape, theta, cond):
        """theta -> (latent, log_det) on the tape."""
        y, total = theta, None
        for k, block in enumerate(self.blocks):
            y, ld = block.forward(t, y, cond)
            if not np.all(np.isfinite(y.value)):
                raise NumericError(f"non-finite activations in coupling block {k}")
            total = ld if total is None else t.add(total, ld)
        return y, total

    def apply_forward(self, theta, cond):
        """Numpy mirror of ``forward`` for inference and density evaluation."""
        y = theta
        total = np.zeros(theta.shape[0])
        for k, block in enumerate(self.blocks):
            y, ld = block.apply(y, cond)
            if not np.all(np.isfinite(y)):
                raise NumericError(f"non-finite activations in coupling block {k}")
            total = total + ld
        return y, total

    def inverse(self, z, cond):
        """latent -> theta; inverts the blocks in reverse order."""
        x = z
        for k, block in enumerate(reversed(self.blocks)):
            x = block.inverse(x, cond)
            if not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activations in coupling block {len(self.blocks) - 1 - k}")
        return x

    def log_density(self, theta, cond):
        z, ld = self.apply_forward(theta, cond)
        return -0.5 * self.dim * math.log(2.0 * math.pi) - 0.5 * (z * z).sum(axis=1) + ld
