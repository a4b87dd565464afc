"""Gaussian-masked attention blocks in Euclidean and Lorentz space.

Both families share the same wrapping block: attention output is added to
the input, layer-normalized, then passed through a two-layer feed-forward
with a second residual. Sequences are (B, M, d) stacks; 2-D (M, d) inputs
are promoted to a singleton batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from .autodiff import Tensor
from .errors import ArgumentError, DimensionError, NumericalError

PAD_LOGIT = -1e9
LN_EPS = 1e-5


def inv_softplus(y):
    """Raw value whose softplus is y."""
    return float(np.log(np.expm1(y)))


def gaussian_mask(size, variance):
    """Toeplitz matrix (1/2pi) * exp(-(j-i)^2 / variance); variance=inf is flat."""
    if size < 1:
        raise ArgumentError("mask size must be at least 1")
    if not math.isinf(variance) and variance <= 0:
        raise ArgumentError("mask variance must be positive or infinite")
    idx = np.arange(size)
    delta = idx[None, :] - idx[:, None]
    if math.isinf(variance):
        expo = np.zeros((size, size))
    else:
        expo = -(delta.astype(np.float64) ** 2) / variance
    return np.exp(expo) / (2.0 * np.pi)


def variance_schedule(count):
    """Variances 2^1 .. 2^(count-1) plus infinity; empty for count=0."""
    if count < 0:
        raise ArgumentError("block count must be non-negative")
    if count == 0:
        return []
    return [2.0 ** i for i in range(1, count)] + [math.inf]


def additive_pad_mask(valid):
    """Turn a boolean (B, M) validity mask into additive attention logits."""
    valid = np.asarray(valid, dtype=bool)
    return np.where(valid, 0.0, PAD_LOGIT)


# ---------------------------------------------------------------------------
# parameter containers

@dataclass
class EuclideanBlockParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int
    ln_gain: Tensor
    ln_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def named(self, prefix):
        return [(f"{prefix}.{k}", getattr(self, k))
                for k in ("wq", "wk", "wv", "wo", "ln_gain", "ln_bias",
                          "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")]


@dataclass
class LorentzLinearParams:
    w: Tensor        # (n_in+1, m) spatial map, applied as x @ w
    p: Tensor        # (n_in+1, 1) scale direction
    b: Tensor        # (m,)
    bprime: Tensor   # scalar
    lam_raw: Tensor  # scalar; softplus keeps the scale positive

    def named(self, prefix):
        return [(f"{prefix}.{k}", getattr(self, k))
                for k in ("w", "p", "b", "bprime", "lam_raw")]


@dataclass
class LorentzBlockParams:
    w1: Tensor        # (d, n) input projection
    beta_raw: Tensor  # scalar lift scale, softplus-parameterized
    q: LorentzLinearParams
    k: LorentzLinearParams
    v: LorentzLinearParams
    w2: Tensor        # (n, d) output projection
    ln_gain: Tensor
    ln_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def named(self, prefix):
        out = [(f"{prefix}.w1", self.w1), (f"{prefix}.beta_raw", self.beta_raw)]
        out += self.q.named(f"{prefix}.q")
        out += self.k.named(f"{prefix}.k")
        out += self.v.named(f"{prefix}.v")
        out += [(f"{prefix}.{k}", getattr(self, k))
                for k in ("w2", "ln_gain", "ln_bias",
                          "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")]
        return out


def _xavier(rng, shape):
    fan_in, fan_out = shape[0], shape[-1]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def _param(value):
    return Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)


def init_euclidean_block(rng, d, heads):
    if d % heads != 0:
        raise DimensionError(f"latent dim {d} must divide evenly into {heads} heads")
    hidden = 4 * d
    return EuclideanBlockParams(
        wq=_xavier(rng, (d, d)), wk=_xavier(rng, (d, d)),
        wv=_xavier(rng, (d, d)), wo=_xavier(rng, (d, d)),
        heads=heads,
        ln_gain=_param(np.ones(d)), ln_bias=_param(np.zeros(d)),
        ffn_w1=_xavier(rng, (d, hidden)), ffn_b1=_param(np.zeros(hidden)),
        ffn_w2=_xavier(rng, (hidden, d)), ffn_b2=_param(np.zeros(d)),
    )


def init_lorentz_linear(rng, n_in, m):
    return LorentzLinearParams(
        w=_xavier(rng, (n_in + 1, m)),
        p=_xavier(rng, (n_in + 1, 1)),
        b=_param(np.zeros(m)),
        bprime=_param(0.0),
        lam_raw=_param(inv_softplus(1.0)),
    )


def init_lorentz_block(rng, d, n, beta_init=0.02):
    hidden = 4 * d
    return LorentzBlockParams(
        w1=_xavier(rng, (d, n)),
        beta_raw=_param(inv_softplus(beta_init)),
        q=init_lorentz_linear(rng, n, n),
        k=init_lorentz_linear(rng, n, n),
        v=init_lorentz_linear(rng, n, n),
        w2=_xavier(rng, (n, d)),
        ln_gain=_param(np.ones(d)), ln_bias=_param(np.zeros(d)),
        ffn_w1=_xavier(rng, (d, hidden)), ffn_b1=_param(np.zeros(hidden)),
        ffn_w2=_xavier(rng, (hidden, d)), ffn_b2=_param(np.zeros(d)),
    )


# ---------------------------------------------------------------------------
# shared wrapping block

def layer_norm(x, gain, bias):
    m = ad.mean(x, axis=-1, keepdims=True)
    centered = ad.sub(x, m)
    var = ad.mean(ad.mul(centered, centered), axis=-1, keepdims=True)
    return ad.add(ad.mul(ad.div(centered, ad.sqrt(ad.add(var, LN_EPS))), gain), bias)


def feed_forward(x, params):
    h = ad.relu(ad.add(ad.matmul(x, params.ffn_w1), params.ffn_b1))
    return ad.add(ad.matmul(h, params.ffn_w2), params.ffn_b2)


def _wrap_block(x, attn_out, params):
    h = layer_norm(ad.add(x, attn_out), params.ln_gain, params.ln_bias)
    return ad.add(h, feed_forward(h, params))


def _batched(x):
    if ad._data(x).ndim == 2:
        d = ad._data(x)
        return ad.reshape(x, (1,) + d.shape), True
    return x, False


def _debatch(x, squeeze):
    return ad.take(x, 0) if squeeze else x


# ---------------------------------------------------------------------------
# Euclidean family

def euclidean_gaussian_attention(x, mask, params, pad_mask=None):
    """Multi-head attention whose scaled scores are multiplied by a Gaussian
    neighborhood mask before the row softmax. ``mask=None`` is the plain
    unmasked transformer attention."""
    x, squeeze = _batched(x)
    b, m, d = ad._data(x).shape
    heads = params.heads
    dh = d // heads
    if mask is not None and mask.shape != (m, m):
        raise DimensionError(f"mask shape {mask.shape} does not match sequence length {m}")

    def split(t):
        return ad.swapaxes(ad.reshape(t, (b, m, heads, dh)), 1, 2)

    q = split(ad.matmul(x, params.wq))
    k = split(ad.matmul(x, params.wk))
    v = split(ad.matmul(x, params.wv))
    scores = ad.div(ad.matmul(q, ad.swapaxes(k, -1, -2)), math.sqrt(dh))
    if mask is not None:
        scores = ad.mul(scores, mask)
    if pad_mask is not None:
        scores = ad.add(scores, pad_mask.reshape(b, 1, 1, m))
    attn = ad.softmax(scores, axis=-1)
    out = ad.matmul(attn, v)
    out = ad.reshape(ad.swapaxes(out, 1, 2), (b, m, d))
    out = ad.matmul(out, params.wo)
    return _debatch(out, squeeze)


def euclidean_attention_block(x, mask, params, pad_mask=None):
    x, squeeze = _batched(x)
    attn = euclidean_gaussian_attention(x, mask, params, pad_mask=pad_mask)
    return _debatch(_wrap_block(x, attn, params), squeeze)


# ---------------------------------------------------------------------------
# Lorentz family

def lorentz_linear(x, params):
    """Manifold-preserving linear layer: the spatial part is a rescaled
    direction, the time axis is recomputed from it."""
    wx = ad.add(ad.matmul(x, params.w), params.b)
    nrm = ad.l2norm(wx, axis=-1, keepdims=True)
    if np.any(ad._data(nrm) < 1e-12):
        raise NumericalError("lorentz_linear: direction norm below 1e-12")
    px = ad.add(ad.matmul(x, params.p), params.bprime)
    lam = ad.softplus(params.lam_raw)
    phi = ad.mul(ad.div(ad.mul(lam, px), nrm), wx)
    time = ad.sqrt(ad.add(ad.sum_(ad.mul(phi, phi), axis=-1, keepdims=True), 1.0))
    return ad.concat([time, phi], axis=-1)


_METRIC_CACHE = {}


def _metric_row(n_plus_1):
    row = _METRIC_CACHE.get(n_plus_1)
    if row is None:
        row = np.ones(n_plus_1)
        row[0] = -1.0
        _METRIC_CACHE[n_plus_1] = row
    return row


def lorentz_self_attention(x, mask, params, pad_mask=None):
    """Self-attention on the hyperboloid: scores from masked negative squared
    Lorentzian distances, outputs as Lorentzian centroids of the values."""
    x, squeeze = _batched(x)
    b, m, np1 = ad._data(x).shape
    if mask is not None and mask.shape != (m, m):
        raise DimensionError(f"mask shape {mask.shape} does not match sequence length {m}")
    q = lorentz_linear(x, params.q)
    k = lorentz_linear(x, params.k)
    v = lorentz_linear(x, params.v)
    inner = ad.matmul(ad.mul(q, _metric_row(ad._data(q).shape[-1])), ad.swapaxes(k, -1, -2))
    neg_d2 = ad.add(2.0, ad.mul(2.0, inner))          # -d^2 = 2 + 2<q,k>
    logits = neg_d2 if mask is None else ad.mul(neg_d2, mask)
    logits = ad.div(logits, math.sqrt(ad._data(q).shape[-1]))
    if pad_mask is not None:
        logits = ad.add(logits, pad_mask.reshape(b, 1, m))
    scores = ad.softmax(logits, axis=-1)
    out = mf.lorentz_centroid(v, scores)
    return _debatch(out, squeeze)


def lorentz_lift(x, params, max_tangent_norm=mf.MAX_TANGENT_NORM):
    """Project token features, scale, and exp-map onto the hyperboloid."""
    beta = ad.softplus(params.beta_raw)
    u = ad.matmul(x, params.w1)
    return mf.lift_from_tangent(u, beta, max_tangent_norm=max_tangent_norm)


def lorentz_unlift(y, params):
    """Log-map at the origin, drop the time axis, project back, undo the scale."""
    beta = ad.softplus(params.beta_raw)
    mid = mf.spatial_log_origin(y)
    return ad.div(ad.matmul(mid, params.w2), beta)


def lorentz_attention_block(x, mask, params, pad_mask=None, _identity_attention=False):
    """Lift to the hyperboloid, attend there, map back, then apply the
    standard wrapping block. ``_identity_attention`` bypasses the attention
    core so tests can exercise the lift/unlift path in isolation."""
    x, squeeze = _batched(x)
    lifted = lorentz_lift(x, params)
    if _identity_attention:
        attended = lifted
    else:
        attended = lorentz_self_attention(lifted, mask, params, pad_mask=pad_mask)
    out = lorentz_unlift(attended, params)
    return _debatch(_wrap_block(x, out, params), squeeze)
