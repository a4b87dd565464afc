"""Query/video encoders, the hybrid attention stack, fusion, and similarity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import attention as att
from .autodiff import Tensor
from .errors import ArgumentError, DimensionError, NumericalError


@dataclass
class ModelConfig:
    """Architecture and similarity constants.

    Class defaults are the full-scale configuration; the toy preset used by
    the desk-scale harness overrides them (see configs/toy.cfg).
    """

    d: int = 384
    n: int = 384
    n_lorentz: int = 4
    n_euclid: int = 4
    heads: int = 4
    clips: int = 32
    tau: float = 1.0
    alpha_f: float = 0.5
    alpha_c: float = 0.5
    pop_scale: float = 0.15
    seed: int = 0
    d_vid: int = 0   # 0 = take from the dataset at fit time
    d_text: int = 0
    lorentz_variances: tuple = ()
    euclid_variances: tuple = ()

    def __post_init__(self):
        if self.n_lorentz < 0 or self.n_euclid < 0:
            raise ArgumentError("block counts must be non-negative")
        if self.n_lorentz + self.n_euclid < 1:
            raise ArgumentError("at least one attention block is required")
        if self.d < 1 or self.n < 1 or self.heads < 1 or self.clips < 1:
            raise ArgumentError("d, n, heads and clips must be positive")
        if self.d % self.heads != 0:
            raise ArgumentError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.tau <= 0:
            raise ArgumentError("tau must be positive")
        if not (0.0 <= self.alpha_f <= 1.0 and 0.0 <= self.alpha_c <= 1.0):
            raise ArgumentError("alpha_f and alpha_c must lie in [0, 1]")
        if abs(self.alpha_f + self.alpha_c - 1.0) > 1e-9:
            raise ArgumentError("alpha_f + alpha_c must equal 1")
        if self.pop_scale <= 0:
            raise ArgumentError("pop_scale must be positive")
        if not self.lorentz_variances:
            self.lorentz_variances = tuple(att.variance_schedule(self.n_lorentz))
        if not self.euclid_variances:
            self.euclid_variances = tuple(att.variance_schedule(self.n_euclid))
        if len(self.lorentz_variances) != self.n_lorentz:
            raise ArgumentError("lorentz variance schedule length must equal n_lorentz")
        if len(self.euclid_variances) != self.n_euclid:
            raise ArgumentError("euclid variance schedule length must equal n_euclid")

    @property
    def n_blocks(self):
        return self.n_lorentz + self.n_euclid


@dataclass
class QueryEmbedding:
    q: object           # (d,) pooled sentence vector
    contextual: object  # (N_q, d) per-word contextual features


@dataclass
class VideoEmbeddings:
    v_f: object  # (M_f, d) frame embeddings
    v_c: object  # (M_c, d) clip embeddings
    v_v: object  # (d,) unified representation


@dataclass
class VideoBatch:
    """Padded batch of encoded videos."""

    v_f: object          # (B, Mmax, d)
    frame_valid: object  # (B, Mmax) bool
    v_c: object          # (B, M_c, d)
    v_v: object          # (B, d)
    pooled_f: object     # (B, d) attention-pooled gaze embedding
    pooled_c: object     # (B, d) attention-pooled glance embedding


# ---------------------------------------------------------------------------
# parameters

@dataclass
class MaimParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    fc_w: Tensor  # (d, 1) scalar-producing projection
    fc_b: Tensor

    def named(self, prefix):
        return [(f"{prefix}.{k}", getattr(self, k))
                for k in ("wq", "wk", "wv", "fc_w", "fc_b")]


@dataclass
class BranchParams:
    proj_w: Tensor
    proj_b: Tensor
    lorentz_blocks: list
    euclid_blocks: list
    maim: MaimParams
    pool_w: Tensor  # (1, d)

    def named(self, prefix):
        out = [(f"{prefix}.proj_w", self.proj_w), (f"{prefix}.proj_b", self.proj_b)]
        for i, blk in enumerate(self.lorentz_blocks):
            out += blk.named(f"{prefix}.lorentz{i}")
        for i, blk in enumerate(self.euclid_blocks):
            out += blk.named(f"{prefix}.euclid{i}")
        out += self.maim.named(f"{prefix}.maim")
        out.append((f"{prefix}.pool_w", self.pool_w))
        return out


@dataclass
class QueryBranchParams:
    proj_w: Tensor
    proj_b: Tensor
    block: att.EuclideanBlockParams
    pool_w: Tensor

    def named(self, prefix):
        out = [(f"{prefix}.proj_w", self.proj_w), (f"{prefix}.proj_b", self.proj_b)]
        out += self.block.named(f"{prefix}.block")
        out.append((f"{prefix}.pool_w", self.pool_w))
        return out


@dataclass
class ModelParams:
    query: QueryBranchParams
    gaze: BranchParams
    glance: BranchParams

    def named(self):
        out = []
        out += self.query.named("query")
        out += self.gaze.named("gaze")
        out += self.glance.named("glance")
        return dict(out)


def _init_maim(rng, d):
    return MaimParams(
        wq=att._xavier(rng, (d, d)), wk=att._xavier(rng, (d, d)),
        wv=att._xavier(rng, (d, d)),
        fc_w=att._xavier(rng, (d, 1)), fc_b=att._param(0.0),
    )


def _init_branch(rng, config, d_in):
    d, n = config.d, config.n
    return BranchParams(
        proj_w=att._xavier(rng, (d_in, d)),
        proj_b=att._param(np.zeros(d)),
        lorentz_blocks=[att.init_lorentz_block(rng, d, n)
                        for _ in range(config.n_lorentz)],
        euclid_blocks=[att.init_euclidean_block(rng, d, config.heads)
                       for _ in range(config.n_euclid)],
        maim=_init_maim(rng, d),
        pool_w=att._xavier(rng, (1, d)),
    )


def init_params(config, rng=None):
    """Build all trainable tensors; deterministic given the config seed."""
    if config.d_vid < 1 or config.d_text < 1:
        raise ArgumentError("d_vid and d_text must be resolved before init_params")
    if rng is None:
        rng = np.random.Generator(np.random.Philox(key=[config.seed, 0]))
    d = config.d
    query = QueryBranchParams(
        proj_w=att._xavier(rng, (config.d_text, d)),
        proj_b=att._param(np.zeros(d)),
        block=att.init_euclidean_block(rng, d, config.heads),
        pool_w=att._xavier(rng, (1, d)),
    )
    gaze = _init_branch(rng, config, config.d_vid)
    glance = _init_branch(rng, config, config.d_vid)
    return ModelParams(query=query, gaze=gaze, glance=glance)


# ---------------------------------------------------------------------------
# forward pieces

def simple_attention_pool(x, w, pad_mask=None):
    """Softmax-weighted sum of rows, weights from a learned 1-by-d probe."""
    x, squeeze = att._batched(x)
    b, m, d = ad._data(x).shape
    logits = ad.matmul(w, ad.swapaxes(x, -1, -2))  # (B, 1, M)
    if pad_mask is not None:
        logits = ad.add(logits, pad_mask.reshape(b, 1, m))
    a = ad.softmax(logits, axis=-1)
    out = ad.take(ad.matmul(a, x), (slice(None), 0, slice(None)))
    return att._debatch(out, squeeze)


_MASK_CACHE = {}


def _cached_mask(m, variance):
    key = (m, variance)
    mask = _MASK_CACHE.get(key)
    if mask is None:
        mask = att.gaussian_mask(m, variance)
        _MASK_CACHE[key] = mask
    return mask


def maim_fuse(outputs, params, tau, pad_mask=None):
    """Fuse parallel block outputs with per-time-point adaptive weights.

    The fusion query at each time point is the mean over blocks; a
    single-head cross-attention against each block output followed by a
    scalar projection yields one logit per (block, time point), softmaxed
    over blocks at temperature tau.
    """
    if len(outputs) < 1:
        raise ArgumentError("maim_fuse expects at least one block output")
    shapes = {tuple(ad._data(o).shape) for o in outputs}
    if len(shapes) != 1:
        raise DimensionError(f"block outputs disagree on shape: {sorted(shapes)}")
    b, m, d = ad._data(outputs[0]).shape
    acc = outputs[0]
    for o in outputs[1:]:
        acc = ad.add(acc, o)
    phi = ad.div(acc, float(len(outputs)))
    q = ad.matmul(phi, params.wq)
    scale = math.sqrt(d)
    logits = []
    for o in outputs:
        k = ad.matmul(o, params.wk)
        v = ad.matmul(o, params.wv)
        scores = ad.div(ad.matmul(q, ad.swapaxes(k, -1, -2)), scale)
        if pad_mask is not None:
            scores = ad.add(scores, pad_mask.reshape(b, 1, m))
        attended = ad.matmul(ad.softmax(scores, axis=-1), v)
        logits.append(ad.add(ad.matmul(attended, params.fc_w), params.fc_b))
    stacked = ad.concat(logits, axis=-1)                    # (B, M, n_blocks)
    weights = ad.softmax(ad.div(stacked, tau), axis=-1)
    fused = None
    for i, o in enumerate(outputs):
        w_i = ad.take(weights, (..., slice(i, i + 1)))
        term = ad.mul(w_i, o)
        fused = term if fused is None else ad.add(fused, term)
    return fused


def hybrid_attention_block(x, branch, config, pad_mask=None):
    """Run the Lorentz and Euclidean blocks in parallel and fuse them."""
    x, squeeze = att._batched(x)
    m = ad._data(x).shape[1]
    outputs = []
    for variance, blk in zip(config.lorentz_variances, branch.lorentz_blocks):
        outputs.append(att.lorentz_attention_block(
            x, _cached_mask(m, variance), blk, pad_mask=pad_mask))
    for variance, blk in zip(config.euclid_variances, branch.euclid_blocks):
        outputs.append(att.euclidean_attention_block(
            x, _cached_mask(m, variance), blk, pad_mask=pad_mask))
    fused = maim_fuse(outputs, branch.maim, config.tau, pad_mask=pad_mask)
    return att._debatch(fused, squeeze)


def glance_downsample(frames, m_c):
    """Mean-pool frames into m_c contiguous clips, larger groups first.

    Sequences shorter than m_c are padded by repeating the last frame
    before grouping.
    """
    if m_c < 1:
        raise ArgumentError("clip count must be at least 1")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ArgumentError("frames must be a non-empty (M_f, D) array")
    m_f = frames.shape[0]
    if m_f < m_c:
        pad = np.repeat(frames[-1:], m_c - m_f, axis=0)
        frames = np.concatenate([frames, pad], axis=0)
        m_f = m_c
    base, extra = divmod(m_f, m_c)
    sizes = [base + 1] * extra + [base] * (m_c - extra)
    bounds = np.cumsum([0] + sizes)
    return np.stack([frames[lo:hi].mean(axis=0) for lo, hi in zip(bounds[:-1], bounds[1:])])


def _pad_sequences(seqs):
    """Stack variable-length (M_i, D) arrays into (B, Mmax, D) plus validity."""
    seqs = [np.asarray(s, dtype=np.float64) for s in seqs]
    if not seqs:
        raise ArgumentError("empty batch")
    mmax = max(s.shape[0] for s in seqs)
    d = seqs[0].shape[1]
    out = np.zeros((len(seqs), mmax, d))
    valid = np.zeros((len(seqs), mmax), dtype=bool)
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[0] < 1:
            raise ArgumentError("each sequence must be a non-empty 2-D array")
        if s.shape[1] != d:
            raise DimensionError("sequences disagree on feature dimension")
        out[i, : s.shape[0]] = s
        valid[i, : s.shape[0]] = True
    return out, valid


def encode_queries(params, config, word_feature_list):
    """Encode a batch of queries; returns pooled (B, d) and contextual (B, Nmax, d)."""
    for q in word_feature_list:
        if np.asarray(q).ndim != 2 or np.asarray(q).shape[0] < 1:
            raise ArgumentError("query word features must be a non-empty 2-D array")
    padded, valid = _pad_sequences(word_feature_list)
    if padded.shape[-1] != ad._data(params.query.proj_w).shape[0]:
        raise DimensionError("query feature dimension does not match the model")
    x = ad.add(ad.matmul(padded, params.query.proj_w), params.query.proj_b)
    pad = att.additive_pad_mask(valid)
    contextual = att.euclidean_attention_block(x, None, params.query.block,
                                               pad_mask=pad.reshape(pad.shape[0], 1, 1, -1))
    pooled = simple_attention_pool(contextual, params.query.pool_w, pad_mask=pad)
    return pooled, contextual, valid


def encode_query(params, config, word_features):
    """Single-query wrapper around the batched encoder."""
    pooled, contextual, valid = encode_queries(params, config, [word_features])
    n_q = int(valid[0].sum())
    return QueryEmbedding(q=ad.take(pooled, 0),
                          contextual=ad.take(contextual, (0, slice(0, n_q), slice(None))))


def _encode_branch(x, valid, branch, config):
    pad = att.additive_pad_mask(valid) if valid is not None else None
    proj = ad.add(ad.matmul(x, branch.proj_w), branch.proj_b)
    return hybrid_attention_block(proj, branch, config, pad_mask=pad)


def encode_videos(params, config, frame_feature_list):
    """Encode a batch of videos through the gaze and glance branches."""
    for f in frame_feature_list:
        if np.asarray(f).ndim != 2 or np.asarray(f).shape[0] < 1:
            raise ArgumentError("video frame features must be a non-empty 2-D array")
    frames, valid = _pad_sequences(frame_feature_list)
    if frames.shape[-1] != ad._data(params.gaze.proj_w).shape[0]:
        raise DimensionError("video feature dimension does not match the model")
    clips = np.stack([glance_downsample(f, config.clips) for f in frame_feature_list])
    v_f = _encode_branch(frames, valid, params.gaze, config)
    v_c = _encode_branch(clips, None, params.glance, config)
    pooled_f = simple_attention_pool(v_f, params.gaze.pool_w,
                                     pad_mask=att.additive_pad_mask(valid))
    pooled_c = simple_attention_pool(v_c, params.glance.pool_w)
    v_v = ad.mul(ad.add(pooled_f, pooled_c), 0.5)
    return VideoBatch(v_f=v_f, frame_valid=valid, v_c=v_c, v_v=v_v,
                      pooled_f=pooled_f, pooled_c=pooled_c)


def encode_video(params, config, frames):
    """Single-video wrapper around the batched encoder."""
    batch = encode_videos(params, config, [frames])
    m_f = int(batch.frame_valid[0].sum())
    return VideoEmbeddings(
        v_f=ad.take(batch.v_f, (0, slice(0, m_f), slice(None))),
        v_c=ad.take(batch.v_c, 0),
        v_v=ad.take(batch.v_v, 0),
    )


# ---------------------------------------------------------------------------
# similarity

def _check_nonzero_norms(norms, what):
    if np.any(ad._data(norms) < 1e-12):
        raise NumericalError(f"zero-norm {what} in cosine similarity")


def _unit_rows(x, what):
    nrm = ad.l2norm(x, axis=-1, keepdims=True)
    _check_nonzero_norms(nrm, what)
    return ad.div(x, nrm)


def similarity(q, video, alpha_f, alpha_c):
    """Frame-level and clip-level max-cosine scores and their blend."""
    if not (0.0 <= alpha_f <= 1.0 and 0.0 <= alpha_c <= 1.0) \
            or abs(alpha_f + alpha_c - 1.0) > 1e-9:
        raise ArgumentError("alpha weights must be in [0,1] and sum to 1")
    qn = _unit_rows(ad.reshape(q, (1, -1)), "query")
    fn = _unit_rows(video.v_f, "frame embedding")
    cn = _unit_rows(video.v_c, "clip embedding")
    s_f = ad.max_(ad.take(ad.matmul(fn, ad.swapaxes(qn, -1, -2)), (..., 0)), axis=0)
    s_c = ad.max_(ad.take(ad.matmul(cn, ad.swapaxes(qn, -1, -2)), (..., 0)), axis=0)
    s = ad.add(ad.mul(s_f, alpha_f), ad.mul(s_c, alpha_c))
    return s_f, s_c, s


def max_cosine_matrix(queries, feats, valid=None):
    """(n_queries, n_videos) matrix of max-over-positions cosine scores.

    ``queries`` is (Q, d); ``feats`` is (V, M, d) with optional (V, M)
    validity for padded positions.
    """
    qn = _unit_rows(queries, "query")
    fn = _unit_rows(feats, "video embedding")
    cos = ad.matmul(fn, ad.swapaxes(qn, -1, -2))   # (V, M, Q)
    if valid is not None:
        cos = ad.add(cos, np.where(valid, 0.0, -4.0)[:, :, None])
    best = ad.max_(cos, axis=1)          # (V, Q)
    return ad.swapaxes(best, 0, 1)       # (Q, V)
