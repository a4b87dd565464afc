"""Training objectives: retrieval, query diversity, and partial-order cones.

The cone geometry lives on an auxiliary hyperboloid: video and query
vectors are lifted there with the model's fixed pop scale, each video
defines an entailment cone, and queries are penalized by how far outside
their video's cone they fall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from .errors import ArgumentError, DimensionError


@dataclass
class LossWeights:
    """Loss mixing weights and margins; all four scalars are configuration."""

    lambda_div: float = 0.2
    lambda_pop: float = 0.1
    margin: float = 0.2
    nce_temperature: float = 0.05
    margin_div: float = 0.4
    cone_c: float = 0.1

    def __post_init__(self):
        if self.lambda_div < 0 or self.lambda_pop < 0:
            raise ArgumentError("loss weights must be non-negative")
        if self.cone_c <= 0:
            raise ArgumentError("cone boundary constant must be positive")
        if self.nce_temperature <= 0:
            raise ArgumentError("contrastive temperature must be positive")


@dataclass
class BatchSimilarity:
    """Per-batch query-to-video score matrices at both granularities.

    Rows index queries, columns index the batch items' videos; the diagonal
    holds each query's own video.
    """

    s_f: object          # (B, B) frame-level scores
    s_c: object          # (B, B) clip-level scores
    video_ids: list      # length B, the item video ids


# ---------------------------------------------------------------------------
# entailment cone geometry

def half_aperture(v, cone_c):
    """Angular radius of the cone anchored at v; wider nearer the origin."""
    spatial = ad.take(v, (..., slice(1, None)))
    norm = ad.l2norm(spatial, axis=-1)
    ratio = ad.clamp(ad.div(2.0 * cone_c, norm), max=1.0)
    return ad.arcsin(ratio)


def exterior_angle(v, t):
    """Angle by which t falls outside the geodesic ray structure under v.

    Pairs with t equal to v (within 1e-9 per coordinate) return 0 by
    convention so matched points are never penalized by the singularity.
    """
    inner = mf.lorentz_inner(v, t)
    v0 = ad.take(v, (..., 0))
    t0 = ad.take(t, (..., 0))
    spatial_norm = ad.l2norm(ad.take(v, (..., slice(1, None))), axis=-1)
    num = ad.add(t0, ad.mul(v0, inner))
    den = ad.mul(spatial_norm,
                 ad.sqrt(ad.clamp(ad.sub(ad.mul(inner, inner), 1.0), min=1e-7)))
    angle = ad.arccos(ad.div(num, den))
    same = np.max(np.abs(ad._data(v) - ad._data(t)), axis=-1) < 1e-9
    if np.any(same):
        angle = ad.mul(angle, np.where(same, 0.0, 1.0))
    return angle


def pop_loss(v, t, cone_c):
    """Hinge on (exterior angle - half aperture), averaged over pairs."""
    gap = ad.sub(exterior_angle(v, t), half_aperture(v, cone_c))
    return ad.mean(ad.relu(gap))


# ---------------------------------------------------------------------------
# retrieval and diversity losses

def _same_video_masks(video_ids):
    ids = np.asarray(video_ids, dtype=object)
    same = ids[:, None] == ids[None, :]
    eye = np.eye(len(ids), dtype=bool)
    return same, same & ~eye


def _diag(s):
    b = ad._data(s).shape[0]
    return ad.sum_(ad.mul(s, np.eye(b)), axis=-1)


def _logsumexp(x, axis=-1):
    # detached max shift: keeps exp in range without adding a kink node
    m = ad._data(x).max(axis=axis, keepdims=True)
    shifted = ad.sub(x, m)
    return ad.add(np.squeeze(m, axis=axis), ad.log(ad.sum_(ad.exp(shifted), axis=axis)))


def _scale_loss(s, same, same_offdiag, margin, temperature):
    """Hardest-negative triplet hinges in both directions plus symmetric
    softmax-contrastive terms, for one score matrix. Entries sharing the
    positive's video are excluded from the negative sets."""
    pos = _diag(s)
    neg_block = np.where(same, -1e4, 0.0)
    hardest_qv = ad.max_(ad.add(s, neg_block), axis=-1)
    hardest_vq = ad.max_(ad.add(ad.swapaxes(s, 0, 1), neg_block.T), axis=-1)
    triplet = ad.add(ad.relu(ad.add(ad.sub(margin, pos), hardest_qv)),
                     ad.relu(ad.add(ad.sub(margin, pos), hardest_vq)))
    nce_block = np.where(same_offdiag, -1e4, 0.0)
    logits_qv = ad.add(ad.div(s, temperature), nce_block)
    logits_vq = ad.add(ad.div(ad.swapaxes(s, 0, 1), temperature), nce_block.T)
    nce = ad.add(ad.sub(_logsumexp(logits_qv), _diag(logits_qv)),
                 ad.sub(_logsumexp(logits_vq), _diag(logits_vq)))
    return ad.add(ad.mean(triplet), ad.mean(nce))


def sim_loss(batch, margin, temperature):
    """Dual-granularity retrieval loss over a batch similarity structure."""
    sfd = ad._data(batch.s_f)
    if sfd.ndim != 2 or sfd.shape[0] != sfd.shape[1]:
        raise DimensionError("similarity matrices must be square")
    if sfd.shape[0] < 2:
        raise ArgumentError("sim_loss needs a batch of at least 2 items")
    if len(batch.video_ids) != sfd.shape[0]:
        raise DimensionError("video id count does not match the matrix")
    same, same_offdiag = _same_video_masks(batch.video_ids)
    return ad.add(_scale_loss(batch.s_f, same, same_offdiag, margin, temperature),
                  _scale_loss(batch.s_c, same, same_offdiag, margin, temperature))


def div_loss(queries, video_ids, margin_div):
    """Mean hinge on pairwise cosine of distinct queries tied to one video."""
    qd = ad._data(queries)
    if qd.ndim != 2:
        raise DimensionError("queries must be a (B, d) array")
    if len(video_ids) != qd.shape[0]:
        raise DimensionError("video id count does not match the query count")
    if qd.shape[0] < 2:
        raise ArgumentError("div_loss needs a batch of at least 2 queries")
    _, same_offdiag = _same_video_masks(video_ids)
    pair = np.triu(same_offdiag, k=1)
    count = int(pair.sum())
    if count == 0:
        return ad.mul(ad.sum_(queries), 0.0)
    nrm = ad.l2norm(queries, axis=-1, keepdims=True)
    qn = ad.div(queries, nrm)
    cos = ad.matmul(qn, ad.swapaxes(qn, 0, 1))
    hinged = ad.relu(ad.sub(cos, margin_div))
    return ad.div(ad.sum_(ad.mul(hinged, pair.astype(np.float64))), float(count))


def aggregate_loss(sim, div, pop, lambda_div, lambda_pop):
    """Weighted sum of the three objectives."""
    return ad.add(sim, ad.add(ad.mul(div, lambda_div), ad.mul(pop, lambda_pop)))
