"""Retrieval metrics, ranking, and hyperbolic-norm diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from . import model as mdl
from .errors import ArgumentError

RECALL_KS = (1, 5, 10, 100)
EVAL_BATCH = 32


@dataclass
class MetricsReport:
    r1: float = 0.0
    r5: float = 0.0
    r10: float = 0.0
    r100: float = 0.0
    sum_r: float = 0.0
    loss_trace: list = field(default_factory=list)
    val_sum_r_trace: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def recalls(self):
        return (self.r1, self.r5, self.r10, self.r100)

    def machine_line(self):
        """Single-line record: R1 R5 R10 R100 SumR."""
        vals = list(self.recalls) + [self.sum_r]
        return " ".join(f"{v:.6f}" for v in vals)

    def table(self):
        lines = ["metric      value",
                 "-----------------"]
        for k, v in zip(RECALL_KS, self.recalls):
            lines.append(f"R@{k:<4}     {v:7.3f}")
        lines.append(f"SumR       {self.sum_r:7.3f}")
        if self.wall_time:
            lines.append(f"wall (s)   {self.wall_time:7.2f}")
        return "\n".join(lines)


def _chunks(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def encode_corpus_queries(params, config, queries, batch=EVAL_BATCH):
    """Pooled query vectors as a (num_queries, d) array, gradients off."""
    out = []
    with ad.no_grad():
        for group in _chunks(queries, batch):
            pooled, _, _ = mdl.encode_queries(params, config, [q.words for q in group])
            out.append(ad._data(pooled))
    return np.concatenate(out, axis=0)


def score_matrix(params, config, corpus, queries, batch=EVAL_BATCH):
    """Blended and per-granularity (num_queries, num_videos) score matrices."""
    qvecs = encode_corpus_queries(params, config, queries, batch=batch)
    sf_cols, sc_cols = [], []
    with ad.no_grad():
        for group in _chunks(corpus.videos, batch):
            vb = mdl.encode_videos(params, config, [v.frames for v in group])
            sf = mdl.max_cosine_matrix(qvecs, vb.v_f, vb.frame_valid)
            sc = mdl.max_cosine_matrix(qvecs, vb.v_c)
            sf_cols.append(ad._data(sf))
            sc_cols.append(ad._data(sc))
    s_f = np.concatenate(sf_cols, axis=1)
    s_c = np.concatenate(sc_cols, axis=1)
    return config.alpha_f * s_f + config.alpha_c * s_c, s_f, s_c


def ranks_of_correct(scores, queries, video_ids):
    """1-based rank of each query's own video, stable id-order tie-break."""
    index = {vid: i for i, vid in enumerate(video_ids)}
    ranks = np.empty(len(queries), dtype=np.int64)
    for qi, query in enumerate(queries):
        order = np.argsort(-scores[qi], kind="stable")
        ranks[qi] = int(np.where(order == index[query.video_id])[0][0]) + 1
    return ranks


def metrics_from_ranks(ranks, num_videos):
    rep = MetricsReport()
    vals = []
    for k in RECALL_KS:
        cutoff = min(k, num_videos)
        vals.append(100.0 * float(np.mean(ranks <= cutoff)))
    rep.r1, rep.r5, rep.r10, rep.r100 = vals
    rep.sum_r = float(sum(vals))
    return rep


def evaluate_retrieval(params, config, corpus, split="all", batch=EVAL_BATCH):
    """Encode the corpus once and rank every query of the split."""
    queries = corpus.queries_for_split(split)
    if not queries:
        raise ArgumentError(f"no queries in split '{split}'")
    scores, _, _ = score_matrix(params, config, corpus, queries, batch=batch)
    ranks = ranks_of_correct(scores, queries, corpus.video_ids())
    return metrics_from_ranks(ranks, len(corpus.videos))


def rank_videos(params, config, corpus, query_words, batch=EVAL_BATCH):
    """All corpus videos ordered by blended similarity to one query."""
    holder = type("Q", (), {"words": np.asarray(query_words), "video_id": None})
    scores, _, _ = score_matrix(params, config, corpus, [holder], batch=batch)
    order = np.argsort(-scores[0], kind="stable")
    vids = corpus.video_ids()
    return [(vids[i], float(scores[0][i])) for i in order]


# ---------------------------------------------------------------------------
# hyperbolic norm diagnostics

def origin_distances(params, config, corpus, batch=EVAL_BATCH):
    """Distance from the manifold origin per group after the model's lift.

    Groups: attention-pooled glance embeddings, attention-pooled gaze
    embeddings, and pooled query embeddings, one value per video / query.
    """
    gaze, glance = [], []
    with ad.no_grad():
        for group in _chunks(corpus.videos, batch):
            vb = mdl.encode_videos(params, config, [v.frames for v in group])
            for vec, sink in ((vb.pooled_f, gaze), (vb.pooled_c, glance)):
                lifted = mf.lift_from_tangent(ad._data(vec), config.pop_scale)
                sink.append(mf.distance_from_origin(lifted))
    qvecs = encode_corpus_queries(params, config, corpus.queries, batch=batch)
    lifted_q = mf.lift_from_tangent(qvecs, config.pop_scale)
    return {
        "glance": np.concatenate(glance),
        "gaze": np.concatenate(gaze),
        "query": mf.distance_from_origin(lifted_q),
    }


def norm_histogram_table(distances, bins):
    """Delimiter-separated histogram plus per-group means."""
    if bins < 1:
        raise ArgumentError("bins must be at least 1")
    top = max(float(np.max(d)) for d in distances.values() if d.size)
    top = max(top, 1e-12)
    edges = np.linspace(0.0, top, bins + 1)
    lines = ["group\tbin_lo\tbin_hi\tcount"]
    for group in ("glance", "gaze", "query"):
        counts, _ = np.histogram(distances[group], bins=edges)
        for b in range(bins):
            lines.append(f"{group}\t{edges[b]:.6f}\t{edges[b + 1]:.6f}\t{int(counts[b])}")
    lines.append("")
    lines.append("group\tmean\tcount")
    for group in ("glance", "gaze", "query"):
        d = distances[group]
        lines.append(f"{group}\t{float(np.mean(d)):.6f}\t{d.size}")
    return "\n".join(lines) + "\n"


def inspect_norms(params, config, corpus, bins=20, batch=EVAL_BATCH):
    return norm_histogram_table(origin_distances(params, config, corpus, batch=batch),
                                bins)
