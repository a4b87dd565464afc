"""Mini-batch training with Adam and a plateau step-decay schedule.

Randomness is confined to two counter-based streams derived from the model
seed: one consumed once for parameter init, one for batch order (the only
stream that survives into checkpoints). Everything reported is a pure
function of (seed, config, corpus).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import manifold as mf
from . import model as mdl
from .autodiff import AdamState
from .checkpoint import (Checkpoint, pack_adam, philox_from_words,
                         philox_state_words, save_checkpoint, unpack_adam)
from .config import format_config, parse_config_text
from .errors import ArgumentError, DimensionError, NumericalError
from .evaluation import MetricsReport, evaluate_retrieval
from .losses import (BatchSimilarity, aggregate_loss, div_loss, pop_loss,
                     sim_loss)

INIT_STREAM = 0
BATCH_STREAM = 1


def resolve_data_dims(model_cfg, corpus):
    """Fill d_vid / d_text from the corpus, or verify them if already set."""
    if model_cfg.d_vid == 0:
        model_cfg.d_vid = corpus.d_vid
    elif model_cfg.d_vid != corpus.d_vid:
        raise DimensionError(f"config d_vid={model_cfg.d_vid} but corpus has "
                             f"{corpus.d_vid}")
    if model_cfg.d_text == 0:
        model_cfg.d_text = corpus.d_text
    elif model_cfg.d_text != corpus.d_text:
        raise DimensionError(f"config d_text={model_cfg.d_text} but corpus has "
                             f"{corpus.d_text}")
    return model_cfg


def batch_objective(params, model_cfg, loss_cfg, word_lists, frame_lists, video_ids):
    """Aggregate loss over one batch of (query, video) pairs.

    Returns the scalar loss tensor and the detached component values.
    """

    def guard(term_name, fn):
        try:
            value = fn()
        except NumericalError as exc:
            raise NumericalError(f"{term_name}: {exc}") from exc
        if isinstance(value, (ad.Tensor, np.ndarray)) \
                and not np.all(np.isfinite(ad._data(value))):
            raise NumericalError(f"{term_name} produced a non-finite value")
        return value

    vb = guard("video encoder", lambda: mdl.encode_videos(params, model_cfg, frame_lists))
    pooled_q = guard("query encoder",
                     lambda: mdl.encode_queries(params, model_cfg, word_lists)[0])
    s_f = guard("frame similarity",
                lambda: mdl.max_cosine_matrix(pooled_q, vb.v_f, vb.frame_valid))
    s_c = guard("clip similarity", lambda: mdl.max_cosine_matrix(pooled_q, vb.v_c))
    blend = ad.add(ad.mul(s_f, model_cfg.alpha_f), ad.mul(s_c, model_cfg.alpha_c))
    batch = BatchSimilarity(s_f=s_f, s_c=s_c, video_ids=list(video_ids))
    sim = guard("sim_loss", lambda: sim_loss(batch, loss_cfg.margin,
                                             loss_cfg.nce_temperature))
    div = guard("div_loss", lambda: div_loss(pooled_q, list(video_ids),
                                             loss_cfg.margin_div))
    cone_v = mf.lift_from_tangent(vb.v_v, model_cfg.pop_scale)
    cone_t = mf.lift_from_tangent(pooled_q, model_cfg.pop_scale)
    pop = guard("pop_loss", lambda: pop_loss(cone_v, cone_t, loss_cfg.cone_c))
    total = guard("aggregate_loss",
                  lambda: aggregate_loss(sim, div, pop, loss_cfg.lambda_div,
                                         loss_cfg.lambda_pop))
    parts = {"sim": float(ad._data(sim)), "div": float(ad._data(div)),
             "pop": float(ad._data(pop)), "total": float(ad._data(total)),
             "blend_max": float(np.max(ad._data(blend)))}
    return total, parts


def _make_checkpoint(model_cfg, loss_cfg, train_cfg, named, adam, batch_rng, epoch):
    params_table = {name: np.array(t.data) for name, t in named.items()}
    return Checkpoint(
        config_text=format_config(model_cfg, loss_cfg, train_cfg),
        params=params_table,
        opt_state=pack_adam(adam, params_table),
        rng_words=philox_state_words(batch_rng.bit_generator),
        epoch=epoch,
    )


def train(model_cfg, loss_cfg, train_cfg, corpus, out_path=None, log=None):
    """Train from scratch on a corpus; returns (checkpoint, report, params).

    The best-validation checkpoint is written next to ``out_path`` with a
    ``.best`` suffix; ``out_path`` itself holds the final state.
    """
    resolve_data_dims(model_cfg, corpus)
    if not corpus.videos:
        raise ArgumentError("corpus has no videos")
    init_rng = np.random.Generator(np.random.Philox(key=[model_cfg.seed, INIT_STREAM]))
    batch_rng = np.random.Generator(np.random.Philox(key=[model_cfg.seed, BATCH_STREAM]))
    params = mdl.init_params(model_cfg, rng=init_rng)
    named = params.named()
    adam = AdamState(lr=train_cfg.lr)
    videos_by_id = {v.video_id: v for v in corpus.videos}
    train_queries = corpus.queries_for_split("train")
    val_split = "val" if corpus.queries_for_split("val") else "train"
    if not train_queries:
        raise ArgumentError("corpus has no training queries")

    report = MetricsReport()
    best_sum_r = -1.0
    stale = 0
    started = time.perf_counter()
    for epoch in range(train_cfg.epochs):
        order = batch_rng.permutation(len(train_queries))
        epoch_losses = []
        for lo in range(0, len(order), train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            if idx.size < 2:
                continue
            items = [train_queries[i] for i in idx]
            word_lists = [q.words for q in items]
            ids = [q.video_id for q in items]
            frame_lists = [videos_by_id[v].frames for v in ids]
            ad.zero_grad(named)
            loss, parts = batch_objective(params, model_cfg, loss_cfg,
                                          word_lists, frame_lists, ids)
            ad.backward(loss)
            ad.adam_step(named, adam)
            epoch_losses.append(parts["total"])
        report.loss_trace.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
        val = evaluate_retrieval(params, model_cfg, corpus, split=val_split)
        report.val_sum_r_trace.append(val.sum_r)
        if log is not None:
            log(f"epoch {epoch + 1}/{train_cfg.epochs} "
                f"loss {report.loss_trace[-1]:.4f} val SumR {val.sum_r:.2f} "
                f"lr {adam.lr:.2e}")
        if val.sum_r > best_sum_r + 1e-9:
            best_sum_r = val.sum_r
            stale = 0
            if out_path is not None:
                best_ckpt = _make_checkpoint(model_cfg, loss_cfg, train_cfg, named,
                                             adam, batch_rng, epoch + 1)
                save_checkpoint(best_ckpt, str(out_path) + ".best")
        else:
            stale += 1
            if stale >= train_cfg.plateau_patience:
                adam.lr = max(adam.lr / 2.0, train_cfg.lr_floor)
                stale = 0

    final_val = evaluate_retrieval(params, model_cfg, corpus, split=val_split)
    report.r1, report.r5, report.r10, report.r100 = final_val.recalls
    report.sum_r = final_val.sum_r
    report.wall_time = time.perf_counter() - started
    ckpt = _make_checkpoint(model_cfg, loss_cfg, train_cfg, named, adam, batch_rng,
                            train_cfg.epochs)
    if out_path is not None:
        save_checkpoint(ckpt, out_path)
        if best_sum_r < 0:
            save_checkpoint(ckpt, str(out_path) + ".best")
    return ckpt, report, params


def restore_model(ckpt):
    """Rebuild configs and parameter tensors from a loaded checkpoint."""
    model_cfg, loss_cfg, train_cfg = parse_config_text(ckpt.config_text)
    if model_cfg.d_vid < 1 or model_cfg.d_text < 1:
        raise ArgumentError("checkpoint config lacks resolved data dimensions")
    init_rng = np.random.Generator(np.random.Philox(key=[model_cfg.seed, INIT_STREAM]))
    params = mdl.init_params(model_cfg, rng=init_rng)
    named = params.named()
    if set(named) != set(ckpt.params):
        missing = sorted(set(named) ^ set(ckpt.params))
        raise DimensionError(f"checkpoint parameter names do not match the "
                             f"config architecture: {missing[:4]}...")
    for name, tensor in named.items():
        stored = ckpt.params[name]
        if stored.shape != tensor.data.shape:
            raise DimensionError(f"checkpoint tensor '{name}' has shape "
                                 f"{stored.shape}, expected {tensor.data.shape}")
        tensor.data = np.array(stored)
    adam = unpack_adam(ckpt.opt_state, list(named)) if ckpt.opt_state else None
    batch_rng = philox_from_words(ckpt.rng_words) if ckpt.rng_words else None
    return model_cfg, loss_cfg, train_cfg, params, adam, batch_rng
