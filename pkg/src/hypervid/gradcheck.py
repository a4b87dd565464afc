"""Finite-difference verification targets for every model sub-graph.

Each target draws a random small instance, rejects draws that sit within
``BOUNDARY_MARGIN`` of a non-smooth point (hinges, hardest-negative
switches, domain clamps), and compares analytic gradients against central
differences on a sample of coordinates.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import autodiff as ad
from . import losses as ls
from . import manifold as mf
from . import model as mdl
from .autodiff import Tensor
from .errors import ArgumentError
from .losses import LossWeights
from .model import ModelConfig
from .training import batch_objective

BOUNDARY_MARGIN = 1e-3
DEFAULT_TOL = 1e-4
DEFAULT_DRAWS = 20
DEFAULT_COORDS = 20


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    draws: int
    tol: float

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def _probe_loss(out, rng):
    probe = rng.normal(size=ad._data(out).shape)
    return ad.sum_(ad.mul(out, probe))


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _boost_lorentz(block, rng):
    # keep lifted points away from the origin-side arcosh clamp
    block.beta_raw.data = np.asarray(att.inv_softplus(0.9))
    block.w1.data = block.w1.data * 2.0


def _target_euclid_block(rng):
    params = att.init_euclidean_block(rng, 8, 2)
    x = _leaf(rng, (5, 8), 0.7)
    mask = att.gaussian_mask(5, 2.0)
    probe = rng.normal(size=(5, 8))
    leaves = dict(params.named("blk"))
    leaves["x"] = x

    def f():
        return ad.sum_(ad.mul(att.euclidean_attention_block(x, mask, params), probe))

    return f, leaves


def _target_lorentz_block(rng):
    params = att.init_lorentz_block(rng, 8, 6)
    _boost_lorentz(params, rng)
    x = _leaf(rng, (5, 8), 0.7)
    mask = att.gaussian_mask(5, 4.0)
    probe = rng.normal(size=(5, 8))
    leaves = dict(params.named("blk"))
    leaves["x"] = x

    def f():
        return ad.sum_(ad.mul(att.lorentz_attention_block(x, mask, params), probe))

    return f, leaves


def _target_query_encoder(rng):
    d_text, d = 7, 8
    proj_w = att._xavier(rng, (d_text, d))
    proj_b = att._param(np.zeros(d))
    block = att.init_euclidean_block(rng, d, 2)
    pool_w = att._xavier(rng, (1, d))
    words = _leaf(rng, (6, d_text), 0.8)
    probe = rng.normal(size=(d,))
    leaves = dict(block.named("block"))
    leaves.update({"proj_w": proj_w, "proj_b": proj_b, "pool_w": pool_w,
                   "words": words})

    def f():
        x = ad.add(ad.matmul(words, proj_w), proj_b)
        ctx = att.euclidean_attention_block(x, None, block)
        pooled = mdl.simple_attention_pool(ctx, pool_w)
        return ad.sum_(ad.mul(pooled, probe))

    return f, leaves


def _target_maim(rng):
    d = 8
    params = mdl._init_maim(rng, d)
    outs = [_leaf(rng, (4, d), 0.8) for _ in range(3)]
    probe = rng.normal(size=(1, 4, d))
    leaves = dict(params.named("maim"))
    leaves.update({f"out{i}": o for i, o in enumerate(outs)})

    def f():
        outs3 = [ad.reshape(o, (1, 4, d)) for o in outs]
        return ad.sum_(ad.mul(mdl.maim_fuse(outs3, params, 0.7), probe))

    return f, leaves


def _target_pool(rng):
    d = 8
    w = att._xavier(rng, (1, d))
    x = _leaf(rng, (6, d), 0.8)
    probe = rng.normal(size=(d,))

    def f():
        return ad.sum_(ad.mul(mdl.simple_attention_pool(x, w), probe))

    return f, {"w": w, "x": x}


def _target_similarity(rng):
    d = 8
    q = _leaf(rng, (d,), 1.0)
    v_f = _leaf(rng, (5, d), 1.0)
    v_c = _leaf(rng, (3, d), 1.0)

    def f():
        emb = mdl.VideoEmbeddings(v_f=v_f, v_c=v_c, v_v=None)
        _, _, s = mdl.similarity(q, emb, 0.5, 0.5)
        return s

    return f, {"q": q, "v_f": v_f, "v_c": v_c}


def _ids_with_duplicate(rng, b):
    ids = [f"v{i}" for i in range(b)]
    if rng.random() < 0.7:
        ids[rng.integers(1, b)] = ids[0]
    return ids


def _target_sim_loss(rng):
    b = 4
    s_f = _leaf(rng, (b, b), 0.5)
    s_c = _leaf(rng, (b, b), 0.5)
    ids = _ids_with_duplicate(rng, b)

    def f():
        return ls.sim_loss(ls.BatchSimilarity(s_f=s_f, s_c=s_c, video_ids=ids),
                           margin=0.2, temperature=0.5)

    return f, {"s_f": s_f, "s_c": s_c}


def _target_div_loss(rng):
    b, d = 4, 8
    q = _leaf(rng, (b, d), 1.0)
    ids = ["v0", "v0", "v1", "v1"]

    def f():
        return ls.div_loss(q, ids, margin_div=0.3)

    return f, {"q": q}


def _target_pop_loss(rng):
    b, d = 4, 6
    u_v = _leaf(rng, (b, d), 0.6)
    u_t = _leaf(rng, (b, d), 0.6)

    def f():
        v = mf.lift_from_tangent(u_v, 1.0)
        t = mf.lift_from_tangent(u_t, 1.0)
        return ls.pop_loss(v, t, 0.1)

    return f, {"u_v": u_v, "u_t": u_t}


def _aggregate_setup(rng, model_cfg=None):
    if model_cfg is None:
        model_cfg = ModelConfig(d=8, n=6, n_lorentz=1, n_euclid=1, heads=2,
                                clips=3, d_vid=7, d_text=5,
                                seed=int(rng.integers(0, 2 ** 31)))
    loss_cfg = LossWeights(nce_temperature=0.5)
    init_rng = np.random.Generator(np.random.Philox(key=[model_cfg.seed, 0]))
    params = mdl.init_params(model_cfg, rng=init_rng)
    for branch in (params.gaze, params.glance):
        for blk in branch.lorentz_blocks:
            _boost_lorentz(blk, rng)
    frame_lists = [rng.normal(size=(int(rng.integers(5, 9)), model_cfg.d_vid)) * 0.8
                   for _ in range(4)]
    word_lists = [rng.normal(size=(int(rng.integers(3, 6)), model_cfg.d_text)) * 0.8
                  for _ in range(4)]
    ids = _ids_with_duplicate(rng, 4)
    frame_lists = [frame_lists[0] if ids[i] == ids[0] and i > 0 else frame_lists[i]
                   for i in range(4)]
    return params, model_cfg, loss_cfg, word_lists, frame_lists, ids


def _target_aggregate(rng, model_cfg=None):
    params, model_cfg, loss_cfg, word_lists, frame_lists, ids = \
        _aggregate_setup(rng, model_cfg)

    def f():
        return batch_objective(params, model_cfg, loss_cfg,
                               word_lists, frame_lists, ids)[0]

    return f, params.named()


TARGETS = {
    "euclid-block": _target_euclid_block,
    "lorentz-block": _target_lorentz_block,
    "query-encoder": _target_query_encoder,
    "maim": _target_maim,
    "pool": _target_pool,
    "similarity": _target_similarity,
    "sim-loss": _target_sim_loss,
    "div-loss": _target_div_loss,
    "pop-loss": _target_pop_loss,
    "aggregate": _target_aggregate,
}


def run_target(name, draws=DEFAULT_DRAWS, tol=DEFAULT_TOL, h=1e-5,
               max_coords=DEFAULT_COORDS, seed=0, model_cfg=None,
               margin=BOUNDARY_MARGIN):
    """Run one named target; draws near non-smooth boundaries are redrawn."""
    if name not in TARGETS:
        raise ArgumentError(f"unknown gradcheck target '{name}' "
                            f"(choose from {', '.join(sorted(TARGETS))})")
    builder = TARGETS[name]
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    worst = 0.0
    done = 0
    attempts = 0
    while done < draws:
        attempts += 1
        if attempts > draws * 60:
            raise ArgumentError(f"target '{name}' cannot find draws clear of "
                                f"non-smooth boundaries")
        if name == "aggregate":
            f, leaves = builder(rng, model_cfg=model_cfg)
        else:
            f, leaves = builder(rng)
        with ad.boundary_monitor() as mon:
            with ad.no_grad():
                f()
        if mon.min_margin < margin:
            continue
        err = ad.finite_diff_check(f, leaves, h=h, max_coords=max_coords, rng=rng)
        worst = max(worst, err)
        done += 1
    return GradCheckResult(name=name, max_rel_err=worst, draws=draws, tol=tol)


def run_all(names=None, draws=DEFAULT_DRAWS, tol=DEFAULT_TOL, seed=0,
            model_cfg=None, max_coords=DEFAULT_COORDS):
    results = []
    for name in (names or list(TARGETS)):
        results.append(run_target(name, draws=draws, tol=tol, seed=seed,
                                  model_cfg=model_cfg, max_coords=max_coords))
    return results
