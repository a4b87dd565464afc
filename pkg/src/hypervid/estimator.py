"""Scikit-learn style estimator wrapping the retrieval model.

``fit`` trains on a corpus (in memory or a dataset directory), ``predict``
returns the top-ranked video id per query, ``decision_function`` exposes
the full query-by-video score matrix, and ``score`` reports SumR. The
constructor mirrors the configuration keys one to one so ``get_params`` /
``set_params`` / ``clone`` compose with the wider ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import evaluation, training
from .config import TrainConfig
from .data import Corpus, QueryRecord, load_corpus, validate_corpus
from .errors import ArgumentError
from .losses import LossWeights
from .model import ModelConfig


def _as_corpus(corpus):
    if isinstance(corpus, Corpus):
        return validate_corpus(corpus)
    return load_corpus(corpus)


def _as_word_arrays(queries):
    out = []
    for q in queries:
        words = q.words if isinstance(q, QueryRecord) else np.asarray(q)
        if words.ndim != 2 or words.shape[0] < 1:
            raise ArgumentError("each query must be a non-empty (N_q, d_text) array")
        out.append(words)
    return out


class HyperbolicVideoRetriever(BaseEstimator):
    """Partially-relevant video retriever trained in hybrid spaces.

    Defaults are the desk-scale configuration; pass the full-scale values
    explicitly when the data warrants them.
    """

    def __init__(self, d=32, n=32, n_lorentz=2, n_euclid=2, heads=2, clips=8,
                 tau=1.0, alpha_f=0.5, alpha_c=0.5, pop_scale=0.15,
                 lambda_div=0.2, lambda_pop=0.1, margin=0.2,
                 nce_temperature=0.05, margin_div=0.4, cone_c=0.1,
                 epochs=50, batch_size=16, lr=2.5e-4, lr_floor=1e-5,
                 plateau_patience=3, seed=0):
        self.d = d
        self.n = n
        self.n_lorentz = n_lorentz
        self.n_euclid = n_euclid
        self.heads = heads
        self.clips = clips
        self.tau = tau
        self.alpha_f = alpha_f
        self.alpha_c = alpha_c
        self.pop_scale = pop_scale
        self.lambda_div = lambda_div
        self.lambda_pop = lambda_pop
        self.margin = margin
        self.nce_temperature = nce_temperature
        self.margin_div = margin_div
        self.cone_c = cone_c
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_floor = lr_floor
        self.plateau_patience = plateau_patience
        self.seed = seed

    def _configs(self):
        model_cfg = ModelConfig(
            d=self.d, n=self.n, n_lorentz=self.n_lorentz, n_euclid=self.n_euclid,
            heads=self.heads, clips=self.clips, tau=self.tau,
            alpha_f=self.alpha_f, alpha_c=self.alpha_c, pop_scale=self.pop_scale,
            seed=self.seed)
        loss_cfg = LossWeights(
            lambda_div=self.lambda_div, lambda_pop=self.lambda_pop,
            margin=self.margin, nce_temperature=self.nce_temperature,
            margin_div=self.margin_div, cone_c=self.cone_c)
        train_cfg = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            lr_floor=self.lr_floor, plateau_patience=self.plateau_patience)
        return model_cfg, loss_cfg, train_cfg

    def fit(self, corpus, y=None, out_path=None, log=None):
        """Train on a corpus (a :class:`Corpus` or a dataset directory)."""
        corpus = _as_corpus(corpus)
        model_cfg, loss_cfg, train_cfg = self._configs()
        ckpt, report, params = training.train(model_cfg, loss_cfg, train_cfg,
                                              corpus, out_path=out_path, log=log)
        self.model_config_ = model_cfg
        self.loss_config_ = loss_cfg
        self.train_config_ = train_cfg
        self.params_ = params
        self.checkpoint_ = ckpt
        self.report_ = report
        self.corpus_ = corpus
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this retriever has not been fitted; call fit first")

    def decision_function(self, queries, corpus=None):
        """Blended similarity matrix (n_queries, n_videos)."""
        self._check_fitted()
        corpus = self.corpus_ if corpus is None else _as_corpus(corpus)
        words = _as_word_arrays(queries)
        holders = [QueryRecord(query_id=f"adhoc{i}", video_id=corpus.videos[0].video_id,
                               words=w) for i, w in enumerate(words)]
        scores, _, _ = evaluation.score_matrix(self.params_, self.model_config_,
                                               corpus, holders)
        return scores

    def predict(self, queries, corpus=None):
        """Top-ranked video id for each query."""
        self._check_fitted()
        corpus = self.corpus_ if corpus is None else _as_corpus(corpus)
        scores = self.decision_function(queries, corpus=corpus)
        vids = corpus.video_ids()
        # stable argsort keeps id order for equal scores
        best = [int(np.argsort(-row, kind="stable")[0]) for row in scores]
        return np.array([vids[i] for i in best], dtype=object)

    def rank(self, query_words, corpus=None):
        """All videos ordered by similarity to one query."""
        self._check_fitted()
        corpus = self.corpus_ if corpus is None else _as_corpus(corpus)
        return evaluation.rank_videos(self.params_, self.model_config_, corpus,
                                      np.asarray(query_words))

    def evaluate(self, corpus=None, split="all"):
        self._check_fitted()
        corpus = self.corpus_ if corpus is None else _as_corpus(corpus)
        return evaluation.evaluate_retrieval(self.params_, self.model_config_,
                                             corpus, split=split)

    def score(self, corpus=None, y=None, split="val"):
        """SumR on the given corpus split (falls back to all queries)."""
        self._check_fitted()
        corpus = self.corpus_ if corpus is None else _as_corpus(corpus)
        if not corpus.queries_for_split(split):
            split = "all"
        return self.evaluate(corpus=corpus, split=split).sum_r
