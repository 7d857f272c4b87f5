"""scikit-learn style wrappers around the functional pipeline.

``X`` is either a :class:`~factormatch.lattice.Configuration` or an integer
array of 0/1 labels with shape ``(L,) * d``.  There is no target; ``fit``
runs the construction and stores the results in trailing-underscore
attributes, ``transform`` returns a per-site array.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .lattice import Configuration, Torus
from .matcher3d import DEFAULT_C_SEP, run3d
from .matching import run2d
from .partitions import Schedule, build_chain

__all__ = ["check_configuration", "PartitionHierarchy", "GreedyMultiscaleMatcher", "StagedFlowMatcher"]


def check_configuration(X) -> Configuration:
    if isinstance(X, Configuration):
        return X
    a = np.asarray(X)
    if a.ndim < 1 or len(set(a.shape)) != 1:
        raise ValueError(f"labels must form a hypercube, got shape {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise ValueError("labels must be 0 (yellow) or 1 (blue)")
    torus = Torus(a.ndim, a.shape[0])
    return Configuration(torus, a.astype(np.uint8))


def _schedule(spec) -> Schedule | None:
    if spec is None or isinstance(spec, Schedule):
        return spec
    return Schedule.parse(spec)


class PartitionHierarchy(TransformerMixin, BaseEstimator):
    """Builds the nested partition chain; ``transform`` gives the canonical
    cell id of every site at every level, shape ``(n_levels, L^d)``."""

    def __init__(self, schedule=None):
        self.schedule = schedule

    def fit(self, X, y=None):
        cfg = check_configuration(X)
        self.chain_ = build_chain(cfg, _schedule(self.schedule))
        self.sizes_ = list(self.chain_.sizes)
        self.n_levels_ = len(self.sizes_)
        return self

    def transform(self, X):
        check_is_fitted(self, "chain_")
        cfg = check_configuration(X)
        chain = build_chain(cfg, self.chain_.schedule)
        return np.stack([p.canonical() for p in chain.levels])


class _MatcherBase(TransformerMixin, BaseEstimator):
    def _match(self, cfg):
        raise NotImplementedError

    def fit(self, X, y=None):
        cfg = check_configuration(X)
        self.matching_ = self._match(cfg)
        self.n_unmatched_ = int((self.matching_.partner < 0).sum())
        return self

    def transform(self, X):
        """Partner index per site (``-1`` for unmatched)."""
        check_is_fitted(self, "matching_")
        return self._match(check_configuration(X)).partner.copy()

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X).matching_.partner.copy()

    def lengths(self, norm: str = "inf"):
        check_is_fitted(self, "matching_")
        return self.matching_.lengths(norm)


class GreedyMultiscaleMatcher(_MatcherBase):
    """Rank-against-rank greedy matching through every level of the chain."""

    def __init__(self, schedule=None):
        self.schedule = schedule

    def _match(self, cfg):
        m, chain, stats = run2d(cfg, schedule=_schedule(self.schedule))
        self.chain_ = chain
        self.stats_ = stats
        return m


class StagedFlowMatcher(_MatcherBase):
    """Greedy matching inside elementary cells followed by flow-based
    rematching stages."""

    def __init__(self, schedule=None, k=None, epsilon=0.5, form="power", c_sep=DEFAULT_C_SEP, stage_budget=None, initial="single", lift_rule="lex"):
        self.schedule = schedule
        self.k = k
        self.epsilon = epsilon
        self.form = form
        self.c_sep = c_sep
        self.stage_budget = stage_budget
        self.initial = initial
        self.lift_rule = lift_rule

    def _match(self, cfg):
        res = run3d(
            cfg,
            schedule=_schedule(self.schedule),
            k=self.k,
            epsilon=self.epsilon,
            form=self.form,
            c_sep=self.c_sep,
            stage_budget=self.stage_budget,
            initial=self.initial,
            lift_rule=self.lift_rule,
        )
        self.result_ = res
        self.events_ = res.events
        self.shortfall_residue_ = res.shortfall_residue()
        return res.matching
