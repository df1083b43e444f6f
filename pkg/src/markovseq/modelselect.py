"""Log-likelihood accounting and BIC for comparing fitted models."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError
from .hmm import HiddenMarkovModel, hmm_log_likelihood
from .markov import MarkovModel, mm_log_likelihood
from .mixture import MixtureModel, mixture_log_likelihood
from .seqdata import CovariateFrame, SequenceSet


@dataclass(frozen=True)
class ModelScore:
    log_likelihood: float
    free_parameters: int
    n_observations: int
    bic: float

    @classmethod
    def from_values(cls, log_likelihood: float, free_parameters: int, n_observations: int) -> "ModelScore":
        if n_observations <= 0:
            raise DataError("BIC needs at least one observation")
        value = -2.0 * log_likelihood + free_parameters * math.log(n_observations)
        return cls(float(log_likelihood), int(free_parameters), int(n_observations), float(value))

    def to_dict(self) -> dict:
        return asdict(self)


def _free_in_rows(probs: np.ndarray) -> int:
    """Sum over rows of (nonzero entries - 1); all-zero rows contribute nothing."""
    nonzero = (np.atleast_2d(probs) != 0).sum(axis=1)
    return int(np.sum(np.maximum(nonzero - 1, 0)))


def count_free_parameters(model) -> int:
    """Free parameters, never counting entries fixed at zero.

    Each probability row contributes its number of nonzero entries minus one;
    a mixture adds ``design columns x (K - 1)`` coefficients.
    """
    if isinstance(model, MarkovModel):
        return _free_in_rows(model.initial) + _free_in_rows(model.transitions)
    if isinstance(model, HiddenMarkovModel):
        return _free_in_rows(model.initial) + _free_in_rows(model.transitions) + _free_in_rows(model.emissions)
    if isinstance(model, MixtureModel):
        inner = sum(count_free_parameters(c) for c in model.clusters)
        return inner + model.design.n_columns * (model.n_clusters - 1)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def n_observations(s: SequenceSet) -> int:
    """Observed cells: neither unknown nor padding."""
    return int(np.count_nonzero(s.cells >= 0))


def log_likelihood(model, s: SequenceSet, cov: CovariateFrame | None = None) -> float:
    if isinstance(model, MarkovModel):
        return mm_log_likelihood(model, s)
    if isinstance(model, HiddenMarkovModel):
        return hmm_log_likelihood(model, s)
    if isinstance(model, MixtureModel):
        return mixture_log_likelihood(model, s, cov)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def bic(model, s: SequenceSet, cov: CovariateFrame | None = None) -> ModelScore:
    return ModelScore.from_values(log_likelihood(model, s, cov), count_free_parameters(model), n_observations(s))


def comparison_table(scores: dict[str, ModelScore]) -> str:
    """Plain-text table of named scores, best (lowest BIC) first."""
    rows = sorted(scores.items(), key=lambda kv: kv[1].bic)
    w = max(8, max((len(k) for k in scores), default=5) + 2)
    lines = [f"{'model':<{w}}{'logLik':>14}{'df':>6}{'n':>8}{'BIC':>14}"]
    for name, sc in rows:
        lines.append(f"{name:<{w}}{sc.log_likelihood:>14.3f}{sc.free_parameters:>6d}{sc.n_observations:>8d}{sc.bic:>14.3f}")
    return "\n".join(lines)
