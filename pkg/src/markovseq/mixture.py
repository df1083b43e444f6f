"""Mixture Markov and mixture hidden Markov models with covariate-dependent cluster priors.

Cluster membership follows a multinomial logit: subject ``i`` belongs to
cluster ``k`` with prior probability ``softmax(x_i @ coefficients)[k]``, where
the first (reference) cluster's coefficient column is pinned to zero. Each
cluster has its own MM or HMM; an MM is handled internally as an HMM whose
hidden states emit their own symbol.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, logsumexp, softmax

from .errors import DataError, EstimationError, ModelError, SingularHessianError
from .hmm import (
    EMResult,
    HiddenMarkovModel,
    accumulate_counts,
    as_hmm,
    m_step,
    posteriors,
    relative_change,
    sequence_log_likelihoods,
)
from .markov import MarkovModel
from .seqdata import Alphabet, CovariateFrame, SequenceSet

HESSIAN_CONDITION_LIMIT = 1e12
MAX_STEP_HALVINGS = 10

Submodel = MarkovModel | HiddenMarkovModel


@dataclass(frozen=True)
class DesignSpec:
    """Which covariates enter the membership model, and how they expand to columns.

    With the intercept off every level of a covariate gets its own indicator
    column; with it on, an ``(Intercept)`` column is followed by indicators for
    all but the first level. Without covariates the design is the intercept alone.
    """

    covariates: tuple[str, ...] = ()
    intercept: bool = True
    levels: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "levels", {k: tuple(v) for k, v in self.levels.items()})
        missing = [c for c in self.covariates if c not in self.levels]
        if missing:
            raise ModelError(f"levels unknown for covariates {missing}")
        if not self.covariates and not self.intercept:
            raise ModelError("design needs at least one column: add covariates or the intercept")
        cols = self.columns
        if len(set(cols)) != len(cols):
            raise ModelError(f"design column labels are not unique: {cols}")

    @classmethod
    def from_frame(cls, cov: CovariateFrame | None, covariates: Sequence[str] = (), intercept: bool = True):
        covariates = tuple(covariates)
        if covariates and cov is None:
            raise DataError("covariates requested but no covariate data given")
        levels = {}
        for name in covariates:
            if name not in cov.columns:
                raise DataError(f"covariate {name!r} not found")
            levels[name] = cov.columns[name].levels
        return cls(covariates, intercept, levels)

    @property
    def columns(self) -> tuple[str, ...]:
        cols = ["(Intercept)"] if self.intercept or not self.covariates else []
        for name in self.covariates:
            lv = self.levels[name]
            cols += [f"{name}{x}" for x in (lv[1:] if self.intercept else lv)]
        return tuple(cols)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def matrix(self, cov: CovariateFrame | None, n: int | None = None) -> np.ndarray:
        """Design matrix ``(N, D)`` for the given subjects."""
        if cov is None:
            if self.covariates:
                raise DataError("design uses covariates but none were given")
            if n is None:
                raise DataError("number of subjects required for an intercept-only design")
        else:
            n = len(cov)
        parts = []
        if self.intercept or not self.covariates:
            parts.append(np.ones((n, 1)))
        for name in self.covariates:
            factor = cov.columns.get(name)
            if factor is None:
                raise DataError(f"covariate {name!r} missing from data")
            lookup = {lvl: i for i, lvl in enumerate(self.levels[name])}
            unseen = sorted(set(factor.values) - set(lookup))
            if unseen:
                raise DataError(f"covariate {name!r} has levels {unseen} not in the model design")
            codes = np.array([lookup[v] for v in factor.values])
            onehot = np.eye(len(lookup))[codes]
            parts.append(onehot[:, 1:] if self.intercept else onehot)
        return np.hstack(parts)

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "intercept": self.intercept,
            "levels": {k: list(v) for k, v in self.levels.items()},
            "columns": list(self.columns),
        }

    @classmethod
    def from_dict(cls, d) -> "DesignSpec":
        return cls(tuple(d.get("covariates", ())), bool(d.get("intercept", True)), dict(d.get("levels", {})))


@dataclass(frozen=True, eq=False)
class MixtureModel:
    clusters: tuple[Submodel, ...]
    coefficients: np.ndarray
    design: DesignSpec = field(default_factory=DesignSpec)
    cluster_labels: tuple[str, ...] = ()

    def __post_init__(self):
        clusters = tuple(self.clusters)
        if not clusters:
            raise ModelError("a mixture needs at least one cluster")
        kinds = {type(c) for c in clusters}
        if len(kinds) != 1 or not kinds <= {MarkovModel, HiddenMarkovModel}:
            raise ModelError("clusters must all be MarkovModel or all HiddenMarkovModel")
        if any(c.alphabet != clusters[0].alphabet for c in clusters):
            raise ModelError("clusters must share one alphabet")
        k = len(clusters)
        coef = np.array(self.coefficients, dtype=float)
        if coef.shape != (self.design.n_columns, k):
            raise ModelError(f"coefficients must have shape {(self.design.n_columns, k)}, got {coef.shape}")
        if not np.all(np.isfinite(coef)):
            raise ModelError("coefficients must be finite")
        if np.any(coef[:, 0] != 0):
            raise ModelError("the reference (first) cluster's coefficients must be zero")
        coef.setflags(write=False)
        labels = tuple(self.cluster_labels) or tuple(f"Cluster {i + 1}" for i in range(k))
        if len(labels) != k:
            raise ModelError(f"{len(labels)} cluster labels for {k} clusters")
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "cluster_labels", labels)

    @classmethod
    def with_zero_coefficients(cls, clusters, design: DesignSpec | None = None, cluster_labels=()):
        design = design or DesignSpec()
        return cls(tuple(clusters), np.zeros((design.n_columns, len(clusters))), design, tuple(cluster_labels))

    @property
    def kind(self) -> str:
        return "mmm" if isinstance(self.clusters[0], MarkovModel) else "mhmm"

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def alphabet(self) -> Alphabet:
        return self.clusters[0].alphabet

    def replace(self, **changes) -> "MixtureModel":
        kw = dict(clusters=self.clusters, coefficients=self.coefficients, design=self.design,
                  cluster_labels=self.cluster_labels)
        kw.update(changes)
        return MixtureModel(**kw)

    def to_dict(self) -> dict:
        return {
            "type": self.kind,
            "cluster_labels": list(self.cluster_labels),
            "clusters": [c.to_dict() for c in self.clusters],
            "coefficients": self.coefficients.tolist(),
            "design": self.design.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "MixtureModel":
        sub = MarkovModel if d["type"] == "mmm" else HiddenMarkovModel
        return cls(
            tuple(sub.from_dict(c) for c in d["clusters"]),
            np.array(d["coefficients"], dtype=float),
            DesignSpec.from_dict(d["design"]),
            tuple(d.get("cluster_labels", ())),
        )


def cluster_priors(coefficients: np.ndarray, design: DesignSpec, cov: CovariateFrame | None, n: int | None = None):
    """Prior membership probabilities ``(N, K)``: a row-wise softmax of ``X @ coefficients``."""
    x = design.matrix(cov, n)
    return softmax(x @ np.asarray(coefficients, dtype=float), axis=1)


def _log_priors(m: MixtureModel, x: np.ndarray) -> np.ndarray:
    return log_softmax(x @ m.coefficients, axis=1)


def _design_for(m: MixtureModel, s: SequenceSet, cov: CovariateFrame | None) -> np.ndarray:
    if cov is not None:
        cov.check_aligned(s)
    return m.design.matrix(cov, s.n_sequences)


def _cluster_log_likelihoods(m: MixtureModel, s: SequenceSet) -> np.ndarray:
    if m.alphabet != s.alphabet:
        raise ModelError("model and data alphabets differ")
    return np.column_stack([sequence_log_likelihoods(as_hmm(c), s) for c in m.clusters])


@dataclass(frozen=True)
class BlockModel:
    """The mixture written as one HMM over the union of all clusters' hidden states.

    ``initial`` is subject-specific: row ``i`` is the prior of each cluster
    times that cluster's initial distribution.
    """

    initial: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    cluster_of_state: np.ndarray
    alphabet: Alphabet

    def subject_hmm(self, i: int) -> HiddenMarkovModel:
        return HiddenMarkovModel(self.alphabet, self.initial[i], self.transitions, self.emissions)


def joint_block_model(m: MixtureModel, priors: np.ndarray) -> BlockModel:
    hmms = [as_hmm(c) for c in m.clusters]
    sizes = [h.n_states for h in hmms]
    total = sum(sizes)
    priors = np.atleast_2d(priors)
    trans = np.zeros((total, total))
    initial = np.zeros((priors.shape[0], total))
    emis = np.vstack([h.emissions for h in hmms])
    owner = np.repeat(np.arange(len(hmms)), sizes)
    start = 0
    for k, h in enumerate(hmms):
        block = slice(start, start + h.n_states)
        trans[block, block] = h.transitions
        initial[:, block] = priors[:, k, None] * h.initial[None, :]
        start += h.n_states
    return BlockModel(initial, trans, emis, owner, m.alphabet)


def posterior_memberships(m: MixtureModel, s: SequenceSet, cov: CovariateFrame | None = None) -> np.ndarray:
    """Cluster membership probabilities after conditioning on each sequence.

    A sequence impossible under every cluster keeps its prior row.
    """
    x = _design_for(m, s, cov)
    log_prior = _log_priors(m, x)
    joint = log_prior + _cluster_log_likelihoods(m, s)
    with np.errstate(invalid="ignore"):
        total = logsumexp(joint, axis=1, keepdims=True)
        post = np.exp(joint - total)
    impossible = ~np.isfinite(total[:, 0])
    if impossible.any():
        post[impossible] = np.exp(log_prior[impossible])
    return post


def mixture_log_likelihood(m: MixtureModel, s: SequenceSet, cov: CovariateFrame | None = None) -> float:
    x = _design_for(m, s, cov)
    joint = _log_priors(m, x) + _cluster_log_likelihoods(m, s)
    with np.errstate(invalid="ignore"):
        return float(np.sum(logsumexp(joint, axis=1)))


def coefficient_information(x: np.ndarray, priors: np.ndarray) -> np.ndarray:
    """Fisher information of the free coefficients, ordered (design column, cluster 2..K)."""
    p = priors[:, 1:]
    w = np.einsum("ik,kl->ikl", p, np.eye(p.shape[1])) - p[:, :, None] * p[:, None, :]
    d, km1 = x.shape[1], p.shape[1]
    return np.einsum("id,ie,ikl->dkel", x, x, w).reshape(d * km1, d * km1)


def _weighted_logit_objective(beta: np.ndarray, x: np.ndarray, resp: np.ndarray) -> float:
    logp = log_softmax(x @ beta, axis=1)
    return float(np.sum(np.where(resp > 0, resp * logp, 0.0)))


def newton_coefficients(beta: np.ndarray, x: np.ndarray, resp: np.ndarray) -> np.ndarray:
    """One safeguarded Newton-Raphson step on the weighted multinomial-logit likelihood.

    ``resp`` are posterior memberships used as soft labels. The step is halved
    up to ten times until the objective does not decrease; if none succeeds the
    coefficients are left unchanged.

    Raises:
        SingularHessianError: the information matrix is singular or its
            condition number exceeds 1e12.
    """
    k = beta.shape[1]
    if k == 1:
        return beta
    p = softmax(x @ beta, axis=1)
    grad = (x.T @ (resp - p))[:, 1:]
    info = coefficient_information(x, p)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(info) if np.all(np.isfinite(info)) else np.inf
    if not np.isfinite(cond) or cond > HESSIAN_CONDITION_LIMIT:
        raise SingularHessianError()
    delta = np.linalg.solve(info, grad.ravel()).reshape(grad.shape)
    base = _weighted_logit_objective(beta, x, resp)
    step = 1.0
    for _ in range(MAX_STEP_HALVINGS + 1):
        cand = beta.copy()
        cand[:, 1:] += step * delta
        if np.all(np.isfinite(cand)) and _weighted_logit_objective(cand, x, resp) >= base:
            return cand
        step /= 2
    return beta


def _refit_cluster(model: Submodel, counts) -> Submodel:
    if isinstance(model, MarkovModel):
        h = m_step(as_hmm(model), counts, update_emissions=False)
        return MarkovModel(model.alphabet, h.initial, h.transitions)
    return m_step(model, counts)


def em_fit_mixture(
    m: MixtureModel,
    s: SequenceSet,
    cov: CovariateFrame | None = None,
    max_iterations: int = 1000,
    relative_tolerance: float = 1e-10,
) -> tuple[MixtureModel, EMResult]:
    """EM for a mixture: responsibility-weighted Baum-Welch per cluster plus a Newton step for coefficients.

    Raises:
        EstimationError: the log-likelihood is not finite.
        SingularHessianError: the coefficient update failed.
    """
    x = _design_for(m, s, cov)
    if m.alphabet != s.alphabet:
        raise ModelError("model and data alphabets differ")
    trace: list[float] = []
    change = np.nan
    iterations = 0
    current = m
    for iterations in range(1, max_iterations + 1):
        hmms = [as_hmm(c) for c in current.clusters]
        posts = [posteriors(h, s) for h in hmms]
        joint = _log_priors(current, x) + np.column_stack([p.log_likelihoods for p in posts])
        with np.errstate(invalid="ignore"):
            per_subject = logsumexp(joint, axis=1)
        ll = float(np.sum(per_subject))
        if not np.isfinite(ll):
            raise EstimationError("non-finite log-likelihood" + (" at start" if iterations == 1 else ""))
        trace.append(ll)
        resp = np.exp(joint - per_subject[:, None])

        clusters = tuple(
            _refit_cluster(c, accumulate_counts(p, len(s.alphabet), resp[:, j]))
            for j, (c, p) in enumerate(zip(current.clusters, posts))
        )
        beta = newton_coefficients(np.array(current.coefficients), x, resp)
        current = current.replace(clusters=clusters, coefficients=beta)
        if len(trace) > 1:
            change = relative_change(trace[-1], trace[-2])
            if abs(change) < relative_tolerance:
                break
    final = mixture_log_likelihood(current, s, cov)
    if trace:
        change = relative_change(final, trace[-1])
    trace.append(final)
    return current, EMResult(final, iterations, float(change), trace)


@dataclass
class MixtureSummary:
    cluster_labels: tuple[str, ...]
    design_columns: tuple[str, ...]
    coefficients: np.ndarray
    standard_errors: np.ndarray
    log_likelihood: float
    bic: float
    prior_means: np.ndarray
    most_probable: np.ndarray
    counts: np.ndarray
    proportions: np.ndarray
    classification_table: np.ndarray
    empty_clusters: tuple[int, ...]
    prior_cluster_probabilities: np.ndarray
    posterior_cluster_probabilities: np.ndarray
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in np.atleast_2d(a)]

        return {
            "cluster_labels": list(self.cluster_labels),
            "design_columns": list(self.design_columns),
            "coefficients": clean(self.coefficients),
            "standard_errors": clean(self.standard_errors),
            "logLik": self.log_likelihood,
            "BIC": self.bic,
            "prior_means": self.prior_means.tolist(),
            "most_probable_counts": self.counts.tolist(),
            "most_probable_proportions": self.proportions.tolist(),
            "classification_table": clean(self.classification_table),
            "empty_clusters": list(self.empty_clusters),
            "prior_cluster_probabilities": self.prior_cluster_probabilities.tolist(),
            "posterior_cluster_probabilities": self.posterior_cluster_probabilities.tolist(),
            "metadata": self.metadata,
        }

    def __str__(self) -> str:
        return format_summary(self)


def summarize(m: MixtureModel, s: SequenceSet, cov: CovariateFrame | None = None) -> MixtureSummary:
    """Prior/posterior memberships, classification table and coefficient standard errors.

    Standard errors treat the posterior memberships as fixed: they come from
    the inverse Fisher information of the multinomial-logit prior model at the
    fitted coefficients.
    """
    from .modelselect import bic as model_bic

    x = _design_for(m, s, cov)
    prior = softmax(x @ m.coefficients, axis=1)
    post = posterior_memberships(m, s, cov)
    k = m.n_clusters
    best = np.argmax(post, axis=1)
    counts = np.bincount(best, minlength=k)
    table = np.full((k, k), np.nan)
    for j in range(k):
        if counts[j]:
            table[j] = post[best == j].mean(axis=0)
    empty = tuple(int(j) for j in np.flatnonzero(counts == 0))

    se = np.full(m.coefficients.shape, np.nan)
    se[:, 0] = 0.0
    se_note = "inverse Fisher information of the prior model, posteriors held fixed"
    if k > 1:
        info = coefficient_information(x, prior)
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(info)
        if np.isfinite(cond) and cond <= HESSIAN_CONDITION_LIMIT:
            var = np.diag(np.linalg.inv(info)).reshape(x.shape[1], k - 1)
            se[:, 1:] = np.sqrt(np.maximum(var, 0.0))
        else:
            se_note += " (singular: standard errors unavailable)"
    score = model_bic(m, s, cov)
    return MixtureSummary(
        cluster_labels=m.cluster_labels,
        design_columns=m.design.columns,
        coefficients=np.array(m.coefficients),
        standard_errors=se,
        log_likelihood=score.log_likelihood,
        bic=score.bic,
        prior_means=prior.mean(axis=0),
        most_probable=best,
        counts=counts,
        proportions=counts / counts.sum(),
        classification_table=table,
        empty_clusters=empty,
        prior_cluster_probabilities=prior,
        posterior_cluster_probabilities=post,
        metadata={"standard_errors": se_note, "free_parameters": score.free_parameters,
                  "n_observations": score.n_observations},
    )


def format_summary(sm: MixtureSummary) -> str:
    labels = list(sm.cluster_labels)
    out = ["Covariate effects :", f"{labels[0]} is the reference.", ""]
    wcol = max(10, max(len(c) for c in sm.design_columns) + 1)
    for j in range(1, len(labels)):
        out.append(f"{labels[j]} :")
        out.append(" " * wcol + f"{'Estimate':>10}{'Std. error':>12}")
        for d, col in enumerate(sm.design_columns):
            out.append(f"{col:<{wcol}}{sm.coefficients[d, j]:>10.4g}{sm.standard_errors[d, j]:>12.3g}")
        out.append("")
    out.append(f"Log-likelihood: {sm.log_likelihood:.7g}   BIC: {sm.bic:.7g}")
    out.append("")
    w = max(12, max(len(x) for x in labels) + 2)
    out.append("Means of prior cluster probabilities :")
    out.append("".join(f"{x:>{w}}" for x in labels))
    out.append("".join(f"{v:>{w}.3g}" for v in sm.prior_means))
    out.append("")
    out.append("Most probable clusters :")
    out.append(" " * 11 + "".join(f"{x:>{w}}" for x in labels))
    out.append(f"{'count':<11}" + "".join(f"{int(c):>{w}d}" for c in sm.counts))
    out.append(f"{'proportion':<11}" + "".join(f"{p:>{w}.3g}" for p in sm.proportions))
    out.append("")
    out.append("Classification table :")
    out.append("Mean cluster probabilities (in columns) by the most probable cluster (rows)")
    out.append("")
    out.append(" " * w + "".join(f"{x:>{w}}" for x in labels))
    for j, lab in enumerate(labels):
        if j in sm.empty_clusters:
            out.append(f"{lab:<{w}}" + f"{'(no subjects)':>{w}}")
        else:
            out.append(f"{lab:<{w}}" + "".join(f"{v:>{w}.5f}" for v in sm.classification_table[j]))
    return "\n".join(out)


def mixture_hidden_paths(m: MixtureModel, s: SequenceSet, cov: CovariateFrame | None = None):
    """Most probable (cluster, hidden path) per subject.

    Blocks of the joint model never mix, so the joint Viterbi path is the best
    per-cluster path after adding the log prior. Ties go to the lowest cluster.

    Returns:
        list of ``(cluster index, HiddenPath)``.
    """
    from .hmm import HiddenPath, _row_length, viterbi_batch

    x = _design_for(m, s, cov)
    log_prior = _log_priors(m, x)
    per_cluster = [viterbi_batch(as_hmm(c), s) for c in m.clusters]
    scores = log_prior + np.column_stack([lp for _, lp in per_cluster])
    best = np.argmax(scores, axis=1)
    out = []
    for i, k in enumerate(best):
        path = per_cluster[k][0][i, : _row_length(s.cells[i])].copy()
        out.append((int(k), HiddenPath(path, float(scores[i, k]))))
    return out
