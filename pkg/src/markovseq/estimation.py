"""Starting values, restart orchestration and direct numerical maximum likelihood."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from .errors import EstimationError, ModelError
from .hmm import EMResult, HiddenMarkovModel, accumulate_counts, as_hmm, em_fit, posteriors
from .markov import MarkovModel, estimate_mm, mm_log_likelihood, transition_counts
from .mixture import MixtureModel, _design_for, _log_priors, em_fit_mixture
from .seqdata import CovariateFrame, SequenceSet, first_state_counts

logger = logging.getLogger(__name__)

Model = MarkovModel | HiddenMarkovModel | MixtureModel


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _random_rows(rng, shape, mask=None, diag_boost: float = 0.0) -> np.ndarray:
    w = rng.random(shape)
    if diag_boost:
        w = w + diag_boost * np.eye(shape[0], shape[-1])
    if mask is not None:
        w = np.where(mask, w, 0.0)
    return w / w.sum(axis=-1, keepdims=True)


def simulate_initial_probs(n_states: int, seed=None) -> np.ndarray:
    if n_states < 1:
        raise ValueError("n_states must be positive")
    return _random_rows(_rng(seed), (n_states,))


def simulate_transition_probs(n_states: int, n_clusters: int = 1, diag_boost: float = 0.0, seed=None):
    """Random row-stochastic matrices; ``diag_boost`` is added to each diagonal weight before normalizing."""
    if n_states < 1 or n_clusters < 1:
        raise ValueError("dimensions must be positive")
    if diag_boost < 0:
        raise ValueError("diag_boost must be non-negative")
    rng = _rng(seed)
    return [_random_rows(rng, (n_states, n_states), diag_boost=diag_boost) for _ in range(n_clusters)]


def simulate_emission_probs(n_states, n_symbols: int, n_clusters: int = 1, seed=None):
    """Random emission matrices; ``n_states`` may be one count or one per cluster."""
    sizes = [n_states] * n_clusters if np.isscalar(n_states) else list(n_states)
    if min(sizes) < 1 or n_symbols < 1:
        raise ValueError("dimensions must be positive")
    rng = _rng(seed)
    return [_random_rows(rng, (s, n_symbols)) for s in sizes]


def randomize_model(model: Model, seed=None) -> Model:
    """Fresh random starting values with the same shape and the same structural zeros.

    Mixture coefficients are reset to zero.
    """
    rng = _rng(seed)
    if isinstance(model, MarkovModel):
        return MarkovModel(
            model.alphabet,
            _random_rows(rng, model.initial.shape, model.initial != 0),
            _random_rows(rng, model.transitions.shape, model.transitions != 0),
        )
    if isinstance(model, HiddenMarkovModel):
        return model.replace(
            initial=_random_rows(rng, model.initial.shape, model.initial != 0),
            transitions=_random_rows(rng, model.transitions.shape, model.transitions != 0),
            emissions=_random_rows(rng, model.emissions.shape, model.emissions != 0),
        )
    if isinstance(model, MixtureModel):
        return model.replace(
            clusters=tuple(randomize_model(c, rng) for c in model.clusters),
            coefficients=np.zeros_like(model.coefficients),
        )
    raise TypeError(f"unsupported model type {type(model).__name__}")


def round_seed(master_seed: int, round_index: int) -> int:
    """Per-round seed derived from the master seed and the round index."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(round_index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class RestartControl:
    times: int = 0
    n_optimum: int = 25
    seed: int = 0
    tolerance: float = 1e-4
    threads: int = 1
    max_iterations: int = 1000
    relative_tolerance: float = 1e-10

    def __post_init__(self):
        if self.times < 0:
            raise ValueError("times must be >= 0")
        if self.n_optimum < 1:
            raise ValueError("n_optimum must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class GlobalControl:
    maxtime: float | None = None
    maxeval: int = 10_000
    multistart: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.maxtime is not None and self.maxtime <= 0:
            raise ValueError("maxtime must be positive")
        if self.maxeval < 1 or self.multistart < 1:
            raise ValueError("maxeval and multistart must be positive")


@dataclass
class FitReport:
    """Outcome of a multi-round fit.

    ``best_opt_restart`` lists the best round log-likelihoods in descending
    order; failed rounds appear as ``-inf``.
    """

    model: Model
    logLik: float
    best_opt_restart: list[float]
    round_logliks: list[float]
    failures: dict[int, str]
    master_seed: int
    round_seeds: list[int]
    best_round: int
    times_best_found: int
    method: str = "em"
    em_results: EMResult | None = None
    termination: str = "convergence"
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def num(x):
            return x if np.isfinite(x) else ("-Inf" if x < 0 else "Inf")

        return {
            "method": self.method,
            "logLik": num(self.logLik),
            "best_opt_restart": [num(x) for x in self.best_opt_restart],
            "round_logliks": [num(x) for x in self.round_logliks],
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "best_round": self.best_round,
            "times_best_found": self.times_best_found,
            "em_results": self.em_results.to_dict() if self.em_results else None,
            "termination": self.termination,
            "rng": {"master_seed": self.master_seed, "round_seeds": self.round_seeds},
            "metadata": self.metadata,
        }


def _fit_once(model: Model, s: SequenceSet, cov, control: RestartControl) -> tuple[Model, EMResult]:
    if isinstance(model, MarkovModel):
        fitted = estimate_mm(s)
        ll = mm_log_likelihood(fitted, s)
        return fitted, EMResult(ll, 0, 0.0, [ll])
    if isinstance(model, HiddenMarkovModel):
        return em_fit(model, s, control.max_iterations, control.relative_tolerance)
    return em_fit_mixture(model, s, cov, control.max_iterations, control.relative_tolerance)


def _ledger(values: list[float], n_optimum: int) -> list[float]:
    return sorted(values, reverse=True)[:n_optimum]


def fit_with_restarts(
    model: Model,
    s: SequenceSet,
    control: RestartControl = RestartControl(),
    cov: CovariateFrame | None = None,
) -> FitReport:
    """EM from the given start, then from ``control.times`` random starts.

    Round 0 uses ``model`` as given. Round ``r >= 1`` starts from
    :func:`randomize_model` seeded by ``round_seed(control.seed, r)``. Rounds
    run on up to ``control.threads`` threads; results are merged by round index,
    so the report does not depend on the thread count. The best round wins,
    ties going to the earliest.

    Raises:
        EstimationError: every round failed.
    """
    # closed form: restarts cannot change the answer
    times = 0 if isinstance(model, MarkovModel) else control.times
    seeds = [round_seed(control.seed, r) for r in range(times + 1)]

    def run(r: int):
        try:
            start = model if r == 0 else randomize_model(model, seeds[r])
            fitted, res = _fit_once(start, s, cov, control)
            if not np.isfinite(res.logLik):
                raise EstimationError("non-finite final log-likelihood")
            return fitted, res, None
        except (EstimationError, np.linalg.LinAlgError, FloatingPointError, ModelError) as exc:
            return None, None, f"EM algorithm failed: {exc}"

    if control.threads > 1 and times > 0:
        with ThreadPoolExecutor(max_workers=control.threads) as pool:
            results = list(pool.map(run, range(times + 1)))
    else:
        results = [run(r) for r in range(times + 1)]

    lls = [res.logLik if res is not None else -np.inf for _, res, _ in results]
    failures = {r: msg for r, (_, _, msg) in enumerate(results) if msg is not None}
    for r, msg in failures.items():
        logger.warning("round %d: %s", r, msg)
    if len(failures) == len(results):
        detail = "; ".join(f"round {r}: {m}" for r, m in sorted(failures.items()))
        raise EstimationError(f"all {len(results)} estimation rounds failed ({detail})")

    best = int(np.argmax(lls))
    best_model, best_res, _ = results[best]
    found = sum(1 for x in lls if np.isfinite(x) and lls[best] - x <= control.tolerance)
    return FitReport(
        model=best_model,
        logLik=lls[best],
        best_opt_restart=_ledger(lls, control.n_optimum),
        round_logliks=lls,
        failures=failures,
        master_seed=control.seed,
        round_seeds=seeds,
        best_round=best,
        times_best_found=found,
        method="em",
        em_results=best_res,
        metadata={"convergence_criterion": "relative log-likelihood change",
                  "relative_tolerance": control.relative_tolerance,
                  "max_iterations": control.max_iterations},
    )


@dataclass
class _Row:
    block: int
    row: int
    pinned: int
    free: np.ndarray


class SoftmaxParameterization:
    """Maps a model's probability rows to unconstrained reals and back.

    Each row ``p`` is written as ``softmax(theta)`` over its nonzero entries,
    with the first nonzero entry's parameter pinned to 0. Entries that are
    exactly zero are structural and take no parameter. Mixture coefficients
    of the non-reference clusters are appended as they are.
    """

    def __init__(self, model: Model):
        self.template = model
        self.blocks = self._blocks(model)
        self.rows: list[_Row] = []
        for b, probs in enumerate(self.blocks):
            for r, row in enumerate(probs):
                nz = np.flatnonzero(row)
                if nz.size == 0:
                    raise ModelError("probability row with no nonzero entry")
                self.rows.append(_Row(b, r, int(nz[0]), nz[1:]))
        self.n_prob_params = sum(r.free.size for r in self.rows)
        self.coef_shape = model.coefficients[:, 1:].shape if isinstance(model, MixtureModel) else (0, 0)
        self.size = self.n_prob_params + int(np.prod(self.coef_shape))

    @staticmethod
    def _blocks(model: Model) -> list[np.ndarray]:
        if isinstance(model, MarkovModel):
            return [model.initial[None, :], model.transitions]
        if isinstance(model, HiddenMarkovModel):
            return [model.initial[None, :], model.transitions, model.emissions]
        out = []
        for c in model.clusters:
            out += SoftmaxParameterization._blocks(c)
        return out

    def to_vector(self, model: Model) -> np.ndarray:
        blocks = self._blocks(model)
        theta = np.empty(self.size)
        i = 0
        with np.errstate(divide="ignore"):
            for r in self.rows:
                row = blocks[r.block][r.row]
                theta[i:i + r.free.size] = np.log(row[r.free]) - np.log(row[r.pinned])
                i += r.free.size
        if isinstance(model, MixtureModel):
            theta[i:] = model.coefficients[:, 1:].ravel()
        return theta

    def _probabilities(self, theta: np.ndarray) -> list[np.ndarray]:
        blocks = [np.zeros_like(b, dtype=float) for b in self.blocks]
        i = 0
        for r in self.rows:
            logits = np.concatenate(([0.0], theta[i:i + r.free.size]))
            p = softmax(logits)
            blocks[r.block][r.row, r.pinned] = p[0]
            blocks[r.block][r.row, r.free] = p[1:]
            i += r.free.size
        return blocks

    def from_vector(self, theta: np.ndarray) -> Model:
        blocks = self._probabilities(theta)
        return self._rebuild(self.template, blocks, theta[self.n_prob_params:])

    def _rebuild(self, model, blocks, coef_flat):
        if isinstance(model, MarkovModel):
            return MarkovModel(model.alphabet, blocks[0][0], blocks[1])
        if isinstance(model, HiddenMarkovModel):
            return model.replace(initial=blocks[0][0], transitions=blocks[1], emissions=blocks[2])
        clusters = []
        for c in model.clusters:
            n = len(self._blocks(c))
            clusters.append(self._rebuild(c, blocks[:n], None))
            blocks = blocks[n:]
        coef = np.zeros_like(model.coefficients)
        coef[:, 1:] = np.asarray(coef_flat).reshape(self.coef_shape)
        return model.replace(clusters=tuple(clusters), coefficients=coef)

    def gradient(self, model: Model, counts: list[np.ndarray], coef_grad: np.ndarray | None) -> np.ndarray:
        """Log-likelihood gradient from expected counts, one count array per probability block."""
        blocks = self._blocks(model)
        g = np.empty(self.size)
        i = 0
        for r in self.rows:
            c = counts[r.block][r.row]
            p = blocks[r.block][r.row]
            g[i:i + r.free.size] = c[r.free] - p[r.free] * c.sum()
            i += r.free.size
        if coef_grad is not None:
            g[i:] = coef_grad.ravel()
        return g


def _value_and_counts(model: Model, s: SequenceSet, cov) -> tuple[float, list[np.ndarray], np.ndarray | None]:
    """Log-likelihood, expected counts per probability block, and the coefficient gradient."""
    if isinstance(model, MarkovModel):
        first = first_state_counts(s).astype(float)
        trans = transition_counts(s).astype(float)
        return mm_log_likelihood(model, s), [first[None, :], trans], None
    if isinstance(model, HiddenMarkovModel):
        c = accumulate_counts(posteriors(model, s), model.n_symbols)
        return float(np.sum(c.log_likelihoods)), [c.initial[None, :], c.transitions, c.emissions], None

    x = _design_for(model, s, cov)
    log_prior = _log_priors(model, x)
    posts = [posteriors(as_hmm(c), s) for c in model.clusters]
    joint = log_prior + np.column_stack([p.log_likelihoods for p in posts])
    with np.errstate(invalid="ignore"):
        per_subject = logsumexp(joint, axis=1)
    ll = float(np.sum(per_subject))
    if not np.isfinite(ll):
        return ll, [], None
    resp = np.exp(joint - per_subject[:, None])
    counts = []
    for j, (c, p) in enumerate(zip(model.clusters, posts)):
        acc = accumulate_counts(p, len(s.alphabet), resp[:, j])
        counts += [acc.initial[None, :], acc.transitions]
        if isinstance(c, HiddenMarkovModel):
            counts.append(acc.emissions)
    coef_grad = (x.T @ (resp - np.exp(log_prior)))[:, 1:]
    return ll, counts, coef_grad


class _BudgetExhausted(Exception):
    pass


def direct_ml_fit(
    model: Model,
    s: SequenceSet,
    control: GlobalControl = GlobalControl(),
    cov: CovariateFrame | None = None,
) -> FitReport:
    """Maximum likelihood by multistart quasi-Newton (L-BFGS) in softmax coordinates.

    Starts are the given model plus ``multistart - 1`` random starts. Every
    objective evaluation counts against ``maxeval``; ``maxtime`` bounds the
    wall clock. The best point seen is polished by one more local run if
    budget remains. The termination reason is ``"budget"`` when a budget
    stopped the search and ``"convergence"`` otherwise.

    Raises:
        EstimationError: no finite log-likelihood was found within the budget.
    """
    param = SoftmaxParameterization(model)
    deadline = None if control.maxtime is None else time.monotonic() + control.maxtime
    state = {"evals": 0, "best": -np.inf, "theta": None, "exhausted": False, "time_bound": False}

    def objective(theta):
        if state["evals"] >= control.maxeval:
            state["exhausted"] = True
            raise _BudgetExhausted
        if deadline is not None and time.monotonic() > deadline:
            state["exhausted"] = state["time_bound"] = True
            raise _BudgetExhausted
        state["evals"] += 1
        m = param.from_vector(theta)
        ll, counts, coef_grad = _value_and_counts(m, s, cov)
        if not np.isfinite(ll):
            return np.inf, np.zeros_like(theta)
        if ll > state["best"]:
            state["best"], state["theta"] = ll, theta.copy()
        return -ll, -param.gradient(m, counts, coef_grad)

    def local(theta0) -> float:
        before = state["best"]
        state["best"] = -np.inf
        try:
            minimize(objective, theta0, jac=True, method="L-BFGS-B",
                     options={"maxiter": 100_000, "maxfun": 10**9, "gtol": 1e-10, "ftol": 1e-15})
        except _BudgetExhausted:
            pass
        run_best = state["best"]
        state["best"] = max(before, run_best)
        return run_best

    seeds = [round_seed(control.seed, r) for r in range(control.multistart)]
    starts = [model] + [randomize_model(model, seeds[r]) for r in range(1, control.multistart)]
    run_values = []
    for start in starts:
        if state["exhausted"]:
            break
        run_values.append(local(param.to_vector(start)))
    # state["theta"] is the best point over all runs
    if state["theta"] is not None and not state["exhausted"]:
        local(state["theta"].copy())
    if state["theta"] is None:
        raise EstimationError("budget exhausted before any finite log-likelihood was found")

    best_model = param.from_vector(state["theta"])
    from .modelselect import log_likelihood

    final_ll = log_likelihood(best_model, s, cov)
    run_values = [v if np.isfinite(v) else -np.inf for v in run_values]
    best_run = int(np.argmax(run_values)) if run_values else 0
    return FitReport(
        model=best_model,
        logLik=final_ll,
        best_opt_restart=sorted(run_values, reverse=True),
        round_logliks=run_values,
        failures={r: "no finite log-likelihood" for r, v in enumerate(run_values) if not np.isfinite(v)},
        master_seed=control.seed,
        round_seeds=seeds,
        best_round=best_run,
        times_best_found=sum(1 for v in run_values if np.isfinite(v) and final_ll - v <= 1e-4),
        method="direct",
        termination="budget" if state["exhausted"] else "convergence",
        metadata={
            "evaluations": state["evals"],
            "maxeval": control.maxeval,
            "maxtime": control.maxtime,
            "reproducible": not state["time_bound"],
            "optimizer": "multistart L-BFGS in softmax coordinates",
        },
    )


__all__ = [
    "FitReport",
    "GlobalControl",
    "RestartControl",
    "SoftmaxParameterization",
    "direct_ml_fit",
    "fit_with_restarts",
    "randomize_model",
    "round_seed",
    "simulate_emission_probs",
    "simulate_initial_probs",
    "simulate_transition_probs",
]
