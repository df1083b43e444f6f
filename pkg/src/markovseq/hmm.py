"""Hidden Markov model inference in log space.

All recursions are vectorized over sequences. A batch of sequences is an
``(N, T)`` integer array of cell codes (see :mod:`markovseq.seqdata`). Unknown
cells carry no emission information (factor 1). Padding ends a sequence: the
forward and Viterbi variables are carried unchanged through padded columns and
the backward variable is 0 there, so the final column always holds the
end-of-sequence values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, ModelError
from .markov import MarkovModel, _readonly, check_stochastic
from .seqdata import PADDING, Alphabet, SequenceSet


@dataclass(frozen=True, eq=False)
class HiddenMarkovModel:
    """Initial, transition (hidden to hidden) and emission (hidden to symbol) probabilities."""

    alphabet: Alphabet
    initial: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    state_labels: tuple[str, ...] = ()

    def __post_init__(self):
        initial = check_stochastic(self.initial, "initial probabilities")
        transitions = check_stochastic(self.transitions, "transition probabilities")
        emissions = check_stochastic(self.emissions, "emission probabilities")
        n = initial.shape[0]
        if initial.ndim != 1 or transitions.shape != (n, n) or emissions.shape != (n, len(self.alphabet)):
            raise ModelError(
                f"dimension mismatch: initial {initial.shape}, transitions {transitions.shape}, "
                f"emissions {emissions.shape}, alphabet {len(self.alphabet)}"
            )
        labels = tuple(self.state_labels) or tuple(f"State {i + 1}" for i in range(n))
        if len(labels) != n:
            raise ModelError(f"{len(labels)} state labels for {n} states")
        object.__setattr__(self, "initial", _readonly(initial))
        object.__setattr__(self, "transitions", _readonly(transitions))
        object.__setattr__(self, "emissions", _readonly(emissions))
        object.__setattr__(self, "state_labels", labels)

    @property
    def n_states(self) -> int:
        return self.initial.shape[0]

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet)

    def log_params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        with np.errstate(divide="ignore"):
            return np.log(self.initial), np.log(self.transitions), np.log(self.emissions)

    def replace(self, **changes) -> "HiddenMarkovModel":
        kw = dict(alphabet=self.alphabet, initial=self.initial, transitions=self.transitions,
                  emissions=self.emissions, state_labels=self.state_labels)
        kw.update(changes)
        return HiddenMarkovModel(**kw)

    def to_dict(self) -> dict:
        return {
            "type": "hmm",
            "alphabet": self.alphabet.to_dict(),
            "state_labels": list(self.state_labels),
            "initial": self.initial.tolist(),
            "transitions": self.transitions.tolist(),
            "emissions": self.emissions.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "HiddenMarkovModel":
        return cls(
            Alphabet.from_dict(d["alphabet"]),
            np.array(d["initial"]),
            np.array(d["transitions"]),
            np.array(d["emissions"]),
            tuple(d.get("state_labels", ())),
        )

    def __str__(self) -> str:
        return format_hmm(self)


def as_hmm(model: MarkovModel | HiddenMarkovModel) -> HiddenMarkovModel:
    """View an MM as an HMM whose hidden states emit their own symbol."""
    if isinstance(model, HiddenMarkovModel):
        return model
    m = model.n_states
    return HiddenMarkovModel(model.alphabet, model.initial, model.transitions, np.eye(m), model.alphabet.symbols)


@dataclass(frozen=True)
class HiddenPath:
    states: np.ndarray
    log_prob: float


@dataclass
class EMResult:
    """Diagnostics of one EM run; field names follow the usual printed output."""

    logLik: float
    iterations: int
    change: float
    trace: list[float] = field(default_factory=list)
    criterion: str = "relative"

    def to_dict(self) -> dict:
        return {
            "logLik": self.logLik,
            "iterations": self.iterations,
            "change": self.change,
            "criterion": self.criterion,
        }


def _as_cells(data) -> np.ndarray:
    if isinstance(data, SequenceSet):
        return data.cells
    cells = np.asarray(data)
    if cells.ndim == 1:
        cells = cells[None, :]
    return cells


def emission_log_terms(log_b: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """``(N, T, S)`` log emission factors; zero for unknown and padding cells."""
    obs = np.where(cells >= 0, cells, 0)
    terms = log_b.T[obs]
    return np.where((cells >= 0)[..., None], terms, 0.0)


def _log_matmul(log_v: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """``log(exp(log_v) @ mat)`` row by row, shifted by each row's maximum for stability."""
    shift = np.max(log_v, axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    return np.log(np.exp(log_v - shift) @ mat) + shift


def _log_total(log_v: np.ndarray) -> np.ndarray:
    return _log_matmul(log_v, np.ones((log_v.shape[1], 1)))[:, 0]


def _forward(log_pi, a, e, pad):
    n, t, s = e.shape
    alpha = np.empty((n, t, s))
    alpha[:, 0] = log_pi + e[:, 0]
    for k in range(1, t):
        step = _log_matmul(alpha[:, k - 1], a) + e[:, k]
        alpha[:, k] = np.where(pad[:, k, None], alpha[:, k - 1], step)
    return alpha


def _backward(a, e, pad):
    n, t, s = e.shape
    beta = np.zeros((n, t, s))
    for k in range(t - 2, -1, -1):
        step = _log_matmul(e[:, k + 1] + beta[:, k + 1], a.T)
        beta[:, k] = np.where(pad[:, k + 1, None], 0.0, step)
    return beta


def forward_backward(h: HiddenMarkovModel, data) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-likelihoods ``(N,)`` and log forward/backward tables ``(N, T, S)``."""
    cells = _as_cells(data)
    log_pi, _, log_b = h.log_params()
    e = emission_log_terms(log_b, cells)
    pad = cells == PADDING
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        alpha = _forward(log_pi, h.transitions, e, pad)
        beta = _backward(h.transitions, e, pad)
        ll = _log_total(alpha[:, -1])
    return ll, alpha, beta


def sequence_log_likelihoods(h: HiddenMarkovModel, data) -> np.ndarray:
    cells = _as_cells(data)
    log_pi, _, log_b = h.log_params()
    e = emission_log_terms(log_b, cells)
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        alpha = _forward(log_pi, h.transitions, e, cells == PADDING)
        return _log_total(alpha[:, -1])


def hmm_log_likelihood(h: HiddenMarkovModel, s: SequenceSet) -> float:
    _check_alphabet(h, s)
    return float(np.sum(sequence_log_likelihoods(h, s)))


def _row_length(row: np.ndarray) -> int:
    pad = np.flatnonzero(row == PADDING)
    return int(pad[0]) if pad.size else row.shape[0]


def log_forward(h: HiddenMarkovModel, row) -> tuple[float, np.ndarray]:
    """Log-likelihood and ``(L, S)`` log forward table for one sequence of length L."""
    row = np.asarray(row).ravel()
    ll, alpha, _ = forward_backward(h, row[None, :])
    return float(ll[0]), alpha[0, : _row_length(row)]


def log_backward(h: HiddenMarkovModel, row) -> np.ndarray:
    row = np.asarray(row).ravel()
    _, _, beta = forward_backward(h, row[None, :])
    return beta[0, : _row_length(row)]


def posterior_states(h: HiddenMarkovModel, row) -> np.ndarray:
    """Smoothed ``P(z_t = s | y)`` for one sequence, shape ``(L, S)``."""
    row = np.asarray(row).ravel()
    ll, alpha, beta = forward_backward(h, row[None, :])
    with np.errstate(invalid="ignore"):
        gamma = np.exp(alpha[0] + beta[0] - ll[0])
    return gamma[: _row_length(row)]


@dataclass
class ExpectedCounts:
    """Expected sufficient statistics of a (weighted) batch of sequences."""

    log_likelihoods: np.ndarray
    initial: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray


@dataclass
class Posteriors:
    """Forward/backward tables of a batch, ready for weighted count accumulation."""

    cells: np.ndarray
    log_likelihoods: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    log_emission: np.ndarray
    log_transitions: np.ndarray


def posteriors(h: HiddenMarkovModel, data) -> Posteriors:
    cells = _as_cells(data)
    log_pi, log_a, log_b = h.log_params()
    e = emission_log_terms(log_b, cells)
    pad = cells == PADDING
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        alpha = _forward(log_pi, h.transitions, e, pad)
        beta = _backward(h.transitions, e, pad)
        ll = _log_total(alpha[:, -1])
    return Posteriors(cells, ll, alpha, beta, e, log_a)


def accumulate_counts(post: Posteriors, n_symbols: int, weights: np.ndarray | None = None) -> ExpectedCounts:
    """Posterior-expected initial, transition and emission counts.

    ``weights`` scale each sequence's contribution (cluster responsibilities
    in a mixture). Sequences with zero weight, zero length, or zero likelihood
    contribute nothing.
    """
    cells, ll, alpha, beta, e, log_a = (
        post.cells, post.log_likelihoods, post.alpha, post.beta, post.log_emission, post.log_transitions
    )
    n, t = cells.shape
    s = log_a.shape[0]
    pad = cells == PADDING
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    usable = np.isfinite(ll) & (w > 0) & ~pad[:, 0]
    w = np.where(usable, w, 0.0)
    ll_safe = np.where(usable, ll, 0.0)

    with np.errstate(invalid="ignore", under="ignore"):
        gamma = np.exp(alpha + beta - ll_safe[:, None, None])
    gamma = np.where((usable[:, None] & ~pad)[..., None], gamma, 0.0) * w[:, None, None]

    init = gamma[:, 0].sum(axis=0)

    trans = np.zeros((s, s))
    pairs = usable[:, None] & ~pad[:, 1:]
    if t > 1 and pairs.any():
        n_idx, k_idx = np.nonzero(pairs)
        with np.errstate(invalid="ignore", under="ignore"):
            xi = np.exp(
                alpha[n_idx, k_idx, :, None] + log_a[None]
                + (e[n_idx, k_idx + 1] + beta[n_idx, k_idx + 1])[:, None, :]
                - ll_safe[n_idx, None, None]
            )
        trans = np.einsum("p,prs->rs", w[n_idx], np.nan_to_num(xi, nan=0.0))

    emis = np.zeros((s, n_symbols))
    observed = cells >= 0
    obs = np.where(observed, cells, -1)
    for sym in range(n_symbols):
        emis[:, sym] = gamma[obs == sym].sum(axis=0)
    return ExpectedCounts(ll, init, trans, emis)


def expected_counts(h: HiddenMarkovModel, data, weights: np.ndarray | None = None) -> ExpectedCounts:
    """E-step for a batch: :func:`posteriors` followed by :func:`accumulate_counts`."""
    return accumulate_counts(posteriors(h, data), h.n_symbols, weights)


def _renormalize(counts: np.ndarray, old: np.ndarray) -> np.ndarray:
    """Row-normalize expected counts; rows without mass keep their old values."""
    counts = np.atleast_2d(counts)
    old2 = np.atleast_2d(old)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        new = np.where(totals > 0, counts / totals, old2)
    # structural zeros stay exactly zero
    new = np.where(old2 == 0, 0.0, new)
    new = new / new.sum(axis=1, keepdims=True)
    return new.reshape(old.shape)


def m_step(h: HiddenMarkovModel, counts: ExpectedCounts, update_emissions: bool = True) -> HiddenMarkovModel:
    return h.replace(
        initial=_renormalize(counts.initial, h.initial),
        transitions=_renormalize(counts.transitions, h.transitions),
        emissions=_renormalize(counts.emissions, h.emissions) if update_emissions else h.emissions,
    )


def _check_alphabet(h, s):
    if isinstance(s, SequenceSet) and h.alphabet != s.alphabet:
        raise ModelError("model and data alphabets differ")


def em_step(h: HiddenMarkovModel, s: SequenceSet) -> tuple[HiddenMarkovModel, float]:
    """One Baum-Welch update. Returns the new model and the log-likelihood of ``h``."""
    _check_alphabet(h, s)
    counts = expected_counts(h, s)
    return m_step(h, counts), float(np.sum(counts.log_likelihoods))


def relative_change(new: float, old: float) -> float:
    if new == old:
        return 0.0
    return (new - old) / abs(old) if old != 0 else new - old


def em_fit(
    h: HiddenMarkovModel,
    s: SequenceSet,
    max_iterations: int = 1000,
    relative_tolerance: float = 1e-10,
) -> tuple[HiddenMarkovModel, EMResult]:
    """Baum-Welch until the relative log-likelihood change drops below the tolerance."""
    _check_alphabet(h, s)
    trace: list[float] = []
    change = np.nan
    iterations = 0
    current = h
    for iterations in range(1, max_iterations + 1):
        updated, ll = em_step(current, s)
        if not np.isfinite(ll):
            raise EstimationError("non-finite log-likelihood" + (" at start" if iterations == 1 else ""))
        trace.append(ll)
        current = updated
        if len(trace) > 1:
            change = relative_change(trace[-1], trace[-2])
            if abs(change) < relative_tolerance:
                break
    final = hmm_log_likelihood(current, s)
    if trace:
        change = relative_change(final, trace[-1])
    trace.append(final)
    return current, EMResult(final, iterations, float(change), trace)


# log-probabilities this close count as tied, so rounding noise cannot break the tie rule
VITERBI_TIE_TOLERANCE = 1e-12


def _first_max(x: np.ndarray, axis: int) -> np.ndarray:
    """Smallest index attaining the maximum along ``axis``, up to the tie tolerance."""
    mx = np.max(x, axis=axis, keepdims=True)
    return np.argmax(x >= mx - VITERBI_TIE_TOLERANCE * (1.0 + np.abs(mx)), axis=axis)


def viterbi_batch(h: HiddenMarkovModel, data) -> tuple[np.ndarray, np.ndarray]:
    """Most probable hidden paths ``(N, T)`` and their joint log-probabilities.

    Ties go to the smallest state index, both for the final state and for every
    back-pointer; scores within a relative 1e-12 of the maximum count as ties.
    Columns past the end of a sequence repeat its last state.
    """
    cells = _as_cells(data)
    n, t = cells.shape
    log_pi, log_a, log_b = h.log_params()
    e = emission_log_terms(log_b, cells)
    pad = cells == PADDING
    s = h.n_states
    delta = log_pi + e[:, 0]
    back = np.zeros((n, t, s), dtype=np.int64)
    keep = np.broadcast_to(np.arange(s), (n, s))
    with np.errstate(invalid="ignore"):
        for k in range(1, t):
            cand = delta[:, :, None] + log_a[None]
            best = _first_max(cand, axis=1)
            step = np.take_along_axis(cand, best[:, None, :], axis=1)[:, 0] + e[:, k]
            back[:, k] = np.where(pad[:, k, None], keep, best)
            delta = np.where(pad[:, k, None], delta, step)
        paths = np.empty((n, t), dtype=np.int64)
        paths[:, -1] = _first_max(delta, axis=1)
    logp = delta[np.arange(n), paths[:, -1]]
    for k in range(t - 1, 0, -1):
        paths[:, k - 1] = back[np.arange(n), k, paths[:, k]]
    return paths, logp


def viterbi(h: HiddenMarkovModel, s) -> list[HiddenPath]:
    _check_alphabet(h, s)
    cells = _as_cells(s)
    paths, logp = viterbi_batch(h, cells)
    out = []
    for row, path, lp in zip(cells, paths, logp):
        out.append(HiddenPath(path[: _row_length(row)].copy(), float(lp)))
    return out


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draws, one per row of cumulative probabilities."""
    idx = (cum <= u[:, None] * cum[:, -1:]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def simulate_sequences(
    model: MarkovModel | HiddenMarkovModel,
    n_sequences: int,
    length: int,
    rng: np.random.Generator | int | None = None,
    return_states: bool = False,
):
    """Draw complete sequences (no missing cells) from an MM or HMM."""
    rng = np.random.default_rng(rng)
    h = as_hmm(model)
    states = np.empty((n_sequences, length), dtype=np.int64)
    obs = np.empty((n_sequences, length), dtype=np.int64)
    cum_a = np.cumsum(h.transitions, axis=1)
    cum_b = np.cumsum(h.emissions, axis=1)
    u = rng.random((n_sequences, length, 2))
    z = _draw(np.broadcast_to(np.cumsum(h.initial), (n_sequences, h.n_states)), u[:, 0, 0])
    for k in range(length):
        if k > 0:
            z = _draw(cum_a[z], u[:, k, 0])
        states[:, k] = z
        obs[:, k] = _draw(cum_b[z], u[:, k, 1])
    s = SequenceSet(h.alphabet, obs)
    return (s, states) if return_states else s


def format_hmm(h: HiddenMarkovModel) -> str:
    states = list(h.state_labels)
    syms = list(h.alphabet.symbols)
    w = max(11, max(len(x) for x in states + syms) + 2)

    def row(vals):
        return "".join(f"{v:>{w}.4g}" for v in vals)

    lines = ["Initial probabilities :", "".join(f"{x:>{w}}" for x in states), row(h.initial), ""]
    lines.append("Transition probabilities :")
    lines.append(" " * w + "".join(f"{x:>{w}}" for x in states))
    lines += [f"{lab:<{w}}" + row(r) for lab, r in zip(states, h.transitions)]
    lines += ["", "Emission probabilities :", " " * w + "".join(f"{x:>{w}}" for x in syms)]
    lines += [f"{lab:<{w}}" + row(r) for lab, r in zip(states, h.emissions)]
    return "\n".join(lines)
