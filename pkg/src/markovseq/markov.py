"""First-order, time-homogeneous Markov models estimated by transition counting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ModelError
from .seqdata import Alphabet, SequenceSet, first_state_counts

STOCHASTIC_ATOL = 1e-9


def check_stochastic(x: np.ndarray, what: str) -> np.ndarray:
    """Validate a probability vector (1-d) or row-stochastic matrix (2-d)."""
    x = np.array(x, dtype=float)
    if not np.all(np.isfinite(x)) or (x < 0).any():
        raise ModelError(f"{what} must be finite and non-negative")
    sums = x.sum(axis=-1)
    if not np.allclose(sums, 1.0, rtol=0, atol=STOCHASTIC_ATOL):
        raise ModelError(f"{what} rows must sum to 1 (got {np.round(sums, 12)})")
    return x


def _readonly(x: np.ndarray) -> np.ndarray:
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class MarkovModel:
    """Initial probabilities and a single transition matrix over the alphabet.

    ``warnings`` records rows that had no data behind them and fell back to
    uniform probabilities.
    """

    alphabet: Alphabet
    initial: np.ndarray
    transitions: np.ndarray
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        m = len(self.alphabet)
        initial = check_stochastic(self.initial, "initial probabilities")
        transitions = check_stochastic(self.transitions, "transition probabilities")
        if initial.shape != (m,) or transitions.shape != (m, m):
            raise ModelError(
                f"dimension mismatch: alphabet {m}, initial {initial.shape}, transitions {transitions.shape}"
            )
        object.__setattr__(self, "initial", _readonly(initial))
        object.__setattr__(self, "transitions", _readonly(transitions))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def n_states(self) -> int:
        return len(self.alphabet)

    @property
    def state_labels(self) -> tuple[str, ...]:
        return self.alphabet.symbols

    def to_dict(self) -> dict:
        return {
            "type": "mm",
            "alphabet": self.alphabet.to_dict(),
            "initial": self.initial.tolist(),
            "transitions": self.transitions.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "MarkovModel":
        return cls(Alphabet.from_dict(d["alphabet"]), np.array(d["initial"]), np.array(d["transitions"]))

    def __str__(self) -> str:
        return format_markov_model(self)


def transition_counts(s: SequenceSet) -> np.ndarray:
    """Integer M x M matrix of r -> s counts over consecutive observed cells.

    Pairs touching an unknown or padding cell are skipped.
    """
    m = len(s.alphabet)
    origin = s.cells[:, :-1].ravel()
    dest = s.cells[:, 1:].ravel()
    keep = (origin >= 0) & (dest >= 0)
    flat = origin[keep].astype(np.int64) * m + dest[keep]
    return np.bincount(flat, minlength=m * m).reshape(m, m).astype(np.int64)


def _normalize_counts(counts: np.ndarray, labels, what: str) -> tuple[np.ndarray, list[str]]:
    counts = np.atleast_2d(counts)
    totals = counts.sum(axis=1)
    probs = np.empty(counts.shape, dtype=float)
    notes = []
    for r, total in enumerate(totals):
        if total == 0:
            probs[r] = 1.0 / counts.shape[1]
            notes.append(f"{what} {labels[r]!r} has no observations; uniform fallback used")
        else:
            probs[r] = counts[r] / total
    return probs, notes


def estimate_mm(s: SequenceSet) -> MarkovModel:
    """Maximum-likelihood MM: first-state proportions and row-normalized transition counts."""
    if not (s.cells >= 0).any():
        raise DataError("all cells are missing")
    labels = s.alphabet.symbols
    trans, notes = _normalize_counts(transition_counts(s), labels, "transition row for")
    first = first_state_counts(s)
    init, init_notes = _normalize_counts(first[None, :], ["first state"], "initial distribution:")
    if init_notes:
        notes = ["no observed first states; initial probabilities set uniform"] + notes
    return MarkovModel(s.alphabet, init[0], trans, tuple(notes))


def seqtrate(s: SequenceSet) -> np.ndarray:
    """Pooled empirical transition-rate matrix (same counting as :func:`estimate_mm`)."""
    return estimate_mm(s).transitions.copy()


def mm_log_likelihood(model: MarkovModel, s: SequenceSet) -> float:
    """Log-likelihood of the observed cells under an MM.

    The first cell contributes its initial probability when observed; every
    pair of consecutive observed cells contributes a transition probability.
    Impossible events give ``-inf``.
    """
    if model.alphabet != s.alphabet:
        raise ModelError("model and data alphabets differ")
    counts = transition_counts(s)
    first = first_state_counts(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_a = np.log(model.transitions)
        log_pi = np.log(model.initial)
        # 0 * log 0 terms must not contribute
        total = np.sum(np.where(counts > 0, counts * log_a, 0.0)) + np.sum(np.where(first > 0, first * log_pi, 0.0))
    return float(total)


def _fmt_row(values, width=9) -> str:
    return "".join(f"{v:>{width}.4g}" for v in values)


def format_markov_model(model: MarkovModel) -> str:
    labels = list(model.alphabet.symbols)
    w = max(11, max(len(x) for x in labels) + 2)
    lines = ["Initial probabilities :", "".join(f"{x:>{w}}" for x in labels), _fmt_row(model.initial, w), ""]
    lines.append("Transition probabilities :")
    lines.append(" " * w + "".join(f"{x:>{w}}" for x in labels))
    for lab, row in zip(labels, model.transitions):
        lines.append(f"{lab:<{w}}" + _fmt_row(row, w))
    return "\n".join(lines)
