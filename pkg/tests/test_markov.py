from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exact_transition_estimate

from markovseq.errors import DataError, ModelError
from markovseq.hmm import as_hmm, hmm_log_likelihood
from markovseq.markov import MarkovModel, estimate_mm, mm_log_likelihood, seqtrate, transition_counts
from markovseq.seqdata import Alphabet, SequenceSet


def toy_set(rows):
    return SequenceSet.from_rows(rows, alphabet=["L", "H"])


def test_toy_counts_and_estimates(toy_lh_rows):
    s = toy_set(toy_lh_rows)
    assert transition_counts(s).tolist() == [[8, 12], [10, 6]]
    mm = estimate_mm(s)
    assert mm.transitions.tolist() == [[0.4, 0.6], [0.625, 0.375]]
    assert mm.initial.tolist() == [0.5, 0.5]
    assert mm.warnings == ()


def test_single_sequence_counts():
    s = SequenceSet.from_rows([list("LLH")], alphabet=["L", "H"])
    assert transition_counts(s).tolist() == [[1, 1], [0, 0]]
    mm = estimate_mm(s)
    assert mm.transitions.tolist() == [[0.5, 0.5], [0.5, 0.5]]
    assert any("'H'" in w for w in mm.warnings)


def test_unknown_breaks_pairs():
    s = SequenceSet.from_rows([["L", "", "H", "H"]], alphabet=["L", "H"])
    assert transition_counts(s).tolist() == [[0, 0], [0, 1]]


def test_all_missing_raises():
    s = SequenceSet.from_rows([["", ""]], alphabet=["L", "H"])
    with pytest.raises(DataError):
        estimate_mm(s)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.integers(-1, 2), min_size=2, max_size=8), min_size=1, max_size=6))
def test_estimate_matches_exact_fractions(rows):
    if not any(x >= 0 for r in rows for x in r):
        return
    width = max(len(r) for r in rows)
    cells = np.array([r + [-2] * (width - len(r)) for r in rows])
    s = SequenceSet(Alphabet(("a", "b", "c")), cells)
    mm = estimate_mm(s)
    exact = exact_transition_estimate(rows, 3)
    for r, row in enumerate(exact):
        if row[0] is None:
            assert np.allclose(mm.transitions[r], 1 / 3)
        else:
            assert all(Fraction(mm.transitions[r, c]).limit_denominator(10**6) == row[c] for c in range(3))
    assert np.allclose(mm.transitions.sum(axis=1), 1)
    assert seqtrate(s).tolist() == mm.transitions.tolist()


def test_log_likelihood_by_hand(toy_lh_rows):
    s = toy_set(toy_lh_rows)
    mm = estimate_mm(s)
    by_hand = 4 * np.log(0.5) + 8 * np.log(0.4) + 12 * np.log(0.6) + 10 * np.log(0.625) + 6 * np.log(0.375)
    assert mm_log_likelihood(mm, s) == pytest.approx(by_hand, abs=1e-12)
    # an MM is an HMM with identity emissions
    assert hmm_log_likelihood(as_hmm(mm), s) == pytest.approx(by_hand, abs=1e-10)


def test_impossible_transition_gives_minus_inf():
    a = Alphabet(("L", "H"))
    mm = MarkovModel(a, [1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    s = SequenceSet.from_rows([["L", "H"]], alphabet=a)
    assert mm_log_likelihood(mm, s) == -np.inf


def test_validation():
    a = Alphabet(("L", "H"))
    with pytest.raises(ModelError):
        MarkovModel(a, [0.5, 0.6], [[1, 0], [0, 1]])
    with pytest.raises(ModelError):
        MarkovModel(a, [0.5, 0.5], [[1.0, 0.0]])
    with pytest.raises(ModelError):
        MarkovModel(a, [1.5, -0.5], [[1, 0], [0, 1]])


def test_serialization_and_printing(toy_lh_rows):
    mm = estimate_mm(toy_set(toy_lh_rows))
    back = MarkovModel.from_dict(mm.to_dict())
    assert np.array_equal(back.transitions, mm.transitions)
    text = str(mm)
    assert "Initial probabilities :" in text and "Transition probabilities :" in text
    assert "0.625" in text
