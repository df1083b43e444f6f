import math

import numpy as np
import pytest

from markovseq.errors import DataError
from markovseq.hmm import HiddenMarkovModel
from markovseq.markov import MarkovModel, estimate_mm
from markovseq.mixture import DesignSpec, MixtureModel
from markovseq.modelselect import ModelScore, bic, comparison_table, count_free_parameters, n_observations
from markovseq.seqdata import Alphabet, CovariateFrame, SequenceSet

ABC = Alphabet(("a", "b", "c"))


def test_formula():
    assert ModelScore.from_values(-10, 3, 100).bic == pytest.approx(20 + 3 * math.log(100))
    assert ModelScore.from_values(-10, 3, 100).bic == pytest.approx(33.8155, abs=1e-4)
    with pytest.raises(DataError):
        ModelScore.from_values(-1, 1, 0)


def test_free_parameters_skip_structural_zeros():
    h = HiddenMarkovModel(
        ABC,
        [1.0, 0.0, 0.0],
        [[0.8, 0.2, 0.0], [0.0, 0.8, 0.2], [0.0, 0.0, 1.0]],
        np.full((3, 3), 1 / 3),
    )
    # initial 0, transitions 1 + 1 + 0, emissions 3 * 2
    assert count_free_parameters(h) == 8
    full = HiddenMarkovModel(ABC, np.full(3, 1 / 3), np.full((3, 3), 1 / 3), np.full((3, 3), 1 / 3))
    assert count_free_parameters(full) == 2 + 6 + 6


def test_roles_hmm_parameter_counts():
    # 2, 3 and 4 hidden states over 3 symbols: 7, 14 and 23 free parameters
    for n, p in ((2, 7), (3, 14), (4, 23)):
        h = HiddenMarkovModel(ABC, np.full(n, 1 / n), np.full((n, n), 1 / n), np.full((n, 3), 1 / 3))
        assert count_free_parameters(h) == p
    # BIC 7208.427 at logLik -3546.155 on 200 x 20 complete cells
    assert ModelScore.from_values(-3546.155, 14, 4000).bic == pytest.approx(7208.427, abs=0.01)


def test_mixture_parameters_include_coefficients():
    mm = MarkovModel(ABC, np.full(3, 1 / 3), np.full((3, 3), 1 / 3))
    design = DesignSpec(("GPA",), False, {"GPA": ("Low", "Middle", "High")})
    m = MixtureModel.with_zero_coefficients([mm, mm, mm], design)
    assert count_free_parameters(m) == 3 * (2 + 6) + 3 * 2


def test_observations_count_symbols_only():
    s = SequenceSet.from_rows([["a", "", "b", ""], ["c", "c", "", ""]], alphabet=ABC)
    assert n_observations(s) == 4


def test_bic_dispatch_and_table():
    s = SequenceSet.from_rows([list("abcabc"), list("aabbcc")], alphabet=ABC)
    mm = estimate_mm(s)
    score = bic(mm, s)
    assert score.n_observations == 12
    assert score.free_parameters == count_free_parameters(mm)
    cov = CovariateFrame.from_values(s.ids, {"g": ["x", "y"]})
    mix = MixtureModel.with_zero_coefficients([mm, mm], DesignSpec(("g",), True, {"g": ("x", "y")}))
    mix_score = bic(mix, s, cov)
    assert mix_score.log_likelihood == pytest.approx(score.log_likelihood)
    assert mix_score.bic > score.bic
    table = comparison_table({"mixture": mix_score, "mm": score})
    lines = table.splitlines()
    assert lines[0].split() == ["model", "logLik", "df", "n", "BIC"]
    assert lines[1].startswith("mm")
