"""Markov, hidden Markov and mixture models for categorical sequences."""

__version__ = "0.1.0"

from .errors import (
    DataError,
    EstimationError,
    MarkovSeqError,
    ModelError,
    SingularHessianError,
    ThresholdError,
)
from .estimation import (
    FitReport,
    GlobalControl,
    RestartControl,
    direct_ml_fit,
    fit_with_restarts,
    randomize_model,
    simulate_emission_probs,
    simulate_initial_probs,
    simulate_transition_probs,
)
from .hmm import (
    EMResult,
    HiddenMarkovModel,
    HiddenPath,
    em_fit,
    forward_backward,
    hmm_log_likelihood,
    posterior_states,
    simulate_sequences,
    viterbi,
)
from .io import read_model, write_json
from .markov import MarkovModel, estimate_mm, mm_log_likelihood, seqtrate, transition_counts
from .mixture import (
    DesignSpec,
    MixtureModel,
    MixtureSummary,
    cluster_priors,
    em_fit_mixture,
    mixture_hidden_paths,
    mixture_log_likelihood,
    posterior_memberships,
    summarize,
)
from .modelselect import ModelScore, bic, comparison_table, count_free_parameters
from .procmine import (
    DiffGraph,
    ProcessGraph,
    build_process_graph,
    cluster_process_maps,
    diff_graph,
    group_models,
    model_process_graph,
)
from .seqdata import (
    PADDING,
    UNKNOWN,
    Alphabet,
    CovariateFrame,
    Factor,
    SequenceSet,
    first_state_distribution,
    ingest_covariates,
    ingest_wide_csv,
    sequence_lengths,
)
