"""Importance weights for retrieval corpora via multilinear-extension gradients.

The public surface re-exports the data model, the gradient paths (exact,
truncated, sampled, grouped), the projected-ascent trainer, the refinement
and evaluation protocols, the synthetic benchmark, and the brute-force
oracles. Modules that depend on the JIT engine load lazily so that thread
configuration can happen before the compiler starts.
"""

from .corpus import (
    Candidate,
    CorpusFormatError,
    EvaluationSet,
    UtilityValueSet,
    ValidationInstance,
    derive_utilities,
    ensure_utilities,
    expand_source_weights,
    load_evaluation_set,
    load_source_weights,
    rank_candidates,
    save_evaluation_set,
    save_source_weights,
    utility_value_set,
)
from .grouped_exact import GroupedSizeError, grouped_instance_gradients
from .oracle import (
    OracleLimits,
    brute_gradient,
    brute_grouped_gradient,
    brute_multilinear,
    brute_utility,
)
from .pb_tables import BvpTable, SubsetProbTables, build_bvp, build_subset_prob
from .refine_eval import (
    AccuracyReport,
    RefineOutcome,
    RefinePlan,
    add_fabricated_source,
    apply_refinement,
    evaluate,
    inject_noise,
    loo_scores,
    majority_vote_predict,
    prune,
    remove_sources,
    reweight_expected_accuracy,
    split_set,
    synth_qa_set,
    tune_loo_threshold,
    tune_threshold,
)

_LAZY = {
    "GradientVector": ("exact_grad", "GradientVector"),
    "AdditiveUtilityParams": ("exact_grad", "AdditiveUtilityParams"),
    "instance_gradients": ("exact_grad", "instance_gradients"),
    "gradient": ("exact_grad", "gradient"),
    "BoundaryIndex": ("approx", "BoundaryIndex"),
    "find_boundary": ("approx", "find_boundary"),
    "approx_instance_gradients": ("approx", "approx_instance_gradients"),
    "approx_gradient": ("approx", "approx_gradient"),
    "McmcConfig": ("mcmc_grad", "McmcConfig"),
    "mcmc_gradient": ("mcmc_grad", "mcmc_gradient"),
    "additive_topk_utility": ("mcmc_grad", "additive_topk_utility"),
    "majority_vote_utility": ("mcmc_grad", "majority_vote_utility"),
    "TrainConfig": ("trainer", "TrainConfig"),
    "SourceWeights": ("trainer", "SourceWeights"),
    "FitResult": ("trainer", "FitResult"),
    "fit": ("trainer", "fit"),
    "BenchConfig": ("bench", "BenchConfig"),
    "BenchReport": ("bench", "BenchReport"),
    "synth_corpus": ("bench", "synth_corpus"),
    "run_benchmark": ("bench", "run_benchmark"),
}

__all__ = sorted(
    [
        "Candidate",
        "CorpusFormatError",
        "EvaluationSet",
        "UtilityValueSet",
        "ValidationInstance",
        "derive_utilities",
        "ensure_utilities",
        "expand_source_weights",
        "load_evaluation_set",
        "load_source_weights",
        "rank_candidates",
        "save_evaluation_set",
        "save_source_weights",
        "utility_value_set",
        "GroupedSizeError",
        "grouped_instance_gradients",
        "OracleLimits",
        "brute_gradient",
        "brute_grouped_gradient",
        "brute_multilinear",
        "brute_utility",
        "BvpTable",
        "SubsetProbTables",
        "build_bvp",
        "build_subset_prob",
        "AccuracyReport",
        "RefineOutcome",
        "RefinePlan",
        "add_fabricated_source",
        "apply_refinement",
        "evaluate",
        "inject_noise",
        "loo_scores",
        "majority_vote_predict",
        "prune",
        "remove_sources",
        "reweight_expected_accuracy",
        "split_set",
        "synth_qa_set",
        "tune_loo_threshold",
        "tune_threshold",
        *_LAZY,
    ]
)


def __getattr__(name):
    try:
        module_name, attr = _LAZY[name]
    except KeyError:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}") from None
    import importlib

    module = importlib.import_module(f".{module_name}", __name__)
    value = getattr(module, attr)
    globals()[name] = value
    return value
