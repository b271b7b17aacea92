"""Train small interpretable classifiers on samples guided by an oracle's uncertainty."""

from .dataset import Dataset, Multiset, SplitSpec, load_dataset, stratified_split
from .ibmm import IbmmParams, ibmm_sample
from .metrics import compaction, delta_f1, f1_macro, pct_better, sdi
from .models import CARTClassifier, LinearProbabilityClassifier
from .optimizer import TPESampler, default_search_space
from .oracle import PlattCalibratedOracle, PrecomputedOracle, RandomForestOracle
from .pipeline import OracleGuidedClassifier, RunConfig, run_oracle_pipeline, size_sweep
from .uncertainty import UncertaintyFlattener, flatten, margin_uncertainty, unflatten

__version__ = "0.1.0"

__all__ = [
    "CARTClassifier", "Dataset", "IbmmParams", "LinearProbabilityClassifier", "Multiset",
    "OracleGuidedClassifier", "PlattCalibratedOracle", "PrecomputedOracle", "RandomForestOracle",
    "RunConfig", "SplitSpec", "TPESampler", "UncertaintyFlattener", "compaction",
    "default_search_space", "delta_f1", "f1_macro", "flatten", "ibmm_sample", "load_dataset",
    "margin_uncertainty", "pct_better", "run_oracle_pipeline", "sdi", "size_sweep",
    "stratified_split", "unflatten",
]
