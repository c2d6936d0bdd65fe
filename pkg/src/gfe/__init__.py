"""Group-fairness-in-expectation constraints for regression trees, tree
ensembles and kernel regression."""

from .constraint import ConstrainedTree, constrain, constrain_compressed, constrain_explicit, constrain_on_groups
from .data import Dataset, GroupQuery, load_csv, synth_beta_demo
from .ensemble import FairBoost, FairForest, fit_fair_boost, fit_fair_forest
from .tree import RegressionTree, grow

__version__ = "0.1.0"

__all__ = [
    "ConstrainedTree",
    "Dataset",
    "FairBoost",
    "FairForest",
    "GroupQuery",
    "RegressionTree",
    "constrain",
    "constrain_compressed",
    "constrain_explicit",
    "constrain_on_groups",
    "fit_fair_boost",
    "fit_fair_forest",
    "grow",
    "load_csv",
    "synth_beta_demo",
]
