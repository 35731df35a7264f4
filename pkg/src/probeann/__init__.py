"""Filtered approximate nearest-neighbour search with learned early termination."""

__version__ = "0.1.0"

from .dataset import (AttrKind, Attribute, AttributedDataset, FilterConstraint, FilteredQuery,
                      PredicateKind, brute_force_filtered_knn, distance, evaluate_predicate,
                      global_selectivity, local_correlation)
from .errors import (ContractViolation, InputMismatchError, ModelFormatError, PredicateKindError,
                     SchemaMismatchError, SelectivityError)
from .evaluate import misalignment_report, recall_at_k, regression_report, sweep
from .features import FeatureSchema, RuntimeFeatures, extract_features
from .gbdt import BoostedTreesModel, HyperParams, TrainingSet, train
from .graph import ProximityGraph, SearchBudget, beam_search_unfiltered, build_graph, greedy_route
from .search import (FixedBeam, FixedBudget, Mode, Predicted, SearchOutcome, SearchState,
                     filtered_search, post_filter_search, pre_filter_search, run_to_full_recall)
from .training import GroundTruth, generate_ground_truth, harvest
from .workload import FilterSpec, Scheme, gen_attributes, gen_queries, gen_vectors, make_workload
