"""Piecewise-constant image segmentation by AIC, BIC and MDL with greedy region merging."""
from .core import (
    CriterionKind,
    DimensionMismatch,
    GroundTruthImage,
    ObservedImage,
    RegionLedger,
    Segmentation,
    SegmentationError,
    build_ledger,
    canonicalize,
)
from .criteria import CriterionScore, merge_delta, region_means, score
from .merge import MergeConfig, MergeTrace, initial_segmentation, segment, segment_best_of, segment_criteria
from .metrics import EvalReport, evaluate, mse, symdiff_distance, tabulate_mhat
from .oracle import OracleResult, brute_force_segment, enumerate_partitions
from .synth import NoiseSpec, TestImageSpec, add_noise, generate

__version__ = "0.1.0"

__all__ = [
    "CriterionKind", "DimensionMismatch", "GroundTruthImage", "ObservedImage", "RegionLedger", "Segmentation",
    "SegmentationError", "build_ledger", "canonicalize", "CriterionScore", "merge_delta", "region_means", "score",
    "MergeConfig", "MergeTrace", "initial_segmentation", "segment", "segment_best_of", "segment_criteria",
    "EvalReport", "evaluate", "mse", "symdiff_distance", "tabulate_mhat", "OracleResult", "brute_force_segment",
    "enumerate_partitions", "NoiseSpec", "TestImageSpec", "add_noise", "generate",
]
