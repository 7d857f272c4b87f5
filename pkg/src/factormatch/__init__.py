"""Translation-equivariant multiscale matchings of random two-colourings of
the discrete torus."""

from .centers import CenterSet, bulb_centers, giant_mask, hash_centers, window_center
from .config import RunConfig
from .estimators import GreedyMultiscaleMatcher, PartitionHierarchy, StagedFlowMatcher
from .flow import FlowNetwork, brute_min_cut, decompose_paths, max_flow
from .harness import TailHistogram, equivariance_suite, estimate_tail, lemma_suite, nearest_opposite_tail
from .lattice import Configuration, SiteSet, Torus, ball, balanced_seeds, connected_components, generate, inner_boundary
from .matcher3d import SurplusFn, check_schedule, classify, run3d
from .matching import Matching, greedy_stage, run2d
from .partitions import Partition, PartitionChain, Schedule, build_chain, is_pseudocube, voronoi
from .render import render_svg

__version__ = "0.1.0"

__all__ = [
    "CenterSet",
    "bulb_centers",
    "giant_mask",
    "hash_centers",
    "window_center",
    "RunConfig",
    "GreedyMultiscaleMatcher",
    "PartitionHierarchy",
    "StagedFlowMatcher",
    "FlowNetwork",
    "brute_min_cut",
    "decompose_paths",
    "max_flow",
    "TailHistogram",
    "equivariance_suite",
    "estimate_tail",
    "lemma_suite",
    "nearest_opposite_tail",
    "Configuration",
    "SiteSet",
    "Torus",
    "ball",
    "balanced_seeds",
    "connected_components",
    "generate",
    "inner_boundary",
    "SurplusFn",
    "check_schedule",
    "classify",
    "run3d",
    "Matching",
    "greedy_stage",
    "run2d",
    "Partition",
    "PartitionChain",
    "Schedule",
    "build_chain",
    "is_pseudocube",
    "voronoi",
    "render_svg",
]
