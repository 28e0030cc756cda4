"""Color constancy by iterative cast feedback."""
from .chroma import (
    Cast,
    DomainError,
    StepSchedule,
    angular_error_deg,
    chromaticity_point,
    geo_mean3,
    normalize,
    rotate_toward,
    step_angle,
)
from .evalharness import run_protocol, summarize
from .estimators import FeedbackColorConstancy, GrayEdge, GrayWorld, ShadesOfGray, WhiteBalancer
from .imaging import LinearImage, SrgbImage, apply_illuminant, to_pseudo_srgb, white_balance
from .oracle import AssessContext, CastOracle, ground_truth_oracle, noisy_oracle, statistical_oracle
from .scene import Scene, SceneMeta, load_scene, read_scene, save_scene
from .solver import SolverConfig, Trajectory, replay, solve
from .synthetic import make_dataset

__version__ = "0.1.0"

__all__ = [
    "AssessContext",
    "Cast",
    "CastOracle",
    "DomainError",
    "FeedbackColorConstancy",
    "GrayEdge",
    "GrayWorld",
    "LinearImage",
    "Scene",
    "SceneMeta",
    "ShadesOfGray",
    "SolverConfig",
    "SrgbImage",
    "StepSchedule",
    "Trajectory",
    "WhiteBalancer",
    "angular_error_deg",
    "apply_illuminant",
    "chromaticity_point",
    "geo_mean3",
    "ground_truth_oracle",
    "load_scene",
    "make_dataset",
    "noisy_oracle",
    "normalize",
    "read_scene",
    "replay",
    "rotate_toward",
    "run_protocol",
    "save_scene",
    "solve",
    "statistical_oracle",
    "step_angle",
    "summarize",
    "to_pseudo_srgb",
    "white_balance",
]
