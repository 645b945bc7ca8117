"""Agentic generation of simulation-ready indoor scenes, scene augmentation and robot demonstration synthesis."""

from .actions import generate_episodes, synthesize_mobile_manip, synthesize_pick_place
from .augmentation import augment
from .orchestrator import Budget, run_generation
from .physics import metrics_report
from .scene import Scene, validate_scene
from .scene_io import load, save

__version__ = "0.1.0"

__all__ = [
    "Budget",
    "Scene",
    "augment",
    "generate_episodes",
    "load",
    "metrics_report",
    "run_generation",
    "save",
    "synthesize_mobile_manip",
    "synthesize_pick_place",
    "validate_scene",
]
