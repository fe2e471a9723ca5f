"""Neural networks with local converging inputs on unstructured channel meshes.

The pipeline runs mesh -> solve -> dataset -> train -> evaluate. Each stage
lives in its own module, and :mod:`nnlci.cli` wires them to a command line.
"""
from .geometry import CaseSpec, WallProfile, wall_height
from .mesh import Mesh, build_levels, generate_channel_mesh, refine_uniform
from .euler import EulerSolver, SolverConfig, solve_steady
from .network import MlpModel, TrainConfig, train

__all__ = [
    "CaseSpec", "WallProfile", "wall_height",
    "Mesh", "build_levels", "generate_channel_mesh", "refine_uniform",
    "EulerSolver", "SolverConfig", "solve_steady",
    "MlpModel", "TrainConfig", "train",
]
__version__ = "0.1.0"
