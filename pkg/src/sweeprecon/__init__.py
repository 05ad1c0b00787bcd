"""Multi-sweep implicit vehicle reconstruction: SDF auto-decoder, virtual
LiDAR simulation, per-sweep latent inference, element-to-set aggregation,
mesh extraction, and evaluation."""

__version__ = "0.1.0"

from .config import ExperimentConfig, desk_profile, load_config, paper_profile
from .geometry import PointCloud, Transform, fps, normalize_to_unit_cube
from .mesh import SdfGrid, TriangleMesh, marching_cubes, mesh_sdf, sample_surface

__all__ = [
    "ExperimentConfig", "desk_profile", "paper_profile", "load_config",
    "PointCloud", "Transform", "fps", "normalize_to_unit_cube",
    "TriangleMesh", "SdfGrid", "marching_cubes", "mesh_sdf", "sample_surface",
]
