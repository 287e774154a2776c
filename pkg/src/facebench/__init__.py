"""Benchmark toolkit for estimating 3D face reconstruction error against scans."""
from .errors import ConfigError, DataError, FacebenchError, MeshFormatError, NumericalError, StageError
from .mesh import LandmarkSet, Mesh, PerVertexError, load_landmarks, load_mesh, save_error_mesh, save_mesh

__version__ = "0.1.0"
