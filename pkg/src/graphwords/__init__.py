"""Image retrieval with multi-layer local graph words."""

from .cdk import CdkParams, cdk_kernel, graph_dissimilarity
from .delaunay import delaunay_triangulate
from .graphs import GraphFeature, build_graph_layers
from .signature import Signature, l1_distance

__version__ = "0.1.0"

__all__ = [
    "CdkParams", "cdk_kernel", "graph_dissimilarity", "delaunay_triangulate",
    "GraphFeature", "build_graph_layers", "Signature", "l1_distance",
]
