"""Perspective texture synthesis by robust, tree-accelerated energy optimization."""
from .ann_index import KmTree, NeighborhoodIndex, PcaModel, QueryBudget, fit_pca
from .image_core import RasterImage, RgbsImage, load_image, save_image
from .neighborhood import GridSpec, PatchSpec
from .optimizer import OptimizerConfig
from .pipeline import SynthesisReport, SynthesisRequest, compare_modes, synthesize
from .scale_map import ScaleMap, ViewAngles, compute_scale_map

__version__ = "0.1.0"
