"""Boundary-adaptive image downsampling.

Dense label boundaries attract a low-resolution grid of sampling locations
(the sampling tensor); images sampled there keep detail where classes meet,
and sparse classifications interpolate back to full resolution through the
grid's triangles. The package covers the energy solver, resampling,
rasterized upsampling, evaluation metrics, and the approximation-rate
experiments, plus a CLI tying them together.
"""

from .boundary import (BoundaryMap, NearestBoundaryField, boundary_pixel_coords,
                       extract_boundary, nearest_boundary_field)
from .core import (ImageBuffer, LabelMap, PixelGrid, ScoreMap, TargetClassSet,
                   coord_of, nearest_pixel, nearest_pixel_indices)
from .curves import (CurveSpec, PolyChain, approx_error, approximate_curve,
                     bound_experiment, circle_curve, ellipse_curve, line_curve,
                     uniform_grid_boundary_error)
from .io import (read_image_png, read_label_png, read_tensor, write_image_png,
                 write_label_png, write_tensor)
from .metrics import (IoUReport, ObjectRecallReport, TrimapCurve, confusion_matrix,
                      iou, object_recall, pixel_accuracy, trimap_accuracy)
from .pipeline import (DatasetManifest, PipelineConfig, RunReport, load_manifest,
                       oracle_classify, process_image_pair, run_pipeline, save_manifest)
from .resample import SampledImage, resize_tensor, sample_image, sample_labels
from .scenes import SceneSpec, disk_label_map, generate_scene
from .solver import (EnergyParams, SamplingTensor, SolverConvergenceError, energy,
                     project_constraints, solve_sampling_tensor, uniform_tensor)
from .upsample import (RasterCoverage, build_coverage, triangle_vertex_indices,
                       upsample_labels, upsample_scores)

__version__ = "0.1.0"

__all__ = [
    "BoundaryMap", "CurveSpec", "DatasetManifest", "EnergyParams", "ImageBuffer",
    "IoUReport", "LabelMap", "NearestBoundaryField", "ObjectRecallReport",
    "PipelineConfig", "PixelGrid", "PolyChain", "RasterCoverage", "RunReport",
    "SampledImage", "SamplingTensor", "SceneSpec", "ScoreMap",
    "SolverConvergenceError", "TargetClassSet", "TrimapCurve",
    "approx_error", "approximate_curve", "bound_experiment",
    "boundary_pixel_coords", "build_coverage", "circle_curve", "confusion_matrix",
    "coord_of", "disk_label_map", "ellipse_curve", "energy", "extract_boundary",
    "generate_scene", "iou", "line_curve", "load_manifest", "nearest_boundary_field",
    "nearest_pixel", "nearest_pixel_indices", "object_recall", "oracle_classify",
    "pixel_accuracy", "process_image_pair", "project_constraints", "read_image_png",
    "read_label_png", "read_tensor", "resize_tensor", "run_pipeline", "sample_image",
    "sample_labels", "save_manifest", "solve_sampling_tensor", "trimap_accuracy",
    "triangle_vertex_indices", "uniform_grid_boundary_error", "uniform_tensor",
    "upsample_labels", "upsample_scores", "write_image_png", "write_label_png",
    "write_tensor",
]
