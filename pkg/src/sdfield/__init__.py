"""sdfield: desk-scale single-view implicit-surface reconstruction.

The toolkit covers the full pipeline: signed-distance grids from meshes,
continuous 6D camera poses and direct pose fitting, projective multi-scale
local features from a small convolutional encoder, a trainable SDF regressor
with two-stream/one-stream/binary decoders, marching-cubes extraction, and
the Chamfer/EMD/IoU evaluation suite.
"""

__version__ = "0.1.0"

from .camera import (
    CameraPose,
    Intrinsics,
    PoseFitSettings,
    Rotation6D,
    camera_loss,
    camera_loss_and_gradients,
    fit_pose,
    load_pose,
    look_at_pose,
    pose_from_6d,
    pose_metrics,
    project_point,
    project_world_point,
    rotation_from_6d,
    save_pose,
    six_d_from_rotation,
    transform_world_to_camera,
)
from .distance import (
    MeshSdf,
    closest_point_on_triangle,
    point_triangle_distance,
    signed_distance,
)
from .encoder import (
    EncoderParams,
    FeatureMapStack,
    bilinear_sample,
    encode_image,
    init_encoder_params,
    interpolate_features,
    local_features,
    pool_multiview,
)
from .errors import SdfieldError
from .extract import IsoSurfaceConfig, evaluate_field, marching_cubes, reconstruct
from .grid import (
    PointSample,
    SdfGrid,
    build_sdf_grid,
    load_point_samples,
    load_sdf_grid,
    sample_training_points,
    samples_to_arrays,
    save_point_samples,
    save_sdf_grid,
)
from .image import Image, load_pgm, normalize_depth, save_pgm
from .mesh import (
    NormalizationRecord,
    TriangleMesh,
    load_mesh,
    load_obj,
    load_ply,
    normalize_mesh,
    save_obj,
)
from .metrics import (
    MetricReport,
    chamfer,
    emd,
    emd_greedy,
    evaluate_meshes,
    sample_surface_points,
    voxel_iou,
)
from .regressor import (
    LossParams,
    MlpParams,
    SdfModel,
    TrainConfig,
    TrainingBatch,
    TrainingSet,
    TrainingView,
    backward,
    batch_sdf_loss,
    binary_loss,
    build_sdf_model,
    forward_batch,
    load_loss_log,
    load_model,
    predict_inside_prob,
    predict_sdf,
    predict_sdf_one_stream,
    save_loss_log,
    save_model,
    sdf_loss,
    train,
)
from .render import render_depth_image
from .shapes import box_mesh, bumpy_torus_mesh, icosphere, torus_mesh
