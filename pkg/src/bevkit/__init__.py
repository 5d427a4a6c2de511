"""bevkit: BEV encoding, 3D anchors, oriented-box codecs, overlap geometry,
and KITTI-style evaluation for LIDAR object detection pipelines."""

from .anchor_grid import (
    Anchor3D,
    AnchorLabel,
    LabelKind,
    Roi,
    apply_axis_aligned_offsets,
    assign_anchor_labels,
    cluster_dimensions,
    compute_axis_aligned_offsets,
    filter_empty_anchors,
    generate_anchor_grid,
    project_anchor_to_bev,
    project_anchor_to_image,
)
from .bev import (
    BevMap,
    OccupancyIntegral,
    area_sum,
    build_bev_map,
    build_occupancy_integral,
    density_value,
    grid_shape,
)
from .box_codec import (
    FourCornerBox,
    OrientedBox3D,
    corners_3d,
    corners_bev,
    decode_eight_corner,
    decode_four_corner,
    encode_eight_corner,
    encode_four_corner,
    fit_oriented_box,
    orientation_to_vector,
    resolve_orientation,
    vector_to_angle,
    wrap_angle,
)
from .errors import (
    BevkitError,
    DegenerateGeometryError,
    DegenerateOrientationError,
    MalformedInputError,
    ParameterError,
)
from .geom import (
    crop_and_resize,
    fuse_mean,
    iou_3d,
    iou_axis_aligned,
    iou_rotated_bev,
    nms,
)
from .kitti_io import (
    CalibrationSet,
    GroundPlane,
    LabeledObject,
    PointCloud,
    default_ground_plane,
    filter_fov,
    flat_lidar_plane,
    load_calibration,
    load_labels,
    load_plane,
    load_point_cloud,
    project_to_image,
    transform_plane,
)
from .metrics import (
    Detection,
    Difficulty,
    DifficultyTable,
    PrCurve,
    average_heading_similarity,
    average_precision,
    difficulty_of,
    evaluate_class,
    match_detections,
    pr_curve,
    recall_curve,
)
from .net_shapes import (
    LayerSpec,
    NetworkConfig,
    count_flops,
    count_parameters,
    cross_entropy,
    decoder_fuse_forward,
    default_network_config,
    memory_estimate,
    propagate_shapes,
    rpn_head_forward,
    second_stage_head_forward,
    smooth_l1,
)

__version__ = "0.1.0"
