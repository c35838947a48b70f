//! Cameras, rigid transforms, point sampling and axis-aligned box arithmetic.

mod boxes;
mod camera;
mod cloud;

pub use boxes::{box_iou_3d, boxes_in_view, nms_3d, Box3D, DEFAULT_NMS_IOU};
pub use camera::{unproject_depth, CameraIntrinsics, DepthMap, Pose, POSE_TOLERANCE};
pub use cloud::{
    ball_query, dist2, farthest_point_sample, fuse_views, lex_cmp, transform_points, PointCloud, SENTINEL,
};
pub(crate) use cloud::{ball_query_coords, bounds_of, farthest_point_sample_coords};
