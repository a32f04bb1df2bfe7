//! Pose representation, rotation algebra, forward kinematics and kinetic
//! features.

pub mod container;
pub mod kinematics;
pub mod rotation;
pub mod sequence;
pub mod skeleton;
pub mod tensor_fk;

/// Joints in the SMPL-convention skeleton.
pub const NUM_JOINTS: usize = 24;
/// Flattened pose width: root translation plus one 6D block per joint.
pub const POSE_DIM: usize = 3 + 6 * NUM_JOINTS;

pub use kinematics::{detect_foot_contacts, forward_kinematics, kinetic_features, JointPositions};
pub use rotation::{matrix_to_rot6d, quaternion_slerp, rot6d_to_matrix, Rot6d};
pub use sequence::{GroupSequence, MotionSequence, Pose, DEFAULT_FPS};
pub use skeleton::Skeleton;
