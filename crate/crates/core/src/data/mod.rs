pub mod features;
pub mod io;
pub mod skeleton;
pub mod synthetic;

pub use features::{extract_spd_features, pre_ridge_descriptors, prepare_sample, Centering, SpdSample};
pub use io::{load_skeleton_file, parse_skeletons, save_skeleton_file, SkeletonFile};
pub use skeleton::{downsample, random_rotate, random_scale, rotate, rotation_matrix, scale, FramePick, SkeletonSequence};
pub use synthetic::{class_margins, generate_synthetic, SyntheticConfig};
