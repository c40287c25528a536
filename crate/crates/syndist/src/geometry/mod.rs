//! Camera models, rigid transforms, and metric scale recovery.

mod camera;
mod pose;

pub use camera::{Camera, CameraConfig, CameraKind, Projection};
pub use pose::{se3_exp, Pose};

use crate::{Error, Result};

/// Minimum estimated translation accepted by [`recover_scale`].
pub const SCALE_TOLERANCE: f64 = 1e-8;

/// Metric scale factor from vehicle odometry.
///
/// Multiplying a distance map and the pose translation by the returned factor
/// turns scale-ambiguous estimates into metric ones.
pub fn recover_scale(odometry_translation: f64, estimated_translation: f64) -> Result<f64> {
    if !odometry_translation.is_finite() || !estimated_translation.is_finite() {
        return Err(Error::InvalidArgument(
            "non-finite translation in scale recovery".into(),
        ));
    }
    if estimated_translation <= SCALE_TOLERANCE {
        return Err(Error::DegenerateScale(format!(
            "estimated translation {estimated_translation} is below tolerance {SCALE_TOLERANCE}"
        )));
    }
    Ok(odometry_translation / estimated_translation)
}
