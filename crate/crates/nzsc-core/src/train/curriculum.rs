//! Noise curricula: noise-free at the start of training, full noise from
//! some point on.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum CurriculumSchedule {
    /// Multiplier rises linearly from 0 to 1 over the first `ramp_fraction`
    /// of training, then stays at 1.
    LinearRamp { ramp_fraction: f64 },
}

impl CurriculumSchedule {
    pub fn standard() -> Self {
        CurriculumSchedule::LinearRamp { ramp_fraction: 0.5 }
    }

    /// Noise multiplier at training progress `p` in [0, 1].
    pub fn multiplier(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        match self {
            CurriculumSchedule::LinearRamp { ramp_fraction } => {
                if *ramp_fraction <= 0.0 {
                    1.0
                } else {
                    (p / ramp_fraction).min(1.0)
                }
            }
        }
    }
}
