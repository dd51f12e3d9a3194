//! Shared inputs for the criterion benchmarks.

use rtbm::oracle::{sample_student, StudentTParams};
use rtbm::{fixtures, Dataset, RtbmParams};

/// Training-sized Student-t sample (the fitting workload).
pub fn student_sample(count: usize) -> Dataset {
    sample_student(&StudentTParams::reference(), count, 1).expect("valid reference")
}

/// Named fixtures covering one, two and four hidden units.
pub fn models() -> Vec<(&'static str, RtbmParams)> {
    vec![
        ("nv3_nh1", fixtures::mixture_3d()),
        ("nv2_nh2", fixtures::fitted_student_t()),
        ("nv2_nh4", fixtures::mixture_2d()),
    ]
}
