//! Reference parameter sets used by tests, benches and the CLI.

use crate::model::{Lattice, RtbmParams};

/// `N_v = 2`, `N_h = 2` machine fitted to the bivariate Student-t with
/// `μ = 0`, `Σ = [[2, −1], [−1, 4]]`, `ν = 6`.
pub fn fitted_student_t() -> RtbmParams {
    RtbmParams::from_rows(
        &[0.56, 0.18, 0.18, 0.30],
        &[24.15, -0.44, -0.44, 41.57],
        &[-1.11, 1.02, -0.66, 0.60],
        &[0.0, 0.0],
        &[8.22, 17.40],
        Lattice::Full,
    )
    .expect("fixture shapes")
}

const MIX2_T: [f64; 4] = [28.77, 0.0, 0.0, 6.3];
const MIX2_W: [f64; 8] = [
    18.54, 3.02, -12.89, -5.45, //
    0.46, 1.01, -1.32, -5.54,
];
const MIX2_BV: [f64; 2] = [-1.76, -2.69];
const MIX2_BH: [f64; 4] = [-0.31, 2.29, 1.65, -2.73];

fn mix2_q(last: f64) -> [f64; 16] {
    [
        15.48, 8.82, -3.19, -3.67, //
        8.82, 17.99, 8.94, -4.04, //
        -3.19, 8.94, 15.74, 4.14, //
        -3.67, -4.04, 4.14, last,
    ]
}

fn mix2(last: f64) -> RtbmParams {
    RtbmParams::from_rows(
        &MIX2_T,
        &mix2_q(last),
        &MIX2_W,
        &MIX2_BV,
        &MIX2_BH,
        Lattice::Full,
    )
    .expect("fixture shapes")
}

/// The `N_v = 2`, `N_h = 4` hand-built machine with its original values. Its
/// `Q` has a negative diagonal entry and fails validation.
pub fn mixture_2d_as_printed() -> RtbmParams {
    mix2(-5.54)
}

/// [`mixture_2d_as_printed`] with the sign of `Q[3][3]` flipped. `Q` is then
/// positive definite but `Q − Wᵀ T⁻¹ W` is not, so this also fails.
pub fn mixture_2d_sign_corrected() -> RtbmParams {
    mix2(5.54)
}

/// Valid substitute for the hand-built `N_v = 2`, `N_h = 4` machine:
/// identical except `Q[3][3] = 10`, which makes both `Q` and the Schur-type
/// matrix positive definite (smallest eigenvalues ≈ 1.20 and ≈ 0.296).
pub fn mixture_2d() -> RtbmParams {
    mix2(10.0)
}

/// The hand-built `N_v = 3`, `N_h = 1` machine.
pub fn mixture_3d() -> RtbmParams {
    RtbmParams::from_rows(
        &[
            16.02, -6.52, -6.76, //
            -6.52, 29.04, -2.56, //
            -6.76, -2.56, 42.16,
        ],
        &[19.18],
        &[-15.76, 2.29, 2.09],
        &[1.08, -0.67, 4.86],
        &[3.17],
        Lattice::Full,
    )
    .expect("fixture shapes")
}

/// Every fixture that passes validation.
pub fn valid_fixtures() -> Vec<RtbmParams> {
    vec![fitted_student_t(), mixture_2d(), mixture_3d()]
}
