//! Fixed instances and filters with known closed-form properties.

use crate::model::{Filter, OEInstance};
use crate::numerics::{from_rows, Mat};

/// `A = −I₂, C = I₂, G = I₂, W1 = 3 I₂, W2 = I₂`.
pub fn example2_instance() -> OEInstance {
    let i = Mat::identity(2, 2);
    OEInstance::new(-&i, i.clone(), i.clone(), &i * 3.0, i).expect("valid dimensions")
}

/// Zero filter `(−ε I₂, 0, 0)`, a suboptimal stationary point of [`example2_instance`].
pub fn example1_kbad(eps: f64) -> Filter {
    Filter::new(-Mat::identity(2, 2) * eps, Mat::zeros(2, 2), Mat::zeros(2, 2))
}

/// Controllable but non-informative stationary point, for any `γ > 0`.
pub fn example2_kbad(gamma: f64) -> Filter {
    let e11 = from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
    Filter::new(
        from_rows(&[&[-2.0, 0.0], &[gamma, -gamma]]),
        e11.clone(),
        e11,
    )
}

/// Instance whose Kalman filter is not controllable (`G = I₂`; `G` does not
/// affect the Kalman gain).
pub fn opt_not_ctrb_instance() -> OEInstance {
    OEInstance::new(
        from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]]),
        from_rows(&[&[1.0, 1.0]]),
        Mat::identity(2, 2),
        from_rows(&[&[48.0, -36.0], &[-36.0, 48.0]]),
        Mat::identity(1, 1),
    )
    .expect("valid dimensions")
}

/// Second-order SISO instance whose optimum lies in Brockett region 1 (`G = C`).
pub fn peril_instance() -> OEInstance {
    let c = from_rows(&[&[0.5710, -0.5093]]);
    OEInstance::new(
        from_rows(&[&[-1.2901, -0.2626], &[-0.2626, -0.2814]]),
        c.clone(),
        c,
        from_rows(&[&[3.0940, -1.5716], &[-1.5716, 1.2422]]),
        Mat::identity(1, 1),
    )
    .expect("valid dimensions")
}

/// Initial filter for [`peril_instance`], located in region 2.
pub fn peril_k0() -> Filter {
    Filter::new(
        from_rows(&[&[-9.863, -20.19], &[17.4, -4.143]]),
        from_rows(&[&[-1.499], &[-16.44]]),
        from_rows(&[&[11.56, -2.97]]),
    )
}
