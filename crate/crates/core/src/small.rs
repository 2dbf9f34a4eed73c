//! Allocation-free evaluation of line-search candidates for `n = 2`, `m = 1`.
//!
//! Candidates have the form `K − η Δ`; everything that does not depend on
//! `η` is precomputed once per line search.

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector2, Vector3, Vector4};

use crate::gradients::Gradient;
use crate::model::{Filter, OEInstance, Thresholds};
use crate::numerics::{eig2, Mat, HURWITZ_MARGIN};

/// Evaluated candidate.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Eval {
    pub loss_oe: f64,
    /// `tr(Z⁻¹)`, `+∞` outside the informative set (only computed on request).
    pub reg_info: f64,
    pub s22_min: f64,
    pub s22_max: f64,
}

pub(crate) struct SmallInstance {
    a: Matrix2<f64>,
    c: Vector2<f64>,
    w2: f64,
    s11: Matrix2<f64>,
    tr_gs11g: f64,
    g: Mat,
    th: Thresholds,
}

pub(crate) struct Ray {
    a0: Matrix2<f64>,
    da: Matrix2<f64>,
    b0: Vector2<f64>,
    db: Vector2<f64>,
    cc0: Matrix2<f64>,
    cc1: Matrix2<f64>,
    cc2: Matrix2<f64>,
    cg0: Matrix2<f64>,
    cg1: Matrix2<f64>,
}

fn m2(m: &Mat) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn v2(m: &Mat) -> Vector2<f64> {
    Vector2::new(m[(0, 0)], m[(1, 0)])
}

/// `Xᵀ Y` for `p × 2` inputs.
fn tn(x: &Mat, y: &Mat) -> Matrix2<f64> {
    m2(&(x.transpose() * y))
}

/// Singular values `(max, min)` of a 2×2 matrix.
fn sv2(m: &Matrix2<f64>) -> (f64, f64) {
    let e = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let f = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let g = 0.5 * (m[(1, 0)] + m[(0, 1)]);
    let h = 0.5 * (m[(1, 0)] - m[(0, 1)]);
    let q = e.hypot(h);
    let r = f.hypot(g);
    (q + r, (q - r).abs())
}

impl SmallInstance {
    pub fn new(inst: &OEInstance, s11: &Mat, th: Thresholds) -> Option<Self> {
        if inst.n() != 2 || inst.m() != 1 {
            return None;
        }
        let gs = &inst.g * s11 * inst.g.transpose();
        Some(SmallInstance {
            a: m2(&inst.a),
            c: Vector2::new(inst.c[(0, 0)], inst.c[(0, 1)]),
            w2: inst.w2[(0, 0)],
            s11: m2(s11),
            tr_gs11g: gs.trace(),
            g: inst.g.clone(),
            th,
        })
    }

    pub fn ray(&self, k: &Filter, dir: &Gradient) -> Ray {
        let (c0, dc) = (&k.c_k, &dir.dc);
        let cross = tn(c0, dc);
        Ray {
            a0: m2(&k.a_k),
            da: m2(&dir.da),
            b0: v2(&k.b_k),
            db: v2(&dir.db),
            cc0: tn(c0, c0),
            cc1: cross + cross.transpose(),
            cc2: tn(dc, dc),
            cg0: tn(c0, &self.g),
            cg1: tn(dc, &self.g),
        }
    }

    /// Evaluates `K − η Δ`; `None` when the candidate is unstable or the
    /// stationary equations are singular.
    pub fn eval(&self, ray: &Ray, eta: f64, with_reg: bool) -> Option<Eval> {
        let ak = ray.a0 - ray.da * eta;
        let ev = eig2(ak[(0, 0)], ak[(0, 1)], ak[(1, 0)], ak[(1, 1)]);
        if !(ev[0].re.max(ev[1].re) < -HURWITZ_MARGIN) {
            return None;
        }
        let b = ray.b0 - ray.db * eta;

        // A Σ12 + Σ12 A_Kᵀ + Σ11 Cᵀ B_Kᵀ = 0, vectorized column-major
        let q12 = (self.s11 * self.c) * b.transpose();
        let a = &self.a;
        let mut kr = Matrix4::zeros();
        for bi in 0..2 {
            for bj in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut v = ak[(bi, bj)] * if i == j { 1.0 } else { 0.0 };
                        if bi == bj {
                            v += a[(i, j)];
                        }
                        kr[(2 * bi + i, 2 * bj + j)] = v;
                    }
                }
            }
        }
        let rhs = Vector4::new(-q12[(0, 0)], -q12[(1, 0)], -q12[(0, 1)], -q12[(1, 1)]);
        let x = kr.lu().solve(&rhs)?;
        let s12 = Matrix2::new(x[0], x[2], x[1], x[3]);

        // A_K Σ22 + Σ22 A_Kᵀ + Q22 = 0 in the unknowns (x11, x12, x22)
        let cs = s12.transpose() * self.c;
        let cross = b * cs.transpose();
        let q22 = cross + cross.transpose() + b * b.transpose() * self.w2;
        let (p, q, r, s) = (ak[(0, 0)], ak[(0, 1)], ak[(1, 0)], ak[(1, 1)]);
        let lyap = Matrix3::new(2.0 * p, 2.0 * q, 0.0, r, p + s, q, 0.0, 2.0 * r, 2.0 * s);
        let y = lyap
            .lu()
            .solve(&Vector3::new(-q22[(0, 0)], -0.5 * (q22[(0, 1)] + q22[(1, 0)]), -q22[(1, 1)]))?;
        let s22 = Matrix2::new(y[0], y[1], y[1], y[2]);

        let cc = ray.cc0 - ray.cc1 * eta + ray.cc2 * (eta * eta);
        let cg = ray.cg0 - ray.cg1 * eta;
        let loss_oe = self.tr_gs11g - 2.0 * (s12 * cg).trace() + (s22 * cc).trace();
        if !loss_oe.is_finite() {
            return None;
        }

        let mid = 0.5 * (y[0] + y[2]);
        let rad = (0.5 * (y[0] - y[2])).hypot(y[1]);
        let (s22_min, s22_max) = (mid - rad, mid + rad);

        let mut reg_info = f64::INFINITY;
        if with_reg {
            let (smax, smin) = sv2(&s12);
            let informative = smax > 0.0 && smin > self.th.info_rel * smax;
            let controllable = s22_max > 0.0 && s22_min > self.th.ctrb_rel * s22_max;
            if informative && controllable {
                if let Some(inv) = s12.try_inverse() {
                    reg_info = (inv.transpose() * s22 * inv).trace();
                }
            }
        }
        Some(Eval {
            loss_oe,
            reg_info,
            s22_min,
            s22_max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::gradients::grad_total;
    use crate::model::{loss_oe, reg_info, stationary};
    use crate::numerics::sym_eig;

    #[test]
    fn agrees_with_general_path() {
        let inst = examples::peril_instance();
        let k = examples::peril_k0();
        let small = SmallInstance::new(&inst, &inst.sigma11().unwrap(), Thresholds::default()).unwrap();
        let dir = grad_total(&inst, &k, 1e-4).unwrap();
        let ray = small.ray(&k, &dir);
        for eta in [0.0, 1e-6, 1e-4, 1e-3, 1e-2] {
            let cand = k.step(&dir, eta);
            let st = stationary(&inst, &cand).unwrap();
            let e = small.eval(&ray, eta, true).unwrap();
            let l = loss_oe(&inst, &cand).to_f64();
            let r = reg_info(&inst, &cand).to_f64();
            assert!((e.loss_oe - l).abs() <= 1e-9 * l, "{} {l}", e.loss_oe);
            assert!((e.reg_info - r).abs() <= 1e-8 * r, "{} {r}", e.reg_info);
            let s = sym_eig(&st.sigma22).unwrap();
            assert!((e.s22_min - s.min()).abs() <= 1e-9 * s.max());
            assert!((e.s22_max - s.max()).abs() <= 1e-9 * s.max());
        }
    }

    #[test]
    fn rejects_unstable() {
        let inst = examples::peril_instance();
        let k = examples::peril_k0();
        let small = SmallInstance::new(&inst, &inst.sigma11().unwrap(), Thresholds::default()).unwrap();
        let mut dir = Gradient::zeros_like(&k);
        dir.da = -Mat::identity(2, 2);
        let ray = small.ray(&k, &dir);
        assert!(small.eval(&ray, 100.0, false).is_none());
    }

    #[test]
    fn singular_values_closed_form() {
        let m = Matrix2::new(3.0, 1.0, -2.0, 0.5);
        let (hi, lo) = sv2(&m);
        let svd = m.svd(false, false).singular_values;
        assert!((hi - svd.max()).abs() < 1e-12 && (lo - svd.min()).abs() < 1e-12);
    }
}
