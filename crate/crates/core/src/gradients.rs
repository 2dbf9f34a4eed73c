//! Analytic gradients of the OE loss and the informativity regularizer via
//! adjoint Lyapunov equations, plus finite-difference oracles.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::lyapcare::{clyap, sylvester};
use crate::model::{stationary, Filter, OEInstance, StationaryState};
use crate::numerics::{solve_linear, sym_eig, symmetrize, Mat};

/// A direction in filter-parameter space `(ΔA, ΔB, ΔC)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub da: Mat,
    pub db: Mat,
    pub dc: Mat,
}

impl Gradient {
    pub fn zeros_like(k: &Filter) -> Self {
        Gradient {
            da: Mat::zeros(k.a_k.nrows(), k.a_k.ncols()),
            db: Mat::zeros(k.b_k.nrows(), k.b_k.ncols()),
            dc: Mat::zeros(k.c_k.nrows(), k.c_k.ncols()),
        }
    }

    /// `sqrt(‖ΔA‖_F² + ‖ΔB‖_F² + ‖ΔC‖_F²)`.
    pub fn norm(&self) -> f64 {
        (self.da.norm_squared() + self.db.norm_squared() + self.dc.norm_squared()).sqrt()
    }

    /// Same flattening as [`Filter::to_vec`].
    pub fn to_vec(&self) -> Vec<f64> {
        self.da
            .iter()
            .chain(self.db.iter())
            .chain(self.dc.iter())
            .copied()
            .collect()
    }

    fn from_vec(like: &Filter, v: &[f64]) -> Self {
        let f = like.with_params(v);
        Gradient {
            da: f.a_k,
            db: f.b_k,
            dc: f.c_k,
        }
    }
}

impl Add for &Gradient {
    type Output = Gradient;

    fn add(self, rhs: &Gradient) -> Gradient {
        Gradient {
            da: &self.da + &rhs.da,
            db: &self.db + &rhs.db,
            dc: &self.dc + &rhs.dc,
        }
    }
}

impl Sub for &Gradient {
    type Output = Gradient;

    fn sub(self, rhs: &Gradient) -> Gradient {
        Gradient {
            da: &self.da - &rhs.da,
            db: &self.db - &rhs.db,
            dc: &self.dc - &rhs.dc,
        }
    }
}

impl Mul<&Gradient> for f64 {
    type Output = Gradient;

    fn mul(self, g: &Gradient) -> Gradient {
        Gradient {
            da: &g.da * self,
            db: &g.db * self,
            dc: &g.dc * self,
        }
    }
}

impl Filter {
    /// `K − η Δ`.
    pub fn step(&self, dir: &Gradient, eta: f64) -> Filter {
        Filter {
            a_k: &self.a_k - &dir.da * eta,
            b_k: &self.b_k - &dir.db * eta,
            c_k: &self.c_k - &dir.dc * eta,
        }
    }
}

/// Adjoint solutions behind the analytic gradients.
///
/// `y` solves `A_clᵀ Y + Y A_cl + [G, −C_K]ᵀ[G, −C_K] = 0`; `q_adj` and
/// `r_adj` solve the adjoint equations whose forcing terms are the
/// off-diagonal and lower-right sensitivities of `tr(Z⁻¹)` to `Σ`.
#[derive(Debug, Clone)]
pub struct AdjointWorkspace {
    pub y: Mat,
    pub q_adj: Mat,
    pub r_adj: Mat,
}

/// Adjoint blocks `(Y12, Y22)` of `A_clᵀ Y + Y A_cl + M = 0`. Since `A_clᵀ`
/// is block upper triangular, `Y22` and then `Y12` follow from `n × n` solves.
fn adjoint_blocks(inst: &OEInstance, k: &Filter, m: &Mat) -> Result<(Mat, Mat)> {
    let n = inst.n();
    let m22 = symmetrize(&m.view((n, n), (n, n)).into_owned());
    let y22 = clyap(&k.a_k.transpose(), &m22)?;
    let q12 = m.view((0, n), (n, n)) + inst.c.transpose() * k.b_k.transpose() * &y22;
    let y12 = sylvester(&inst.a.transpose(), &k.a_k, &q12)?;
    Ok((y12, y22))
}

/// Full adjoint solution, completing `Y11` from the off-diagonal block.
fn adjoint_full(inst: &OEInstance, k: &Filter, m: &Mat) -> Result<Mat> {
    let n = inst.n();
    let m = symmetrize(m);
    let (y12, y22) = adjoint_blocks(inst, k, &m)?;
    let coupling = &y12 * &k.b_k * &inst.c;
    let q11 = m.view((0, 0), (n, n)) + &coupling + coupling.transpose();
    let y11 = clyap(&inst.a.transpose(), &q11)?;
    let mut y = Mat::zeros(2 * n, 2 * n);
    y.view_mut((0, 0), (n, n)).copy_from(&y11);
    y.view_mut((0, n), (n, n)).copy_from(&y12);
    y.view_mut((n, 0), (n, n)).copy_from(&y12.transpose());
    y.view_mut((n, n), (n, n)).copy_from(&y22);
    Ok(y)
}

/// Chain rule through the closed-loop Lyapunov equation: for a functional
/// with symmetric sensitivity `M = ∂f/∂Σ`, the adjoint `Y` yields
/// `∂f/∂A_K = 2(Y12ᵀ Σ12 + Y22 Σ22)` and
/// `∂f/∂B_K = 2(Y12ᵀ Σ11 Cᵀ + Y22 Σ12ᵀ Cᵀ + Y22 B_K W2)`.
fn param_grad(inst: &OEInstance, k: &Filter, st: &StationaryState, m: &Mat) -> Result<(Mat, Mat)> {
    let (y12, y22) = adjoint_blocks(inst, k, m)?;
    let ct = inst.c.transpose();
    let da = (y12.transpose() * &st.sigma12 + &y22 * &st.sigma22) * 2.0;
    let db = (y12.transpose() * &st.sigma11 * &ct
        + &y22 * st.sigma12.transpose() * &ct
        + &y22 * &k.b_k * &inst.w2)
        * 2.0;
    Ok((da, db))
}

fn oe_forcing(inst: &OEInstance, k: &Filter) -> Mat {
    let (n, p) = (inst.n(), inst.p());
    let mut gc = Mat::zeros(p, 2 * n);
    gc.view_mut((0, 0), (p, n)).copy_from(&inst.g);
    gc.view_mut((0, n), (p, n)).copy_from(&(-&k.c_k));
    gc.transpose() * gc
}

/// Forcing terms `(Q, R)` for the informativity adjoints.
fn info_forcings(st: &StationaryState) -> Result<(Mat, Mat)> {
    let n = st.sigma12.nrows();
    let inv12 = solve_linear(&st.sigma12, &Mat::identity(n, n)).map_err(|_| Error::NotInformative)?;
    let inv_inv_t = &inv12 * inv12.transpose();
    let lower = &inv_inv_t * &st.sigma22 * &inv12;
    let mut q = Mat::zeros(2 * n, 2 * n);
    q.view_mut((n, 0), (n, n)).copy_from(&lower);
    q.view_mut((0, n), (n, n)).copy_from(&lower.transpose());
    let mut r = Mat::zeros(2 * n, 2 * n);
    r.view_mut((n, n), (n, n)).copy_from(&inv_inv_t);
    Ok((q, r))
}

/// Gradient of the OE loss from a precomputed state.
pub fn grad_oe_of(inst: &OEInstance, k: &Filter, st: &StationaryState) -> Result<Gradient> {
    let (da, db) = param_grad(inst, k, st, &oe_forcing(inst, k))?;
    let dc = (&k.c_k * &st.sigma22 - &inst.g * &st.sigma12) * 2.0;
    Ok(Gradient { da, db, dc })
}

/// Gradient of `tr(Z⁻¹)` from a precomputed state. `dc` is identically zero.
pub fn grad_info_of(inst: &OEInstance, k: &Filter, st: &StationaryState) -> Result<Gradient> {
    if !st.informative {
        return Err(Error::NotInformative);
    }
    let (q, r) = info_forcings(st)?;
    // the adjoint map is linear, so one solve with R − Q suffices
    let (da, db) = param_grad(inst, k, st, &(r - q))?;
    Ok(Gradient {
        da,
        db,
        dc: Mat::zeros(k.c_k.nrows(), k.c_k.ncols()),
    })
}

pub fn grad_total_of(
    inst: &OEInstance,
    k: &Filter,
    st: &StationaryState,
    lambda: f64,
) -> Result<Gradient> {
    let g = grad_oe_of(inst, k, st)?;
    if lambda == 0.0 {
        return Ok(g);
    }
    Ok(&g + &(lambda * &grad_info_of(inst, k, st)?))
}

/// `∇L_OE(K)`.
pub fn grad_oe(inst: &OEInstance, k: &Filter) -> Result<Gradient> {
    grad_oe_of(inst, k, &stationary(inst, k)?)
}

/// `∇ tr(Z_K⁻¹)`; fails with `NotInformative` when `Σ12` is rank deficient.
pub fn grad_info(inst: &OEInstance, k: &Filter) -> Result<Gradient> {
    grad_info_of(inst, k, &stationary(inst, k)?)
}

/// `∇L_OE + λ ∇R_info`.
pub fn grad_total(inst: &OEInstance, k: &Filter, lambda: f64) -> Result<Gradient> {
    grad_total_of(inst, k, &stationary(inst, k)?, lambda)
}

/// All three adjoint solutions at `k` (requires an informative filter).
pub fn adjoint_workspace(inst: &OEInstance, k: &Filter) -> Result<AdjointWorkspace> {
    let st = stationary(inst, k)?;
    if !st.informative {
        return Err(Error::NotInformative);
    }
    let (q, r) = info_forcings(&st)?;
    Ok(AdjointWorkspace {
        y: adjoint_full(inst, k, &oe_forcing(inst, k))?,
        q_adj: adjoint_full(inst, k, &q)?,
        r_adj: adjoint_full(inst, k, &r)?,
    })
}

/// Default finite-difference step for gradients: `1e-6 (1 + ‖K‖)`.
pub fn fd_step_gradient(k: &Filter) -> f64 {
    1e-6 * (1.0 + k.norm())
}

/// Default finite-difference step for Hessians: `1e-4 (1 + ‖K‖)`.
pub fn fd_step_hessian(k: &Filter) -> f64 {
    1e-4 * (1.0 + k.norm())
}

/// Central-difference gradient of an extended-real functional.
pub fn fd_gradient(f: impl Fn(&Filter) -> ExtReal, k: &Filter, h: f64) -> Result<Gradient> {
    let x = k.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&k.with_params(&probe)).finite().ok_or(Error::OutOfDomain)?;
        probe[i] = x[i] - h;
        let fm = f(&k.with_params(&probe)).finite().ok_or(Error::OutOfDomain)?;
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(Gradient::from_vec(k, &g))
}

/// Symmetrized central-difference Hessian of `L_OE + λ R_info`, obtained by
/// differencing the analytic gradient.
pub fn hessian_fd(inst: &OEInstance, k: &Filter, lambda: f64, h: f64) -> Result<Mat> {
    let x = k.to_vec();
    let d = x.len();
    let mut hess = Mat::zeros(d, d);
    let mut probe = x.clone();
    let grad_at = |v: &[f64]| -> Result<Vec<f64>> {
        grad_total(inst, &k.with_params(v), lambda)
            .map(|g| g.to_vec())
            .map_err(|_| Error::OutOfDomain)
    };
    for i in 0..d {
        probe[i] = x[i] + h;
        let gp = grad_at(&probe)?;
        probe[i] = x[i] - h;
        let gm = grad_at(&probe)?;
        probe[i] = x[i];
        for j in 0..d {
            hess[(j, i)] = (gp[j] - gm[j]) / (2.0 * h);
        }
    }
    Ok(symmetrize(&hess))
}

/// Smallest eigenvalue of [`hessian_fd`].
pub fn hessian_min_eig(inst: &OEInstance, k: &Filter, lambda: f64, h: f64) -> Result<f64> {
    Ok(sym_eig(&hessian_fd(inst, k, lambda, h)?)?.min())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::model::{loss_oe, loss_total, reg_info};
    use crate::numerics::is_hurwitz;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &Gradient, b: &Gradient) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn random_informative(rng: &mut impl Rng, inst: &OEInstance) -> Filter {
        loop {
            let n = inst.n();
            let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) - Mat::identity(n, n) * 2.0;
            let k = Filter::new(
                a,
                Mat::from_fn(n, inst.m(), |_, _| rng.random_range(-1.0..1.0)),
                Mat::from_fn(inst.p(), n, |_, _| rng.random_range(-1.0..1.0)),
            );
            if is_hurwitz(&k.a_k) {
                if let Ok(st) = stationary(inst, &k) {
                    if st.sigma_min_12() > 1e-3 * st.sigma12.norm() {
                        return k;
                    }
                }
            }
        }
    }

    #[test]
    fn example1_gradient_vanishes() {
        let inst = examples::example2_instance();
        let g = grad_oe(&inst, &examples::example1_kbad(1.0)).unwrap();
        assert!(g.norm() <= 1e-10);
    }

    #[test]
    fn example2_gradient_vanishes() {
        let inst = examples::example2_instance();
        for gamma in [1.0, 10.0] {
            let g = grad_oe(&inst, &examples::example2_kbad(gamma)).unwrap();
            assert!(g.norm() <= 1e-8, "gamma {gamma}: {}", g.norm());
        }
    }

    #[test]
    fn grad_oe_matches_finite_differences() {
        let inst = examples::peril_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let k = random_informative(&mut rng, &inst);
            let fd = fd_gradient(|f| loss_oe(&inst, f), &k, fd_step_gradient(&k)).unwrap();
            assert!(rel_err(&grad_oe(&inst, &k).unwrap(), &fd) <= 1e-5);
        }
    }

    #[test]
    fn grad_info_matches_finite_differences() {
        let inst = examples::example2_instance();
        let (kstar, _) = crate::model::kalman(&inst).unwrap();
        let g = grad_info(&inst, &kstar).unwrap();
        assert_eq!(g.dc.abs().max(), 0.0);
        let fd = fd_gradient(|f| reg_info(&inst, f), &kstar, fd_step_gradient(&kstar)).unwrap();
        // at the optimum both are ~0; compare absolutely there
        assert!((&g - &fd).norm() <= 1e-5 * (1.0 + fd.norm()));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let k = random_informative(&mut rng, &inst);
            let g = grad_info(&inst, &k).unwrap();
            let fd = fd_gradient(|f| reg_info(&inst, f), &k, fd_step_gradient(&k)).unwrap();
            assert!(rel_err(&g, &fd) <= 1e-5, "{}", rel_err(&g, &fd));
        }
    }

    #[test]
    fn grad_info_rejects_non_informative() {
        let inst = examples::example2_instance();
        assert!(matches!(
            grad_info(&inst, &examples::example2_kbad(1.0)),
            Err(Error::NotInformative)
        ));
    }

    #[test]
    fn grad_total_combinations() {
        let inst = examples::peril_instance();
        let k = examples::peril_k0();
        assert_eq!(grad_total(&inst, &k, 0.0).unwrap(), grad_oe(&inst, &k).unwrap());
        let g = grad_total(&inst, &k, 1e-4).unwrap();
        let fd = fd_gradient(|f| loss_total(&inst, f, 1e-4), &k, fd_step_gradient(&k)).unwrap();
        assert!(rel_err(&g, &fd) <= 1e-5);
    }

    #[test]
    fn adjoint_residuals() {
        let inst = examples::peril_instance();
        let k = examples::peril_k0();
        let ws = adjoint_workspace(&inst, &k).unwrap();
        let st = stationary(&inst, &k).unwrap();
        let (q, r) = info_forcings(&st).unwrap();
        for (y, m) in [(&ws.y, oe_forcing(&inst, &k)), (&ws.q_adj, q), (&ws.r_adj, r)] {
            let res = st.a_cl.transpose() * y + y * &st.a_cl + &m;
            assert!(res.norm() <= 1e-10 * (2.0 * st.a_cl.norm() * y.norm() + m.norm()));
        }
    }

    #[test]
    fn fd_gradient_basics() {
        let k = examples::peril_k0();
        let g = fd_gradient(|_| ExtReal::Finite(3.0), &k, 1e-3).unwrap();
        assert_eq!(g.norm(), 0.0);
        let g = fd_gradient(|f| ExtReal::Finite(2.5 * f.b_k[(1, 0)] + 1.0), &k, 1e-3).unwrap();
        assert!((g.db[(1, 0)] - 2.5).abs() < 1e-10);
        assert!(g.da.abs().max() < 1e-10 && g.dc.abs().max() < 1e-10);
        let err = fd_gradient(|_| ExtReal::Infinite, &k, 1e-3);
        assert!(matches!(err, Err(Error::OutOfDomain)));

        let inst = examples::example2_instance();
        let kbad = examples::example1_kbad(1.0);
        let h = fd_step_gradient(&kbad);
        let g = fd_gradient(|f| loss_oe(&inst, f), &kbad, h).unwrap();
        assert!(g.norm() <= 10.0 * h * h);
    }

    #[test]
    fn hessian_signs() {
        let inst = examples::example2_instance();
        let k1 = examples::example2_kbad(1.0);
        let k100 = examples::example2_kbad(100.0);
        let e1 = hessian_min_eig(&inst, &k1, 0.0, fd_step_hessian(&k1)).unwrap();
        let e100 = hessian_min_eig(&inst, &k100, 0.0, fd_step_hessian(&k100)).unwrap();
        assert!(e1 < 0.0, "{e1}");
        assert!(e100 < 0.0 && e100.abs() < e1.abs(), "{e1} {e100}");

        let (kstar, _) = crate::model::kalman(&inst).unwrap();
        let h = hessian_fd(&inst, &kstar, 0.0, fd_step_hessian(&kstar)).unwrap();
        let s = sym_eig(&h).unwrap();
        let scale = s.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(s.min() >= -1e-6 * scale, "{} vs {scale}", s.min());
    }

    #[test]
    fn gradient_step_fixes_stationary_point() {
        let inst = examples::example2_instance();
        let k = examples::example2_kbad(3.0);
        let g = grad_oe(&inst, &k).unwrap();
        for eta in [1e-3, 1.0, 1e3] {
            let moved = k.step(&g, eta);
            let d = (&moved.a_k - &k.a_k).norm() + (&moved.b_k - &k.b_k).norm() + (&moved.c_k - &k.c_k).norm();
            assert!(d <= 1e-8);
        }
    }
}
