//! Output-estimation instances, dynamic filters, and their stationary analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::ext::ExtReal;
use crate::lyapcare::{self, clyap, obs_gramian, sylvester, RiccatiSolution};
use crate::numerics::{
    condition_1, gen_eig_values, is_hurwitz, psd_pinv, singular_values, solve_linear,
    spd_inv_sqrt, sym_eig, symmetrize, Mat,
};

/// Serde adapter storing a matrix as row-major nested arrays.
pub mod mat_rows {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::numerics::Mat;

    pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err("matrix must be non-empty".into());
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err("ragged matrix rows".into());
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err("matrix entries must be finite".into());
        }
        Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(to_rows(m))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

/// The true system `dx = A x + w`, `y = C x + v`, `z = G x` with noise
/// intensities `W1`, `W2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OEInstance {
    #[serde(rename = "A", with = "mat_rows")]
    pub a: Mat,
    #[serde(rename = "C", with = "mat_rows")]
    pub c: Mat,
    #[serde(rename = "G", with = "mat_rows")]
    pub g: Mat,
    #[serde(rename = "W1", with = "mat_rows")]
    pub w1: Mat,
    #[serde(rename = "W2", with = "mat_rows")]
    pub w2: Mat,
}

impl OEInstance {
    /// Builds an instance after checking dimensions (not assumptions).
    pub fn new(a: Mat, c: Mat, g: Mat, w1: Mat, w2: Mat) -> Result<Self> {
        let inst = OEInstance { a, c, g, w1, w2 };
        inst.check_dims()?;
        Ok(inst)
    }

    pub fn check_dims(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.c.nrows();
        let ok = self.a.ncols() == n
            && n > 0
            && m > 0
            && self.c.ncols() == n
            && self.g.ncols() == n
            && self.g.nrows() > 0
            && self.w1.shape() == (n, n)
            && self.w2.shape() == (m, m);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "inconsistent instance: A {:?}, C {:?}, G {:?}, W1 {:?}, W2 {:?}",
                self.a.shape(),
                self.c.shape(),
                self.g.shape(),
                self.w1.shape(),
                self.w2.shape()
            )))
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn p(&self) -> usize {
        self.g.nrows()
    }

    /// Checks stability, observability and noise positivity.
    pub fn check_assumptions(&self) -> Result<()> {
        self.check_dims()?;
        if !is_hurwitz(&self.a) {
            return Err(Error::AssumptionViolated(Assumption::Stability));
        }
        if sym_eig(&self.obs_gramian()?)?.min() <= 1e-12 {
            return Err(Error::AssumptionViolated(Assumption::Observability));
        }
        if sym_eig(&self.w1)?.min() <= 0.0 || sym_eig(&self.w2)?.min() <= 0.0 {
            return Err(Error::AssumptionViolated(Assumption::PositiveNoise));
        }
        Ok(())
    }

    /// Additionally checks that the Kalman filter is controllable.
    pub fn check_controllable_optimum(&self) -> Result<()> {
        self.check_assumptions()?;
        let (k, _) = kalman(self)?;
        let y = lyapcare::ctrb_gramian(&k.a_k, &k.b_k)?;
        let s = sym_eig(&y)?;
        if s.min() <= 1e-12 * s.max() {
            return Err(Error::AssumptionViolated(Assumption::ControllableOptimum));
        }
        Ok(())
    }

    pub fn obs_gramian(&self) -> Result<Mat> {
        obs_gramian(&self.a, &self.c)
    }

    /// Stationary state covariance `Σ11,sys`, independent of the filter.
    pub fn sigma11(&self) -> Result<Mat> {
        clyap(&self.a, &self.w1)
    }
}

/// Filter `dx̂ = A_K x̂ + B_K y`, `ẑ = C_K x̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    #[serde(rename = "A_K", with = "mat_rows")]
    pub a_k: Mat,
    #[serde(rename = "B_K", with = "mat_rows")]
    pub b_k: Mat,
    #[serde(rename = "C_K", with = "mat_rows")]
    pub c_k: Mat,
}

impl Filter {
    pub fn new(a_k: Mat, b_k: Mat, c_k: Mat) -> Self {
        Filter { a_k, b_k, c_k }
    }

    /// Checks that the filter's shapes match `inst`.
    pub fn check_dims(&self, inst: &OEInstance) -> Result<()> {
        let (n, m, p) = (inst.n(), inst.m(), inst.p());
        if self.a_k.shape() == (n, n) && self.b_k.shape() == (n, m) && self.c_k.shape() == (p, n) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "filter shapes A_K {:?}, B_K {:?}, C_K {:?} do not match instance (n={n}, m={m}, p={p})",
                self.a_k.shape(),
                self.b_k.shape(),
                self.c_k.shape()
            )))
        }
    }

    pub fn n(&self) -> usize {
        self.a_k.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.a_k.len() + self.b_k.len() + self.c_k.len()
    }

    /// Parameters flattened as `[vec(A_K), vec(B_K), vec(C_K)]` (column-major blocks).
    pub fn to_vec(&self) -> Vec<f64> {
        self.a_k
            .iter()
            .chain(self.b_k.iter())
            .chain(self.c_k.iter())
            .copied()
            .collect()
    }

    /// Inverse of [`Filter::to_vec`], using `self` for the shapes.
    pub fn with_params(&self, v: &[f64]) -> Filter {
        assert_eq!(v.len(), self.num_params());
        let (na, nb) = (self.a_k.len(), self.b_k.len());
        Filter {
            a_k: Mat::from_column_slice(self.a_k.nrows(), self.a_k.ncols(), &v[..na]),
            b_k: Mat::from_column_slice(self.b_k.nrows(), self.b_k.ncols(), &v[na..na + nb]),
            c_k: Mat::from_column_slice(self.c_k.nrows(), self.c_k.ncols(), &v[na + nb..]),
        }
    }

    /// `‖K‖ = sqrt(‖A_K‖_F² + ‖B_K‖_F² + ‖C_K‖_F²)`.
    pub fn norm(&self) -> f64 {
        (self.a_k.norm_squared() + self.b_k.norm_squared() + self.c_k.norm_squared()).sqrt()
    }

    pub fn is_stable(&self) -> bool {
        is_hurwitz(&self.a_k)
    }
}

/// Numerical thresholds for rank-type predicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Informative iff `σ_min(Σ12) > info_rel · σ_max(Σ12)`.
    pub info_rel: f64,
    /// Controllable iff `λ_min(Σ22) > ctrb_rel · λ_max(Σ22)`.
    pub ctrb_rel: f64,
    /// Residues below `residue_rel · ‖B_K‖ ‖C_K‖` count as pole-zero cancellations.
    pub residue_rel: f64,
    /// Poles closer than `pole_rel · max(1, |λ|)` count as repeated.
    pub pole_rel: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            info_rel: 1e-10,
            ctrb_rel: 1e-12,
            residue_rel: 1e-10,
            pole_rel: 1e-10,
        }
    }
}

/// Closed-loop stationary analysis of a filter on an instance.
#[derive(Debug, Clone)]
pub struct StationaryState {
    pub a_cl: Mat,
    pub w_cl: Mat,
    pub sigma: Mat,
    pub sigma11: Mat,
    pub sigma12: Mat,
    pub sigma22: Mat,
    /// Explained covariance `Σ12 Σ22⁺ Σ12ᵀ`.
    pub z: Mat,
    pub informative: bool,
    pub controllable: bool,
}

impl StationaryState {
    pub fn sigma_min_12(&self) -> f64 {
        *singular_values(&self.sigma12).last().unwrap()
    }

    pub fn sigma_min_22(&self) -> f64 {
        *singular_values(&self.sigma22).last().unwrap()
    }
}

fn closed_loop(inst: &OEInstance, k: &Filter) -> (Mat, Mat) {
    let n = inst.n();
    let mut a_cl = Mat::zeros(2 * n, 2 * n);
    a_cl.view_mut((0, 0), (n, n)).copy_from(&inst.a);
    a_cl.view_mut((n, 0), (n, n)).copy_from(&(&k.b_k * &inst.c));
    a_cl.view_mut((n, n), (n, n)).copy_from(&k.a_k);
    let mut w_cl = Mat::zeros(2 * n, 2 * n);
    w_cl.view_mut((0, 0), (n, n)).copy_from(&inst.w1);
    w_cl.view_mut((n, n), (n, n))
        .copy_from(&symmetrize(&(&k.b_k * &inst.w2 * k.b_k.transpose())));
    (a_cl, w_cl)
}

/// Solves the closed-loop Lyapunov equation block by block, using the lower
/// block-triangular structure of `A_cl`:
///
/// * `A Σ11 + Σ11 Aᵀ + W1 = 0`
/// * `A Σ12 + Σ12 A_Kᵀ + Σ11 Cᵀ B_Kᵀ = 0`
/// * `A_K Σ22 + Σ22 A_Kᵀ + B_K C Σ12 + Σ12ᵀ Cᵀ B_Kᵀ + B_K W2 B_Kᵀ = 0`
pub fn stationary_with(
    inst: &OEInstance,
    k: &Filter,
    sigma11: &Mat,
    th: &Thresholds,
) -> Result<StationaryState> {
    k.check_dims(inst)?;
    if !k.is_stable() {
        return Err(Error::NotStable);
    }
    let n = inst.n();
    let bc = &k.b_k * &inst.c;
    let sigma12 = sylvester(&inst.a, &k.a_k.transpose(), &(sigma11 * bc.transpose()))?;
    let cross = &bc * &sigma12;
    let q22 = &cross + cross.transpose() + &k.b_k * &inst.w2 * k.b_k.transpose();
    let sigma22 = clyap(&k.a_k, &q22)?;

    let (a_cl, w_cl) = closed_loop(inst, k);
    let mut sigma = Mat::zeros(2 * n, 2 * n);
    sigma.view_mut((0, 0), (n, n)).copy_from(sigma11);
    sigma.view_mut((0, n), (n, n)).copy_from(&sigma12);
    sigma.view_mut((n, 0), (n, n)).copy_from(&sigma12.transpose());
    sigma.view_mut((n, n), (n, n)).copy_from(&sigma22);

    let s22 = sym_eig(&sigma22)?;
    let controllable = s22.max() > 0.0 && s22.min() > th.ctrb_rel * s22.max();
    let sv12 = singular_values(&sigma12);
    let informative = sv12[0] > 0.0 && *sv12.last().unwrap() > th.info_rel * sv12[0];
    let z = symmetrize(&(&sigma12 * psd_pinv(&sigma22, th.ctrb_rel)? * sigma12.transpose()));

    Ok(StationaryState {
        a_cl,
        w_cl,
        sigma,
        sigma11: sigma11.clone(),
        sigma12,
        sigma22,
        z,
        informative,
        controllable,
    })
}

/// Stationary analysis with default thresholds.
pub fn stationary(inst: &OEInstance, k: &Filter) -> Result<StationaryState> {
    stationary_with(inst, k, &inst.sigma11()?, &Thresholds::default())
}

/// `tr([G, −C_K] Σ [G, −C_K]ᵀ)` from a precomputed state.
pub fn loss_oe_of(inst: &OEInstance, k: &Filter, st: &StationaryState) -> f64 {
    let g = &inst.g;
    let c = &k.c_k;
    (g * &st.sigma11 * g.transpose()).trace() - 2.0 * (g * &st.sigma12 * c.transpose()).trace()
        + (c * &st.sigma22 * c.transpose()).trace()
}

/// `tr(Z⁻¹) = tr(Σ12⁻ᵀ Σ22 Σ12⁻¹)` when informative and controllable, else `+∞`.
pub fn reg_info_of(st: &StationaryState) -> ExtReal {
    if !(st.informative && st.controllable) {
        return ExtReal::Infinite;
    }
    let n = st.sigma12.nrows();
    match solve_linear(&st.sigma12, &Mat::identity(n, n)) {
        Ok(x) => ExtReal::from_f64((x.transpose() * &st.sigma22 * &x).trace()),
        Err(_) => ExtReal::Infinite,
    }
}

/// Output-estimation loss; `+∞` for unstable filters.
pub fn loss_oe(inst: &OEInstance, k: &Filter) -> ExtReal {
    match stationary(inst, k) {
        Ok(st) => ExtReal::from_f64(loss_oe_of(inst, k, &st)),
        Err(_) => ExtReal::Infinite,
    }
}

/// Informativity regularizer `tr(Z_K⁻¹)`; `+∞` outside the informative set.
pub fn reg_info(inst: &OEInstance, k: &Filter) -> ExtReal {
    match stationary(inst, k) {
        Ok(st) => reg_info_of(&st),
        Err(_) => ExtReal::Infinite,
    }
}

/// `L_OE + λ R_info` (with `0 · ∞ = 0`).
pub fn loss_total(inst: &OEInstance, k: &Filter, lambda: f64) -> ExtReal {
    match stationary(inst, k) {
        Ok(st) => loss_total_of(inst, k, &st, lambda),
        Err(_) => ExtReal::Infinite,
    }
}

pub fn loss_total_of(inst: &OEInstance, k: &Filter, st: &StationaryState, lambda: f64) -> ExtReal {
    let oe = ExtReal::from_f64(loss_oe_of(inst, k, st));
    if lambda == 0.0 {
        oe
    } else {
        oe + lambda * reg_info_of(st)
    }
}

fn gramian_reg(y: Result<Mat>) -> ExtReal {
    let Ok(y) = y else {
        return ExtReal::Infinite;
    };
    let Ok(s) = sym_eig(&y) else {
        return ExtReal::Infinite;
    };
    if !(s.min() > 1e-12 * s.max() && s.min() > 0.0) {
        return ExtReal::Infinite;
    }
    let yinv = s.map(|l| 1.0 / l);
    ExtReal::from_f64((y - yinv).norm_squared())
}

/// `‖Y − Y⁻¹‖_F²` for the controllability Gramian of `(A_K, B_K)`.
pub fn reg_ctrb(k: &Filter) -> ExtReal {
    gramian_reg(lyapcare::ctrb_gramian(&k.a_k, &k.b_k))
}

/// `‖Y − Y⁻¹‖_F²` for the observability Gramian of `(A_K, C_K)`.
pub fn reg_obs(k: &Filter) -> ExtReal {
    gramian_reg(lyapcare::obs_gramian(&k.a_k, &k.c_k))
}

/// `(S A_K S⁻¹, S B_K, C_K S⁻¹)`.
pub fn similarity(k: &Filter, s: &Mat) -> Result<Filter> {
    let n = k.n();
    if s.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "similarity transform must be {n}x{n}"
        )));
    }
    if !(condition_1(s) < 1e12) {
        return Err(Error::SingularMatrix);
    }
    let s_inv = solve_linear(s, &Mat::identity(n, n))?;
    Ok(Filter {
        a_k: s * &k.a_k * &s_inv,
        b_k: s * &k.b_k,
        c_k: &k.c_k * &s_inv,
    })
}

/// Similarity transform by `Σ22^{-1/2}` from an already computed state.
pub fn recondition_from(k: &Filter, st: &StationaryState) -> Result<Filter> {
    let s = spd_inv_sqrt(&st.sigma22).map_err(|_| Error::NotControllable)?;
    similarity(k, &s).map_err(|e| match e {
        Error::SingularMatrix => Error::NotControllable,
        e => e,
    })
}

/// Equivalent realization with `Σ22 = I`.
pub fn recondition(inst: &OEInstance, k: &Filter) -> Result<Filter> {
    let st = stationary(inst, k)?;
    recondition_from(k, &st)
}

/// The Kalman filter `(A − L⋆ C, L⋆, G)` with its Riccati solution.
pub fn kalman(inst: &OEInstance) -> Result<(Filter, RiccatiSolution)> {
    inst.check_dims()?;
    let sol = lyapcare::care(&inst.a, &inst.c, &inst.w1, &inst.w2)?;
    let k = Filter {
        a_k: sol.closed_loop.clone(),
        b_k: sol.l.clone(),
        c_k: inst.g.clone(),
    };
    Ok((k, sol))
}

/// `(L_OE(K) − L_OE(K⋆)) / L_OE(K⋆)`, not clamped at zero.
pub fn normalized_suboptimality(inst: &OEInstance, k: &Filter) -> Result<f64> {
    let (kstar, _) = kalman(inst)?;
    let opt = loss_oe(inst, &kstar).to_f64();
    if !(opt > 0.0) {
        return Err(Error::Config("optimal loss must be positive".into()));
    }
    Ok(subopt_against(opt, loss_oe(inst, k)))
}

/// Normalized suboptimality against a known optimal loss.
pub fn subopt_against(opt: f64, loss: ExtReal) -> f64 {
    (loss.to_f64() - opt) / opt
}

/// Brockett-region label of a minimal second-order SISO transfer function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionClass {
    /// Real poles, both residues positive.
    Region1,
    /// Complex poles, or real poles with residues of opposite sign.
    Region2,
    /// Real poles, both residues negative.
    Region3,
    /// Repeated pole or pole-zero cancellation.
    Degenerate,
}

/// Classifies `C_K (sI − A_K)⁻¹ B_K` for a SISO second-order filter.
///
/// With distinct poles `λ1, λ2` the residues are `N(λi) / (λi − λj)` where
/// `N(s) = C_K adj(sI − A_K) B_K`.
pub fn region_classify_with(k: &Filter, th: &Thresholds) -> Result<RegionClass> {
    if k.a_k.shape() != (2, 2) || k.b_k.shape() != (2, 1) || k.c_k.shape() != (1, 2) {
        return Err(Error::DimensionMismatch(
            "region classification needs n=2, m=1, p=1".into(),
        ));
    }
    let a = &k.a_k;
    let poles = gen_eig_values(a)?;
    let (l1, l2) = (poles[0], poles[1]);
    let scale = l1.norm().max(l2.norm()).max(1.0);
    if (l1 - l2).norm() <= th.pole_rel * scale {
        return Ok(RegionClass::Degenerate);
    }
    // N(s) = s·(C B) + C [[-a22, a12], [a21, -a11]] B
    let cb = (&k.c_k * &k.b_k)[(0, 0)];
    let adj0 = crate::numerics::from_rows(&[&[-a[(1, 1)], a[(0, 1)]], &[a[(1, 0)], -a[(0, 0)]]]);
    let c0 = (&k.c_k * adj0 * &k.b_k)[(0, 0)];
    let numer = |s: num_complex::Complex64| s * cb + c0;
    let r1 = numer(l1) / (l1 - l2);
    let r2 = numer(l2) / (l2 - l1);
    let tiny = th.residue_rel * k.b_k.norm() * k.c_k.norm();
    if r1.norm() <= tiny || r2.norm() <= tiny {
        return Ok(RegionClass::Degenerate);
    }
    if l1.im != 0.0 {
        return Ok(RegionClass::Region2);
    }
    Ok(match (r1.re > 0.0, r2.re > 0.0) {
        (true, true) => RegionClass::Region1,
        (false, false) => RegionClass::Region3,
        _ => RegionClass::Region2,
    })
}

pub fn region_classify(k: &Filter) -> Result<RegionClass> {
    region_classify_with(k, &Thresholds::default())
}
