//! Checks of the closed-form claims about the fixed example instances.

use serde::Serialize;

use crate::examples;
use crate::gradients::{grad_oe, hessian_min_eig, fd_step_hessian};
use crate::lyapcare::{care, ctrb_gramian};
use crate::model::{
    kalman, loss_oe, normalized_suboptimality, reg_info, region_classify, stationary, RegionClass,
};
use crate::numerics::{from_rows, singular_values, spectral_abscissa, sym_eig, Mat};
use crate::optimize::{run, Algorithm, OptimizerConfig};

/// How `measured` is compared with `target` and `tolerance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `|measured − target| ≤ tolerance`
    Near,
    /// `measured ≤ tolerance`
    AtMost,
    /// `measured > tolerance`
    Above,
    /// `measured < tolerance`
    Below,
    /// boolean outcome (`measured` is 1 or 0)
    Holds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub target: f64,
    pub tolerance: f64,
    pub relation: Relation,
    /// The claim being checked.
    pub reference: String,
}

impl CheckReport {
    fn new(name: String, measured: f64, target: f64, tolerance: f64, relation: Relation, reference: &str) -> Self {
        let passed = match relation {
            Relation::Near => (measured - target).abs() <= tolerance,
            Relation::AtMost => measured <= tolerance,
            Relation::Above => measured > tolerance,
            Relation::Below => measured < tolerance,
            Relation::Holds => measured == 1.0,
        };
        CheckReport {
            name,
            passed,
            measured,
            target,
            tolerance,
            relation,
            reference: reference.to_string(),
        }
    }

    pub fn near(name: impl Into<String>, measured: f64, target: f64, tol: f64, reference: &str) -> Self {
        Self::new(name.into(), measured, target, tol, Relation::Near, reference)
    }

    pub fn at_most(name: impl Into<String>, measured: f64, tol: f64, reference: &str) -> Self {
        Self::new(name.into(), measured, 0.0, tol, Relation::AtMost, reference)
    }

    pub fn above(name: impl Into<String>, measured: f64, bound: f64, reference: &str) -> Self {
        Self::new(name.into(), measured, bound, bound, Relation::Above, reference)
    }

    pub fn below(name: impl Into<String>, measured: f64, bound: f64, reference: &str) -> Self {
        Self::new(name.into(), measured, bound, bound, Relation::Below, reference)
    }

    pub fn holds(name: impl Into<String>, ok: bool, reference: &str) -> Self {
        let m = if ok { 1.0 } else { 0.0 };
        Self::new(name.into(), m, 1.0, 0.0, Relation::Holds, reference)
    }
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    (a - b).abs().max()
}

fn failed(name: &str, err: impl std::fmt::Display, reference: &str) -> CheckReport {
    CheckReport::holds(format!("{name} ({err})"), false, reference)
}

/// Zero filter on the decoupled two-state instance (with `ε = 1`).
pub fn verify_example1() -> Vec<CheckReport> {
    let inst = examples::example2_instance();
    let k = examples::example1_kbad(1.0);
    let reference = "the zero filter is a suboptimal stationary point";
    let mut out = Vec::new();
    match grad_oe(&inst, &k) {
        Ok(g) => out.push(CheckReport::at_most("example1: |grad L_OE(K_bad)|", g.norm(), 1e-10, reference)),
        Err(e) => out.push(failed("example1: grad", e, reference)),
    }
    match stationary(&inst, &k) {
        Ok(st) => {
            out.push(CheckReport::at_most(
                "example1: max|Sigma12|",
                st.sigma12.abs().max(),
                1e-12,
                "Sigma = blkdiag(Sigma11, 0)",
            ));
            out.push(CheckReport::at_most(
                "example1: max|Sigma22|",
                st.sigma22.abs().max(),
                1e-12,
                "Sigma = blkdiag(Sigma11, 0)",
            ));
        }
        Err(e) => out.push(failed("example1: stationary", e, reference)),
    }
    match normalized_suboptimality(&inst, &k) {
        Ok(s) => {
            out.push(CheckReport::above("example1: subopt_norm(K_bad)", s, 0.1, reference));
            out.push(CheckReport::near("example1: subopt_norm(K_bad) value", s, 0.5, 1e-10, "L_OE = 3 vs optimum 2"));
        }
        Err(e) => out.push(failed("example1: subopt", e, reference)),
    }
    out
}

/// Sigma12 of the controllable, non-informative stationary point.
pub fn example2_sigma12(gamma: f64) -> Mat {
    from_rows(&[&[0.5, gamma / (2.0 * (1.0 + gamma))], &[0.0, 0.0]])
}

/// Controllable but non-informative stationary points, one per `γ`.
pub fn verify_example2(gammas: &[f64]) -> Vec<CheckReport> {
    let inst = examples::example2_instance();
    let mut out = Vec::new();
    let mut losses = Vec::new();
    let mut hess = Vec::new();
    for &gamma in gammas {
        let k = examples::example2_kbad(gamma);
        let tag = |s: &str| format!("example2 gamma={gamma}: {s}");
        match spectral_abscissa(&k.a_k) {
            Ok(a) => out.push(CheckReport::below(tag("max Re eig(A_bad)"), a, 0.0, "A_bad is stable")),
            Err(e) => out.push(failed(&tag("A_bad"), e, "A_bad is stable")),
        }
        match ctrb_gramian(&k.a_k, &k.b_k).and_then(|y| sym_eig(&y)) {
            Ok(s) => out.push(CheckReport::above(
                tag("lambda_min(ctrb Gramian)/lambda_max"),
                s.min() / s.max(),
                1e-12,
                "K_bad is controllable",
            )),
            Err(e) => out.push(failed(&tag("ctrb Gramian"), e, "K_bad is controllable")),
        }
        match grad_oe(&inst, &k) {
            Ok(g) => out.push(CheckReport::at_most(tag("|grad L_OE(K_bad)|"), g.norm(), 1e-8, "K_bad is stationary")),
            Err(e) => out.push(failed(&tag("grad"), e, "K_bad is stationary")),
        }
        match stationary(&inst, &k) {
            Ok(st) => {
                out.push(CheckReport::at_most(
                    tag("max|Sigma12 - closed form|"),
                    max_abs_diff(&st.sigma12, &example2_sigma12(gamma)),
                    1e-10,
                    "Sigma12 = [[1/2, g/(2(1+g))], [0, 0]]",
                ));
                let sv = singular_values(&st.sigma12);
                out.push(CheckReport::at_most(
                    tag("sigma_min/sigma_max(Sigma12)"),
                    sv[1] / sv[0],
                    1e-10,
                    "rank(Sigma12) = 1",
                ));
                out.push(CheckReport::holds(
                    tag("R_info(K_bad) = inf"),
                    !reg_info(&inst, &k).is_finite(),
                    "K_bad is not informative",
                ));
            }
            Err(e) => out.push(failed(&tag("stationary"), e, "Sigma12 closed form")),
        }
        match normalized_suboptimality(&inst, &k) {
            Ok(s) => out.push(CheckReport::above(tag("subopt_norm(K_bad)"), s, 0.0, "K_bad is strictly suboptimal")),
            Err(e) => out.push(failed(&tag("subopt"), e, "K_bad is strictly suboptimal")),
        }
        losses.push(loss_oe(&inst, &k).to_f64());
        match hessian_min_eig(&inst, &k, 0.0, fd_step_hessian(&k)) {
            Ok(l) => {
                out.push(CheckReport::below(tag("lambda_min(Hessian)"), l, 0.0, "K_bad is a strict saddle"));
                hess.push(l);
            }
            Err(e) => {
                out.push(failed(&tag("Hessian"), e, "K_bad is a strict saddle"));
                hess.push(f64::NAN);
            }
        }
    }
    if !losses.is_empty() {
        let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(CheckReport::at_most(
            "example2: spread of L_OE(K_bad) over gamma",
            hi - lo,
            1e-10,
            "L_OE(K_bad) does not depend on gamma",
        ));
    }
    for (w, g) in hess.windows(2).zip(gammas.windows(2)) {
        out.push(CheckReport::holds(
            format!(
                "example2: |lambda_min| decreases from gamma={} ({:.3e}) to gamma={} ({:.3e})",
                g[0],
                w[0].abs(),
                g[1],
                w[1].abs()
            ),
            w[1].abs() < w[0].abs(),
            "the negative curvature vanishes as gamma grows",
        ));
    }
    out
}

/// Riccati solutions with known values, including an instance whose
/// optimal filter is not controllable.
pub fn verify_riccati_examples() -> Vec<CheckReport> {
    let mut out = Vec::new();
    let reference = "uncontrollable optimal filter";
    let inst = examples::opt_not_ctrb_instance();
    match kalman(&inst) {
        Ok((k, sol)) => {
            let p_ref = from_rows(&[&[16.0, -12.0], &[-12.0, 12.0]]);
            out.push(CheckReport::at_most("opt_not_ctrb: max|P - P_ref|", max_abs_diff(&sol.p, &p_ref), 1e-8, reference));
            out.push(CheckReport::at_most(
                "opt_not_ctrb: max|L - [4; 0]|",
                max_abs_diff(&sol.l, &from_rows(&[&[4.0], &[0.0]])),
                1e-8,
                reference,
            ));
            out.push(CheckReport::at_most(
                "opt_not_ctrb: max|A - LC - [[-5,-4],[0,-2]]|",
                max_abs_diff(&sol.closed_loop, &from_rows(&[&[-5.0, -4.0], &[0.0, -2.0]])),
                1e-8,
                reference,
            ));
            let mut ctrb = Mat::zeros(2, 2);
            ctrb.set_column(0, &k.b_k.column(0));
            ctrb.set_column(1, &(&k.a_k * &k.b_k).column(0));
            out.push(CheckReport::at_most(
                "opt_not_ctrb: max|[B AB] - [[4,-20],[0,0]]|",
                max_abs_diff(&ctrb, &from_rows(&[&[4.0, -20.0], &[0.0, 0.0]])),
                1e-8,
                reference,
            ));
            let sv = singular_values(&ctrb);
            out.push(CheckReport::at_most("opt_not_ctrb: sigma_min/sigma_max([B AB])", sv[1] / sv[0], 1e-10, "rank([B AB]) = 1"));
            match stationary(&inst, &k) {
                Ok(st) => {
                    let s_ref = from_rows(&[
                        &[24.0, -12.0, 8.0, 0.0],
                        &[-12.0, 12.0, 0.0, 0.0],
                        &[8.0, 0.0, 8.0, 0.0],
                        &[0.0, 0.0, 0.0, 0.0],
                    ]);
                    out.push(CheckReport::at_most(
                        "opt_not_ctrb: max|Sigma_K* - Sigma_ref|",
                        max_abs_diff(&st.sigma, &s_ref),
                        1e-6,
                        "Sigma_K* is rank deficient",
                    ));
                }
                Err(e) => out.push(failed("opt_not_ctrb: stationary", e, reference)),
            }
        }
        Err(e) => out.push(failed("opt_not_ctrb: kalman", e, reference)),
    }

    let one = |x: f64| Mat::from_element(1, 1, x);
    match care(&one(-1.0), &one(1.0), &one(3.0), &one(1.0)) {
        Ok(sol) => {
            out.push(CheckReport::near("scalar: p", sol.p[(0, 0)], 1.0, 1e-10, "p = 1"));
            out.push(CheckReport::near("scalar: l", sol.l[(0, 0)], 1.0, 1e-10, "(-2, 1, 1) is optimal"));
            out.push(CheckReport::near("scalar: a - lc", sol.closed_loop[(0, 0)], -2.0, 1e-10, "(-2, 1, 1) is optimal"));
        }
        Err(e) => out.push(failed("scalar: care", e, "p = 1")),
    }

    let inst = examples::example2_instance();
    let reference = "(-2 I, I, I) is optimal";
    match kalman(&inst) {
        Ok((k, sol)) => {
            let i2 = Mat::identity(2, 2);
            out.push(CheckReport::at_most("example2: max|P - I|", max_abs_diff(&sol.p, &i2), 1e-10, reference));
            out.push(CheckReport::at_most("example2: max|A_K* + 2I|", max_abs_diff(&k.a_k, &(-&i2 * 2.0)), 1e-10, reference));
            out.push(CheckReport::at_most("example2: max|B_K* - I|", max_abs_diff(&k.b_k, &i2), 1e-10, reference));
            out.push(CheckReport::near("example2: L_OE(K*)", loss_oe(&inst, &k).to_f64(), 2.0, 1e-10, "L_OE* = tr(P*)"));
            out.push(CheckReport::near("example2: R_info(K*)", reg_info(&inst, &k).to_f64(), 4.0, 1e-10, "Z* = Sigma11 - P* = I/2"));
        }
        Err(e) => out.push(failed("example2: kalman", e, reference)),
    }
    out
}

/// Iteration budgets for the runs in [`verify_peril`].
#[derive(Debug, Clone, Copy)]
pub struct PerilBudget {
    pub minimality_iters: usize,
    pub irpg_iters: usize,
}

impl Default for PerilBudget {
    fn default() -> Self {
        PerilBudget {
            minimality_iters: 5_000,
            irpg_iters: 100_000,
        }
    }
}

/// Brockett-region behaviour on the second-order SISO example.
pub fn verify_peril() -> Vec<CheckReport> {
    verify_peril_with(PerilBudget::default())
}

pub fn verify_peril_with(budget: PerilBudget) -> Vec<CheckReport> {
    let inst = examples::peril_instance();
    let k0 = examples::peril_k0();
    let mut out = Vec::new();
    let is = |r: crate::Result<RegionClass>, want: RegionClass| matches!(r, Ok(c) if c == want);
    out.push(CheckReport::holds(
        "peril: K0 in region 2",
        is(region_classify(&k0), RegionClass::Region2),
        "K0 lies in region 2",
    ));
    match kalman(&inst) {
        Ok((kstar, _)) => out.push(CheckReport::holds(
            "peril: K* in region 1",
            is(region_classify(&kstar), RegionClass::Region1),
            "K* lies in region 1",
        )),
        Err(e) => out.push(failed("peril: kalman", e, "K* lies in region 1")),
    }

    let reference = "minimality-regularized descent stays in region 2";
    let cfg = OptimizerConfig {
        max_iters: budget.minimality_iters,
        ..OptimizerConfig::with_algorithm(Algorithm::MinimalityGD)
    };
    match run(&inst, &k0, &cfg) {
        Ok(res) => {
            let regions = res.regions.unwrap_or_default();
            let trapped = !regions.is_empty() && regions.iter().all(|r| *r == RegionClass::Region2);
            let final_in_2 = is(region_classify(&res.final_filter), RegionClass::Region2);
            out.push(CheckReport::holds(
                format!("peril: minimality-gd iterates in region 2 ({} iters)", regions.len()),
                trapped && final_in_2,
                reference,
            ));
        }
        Err(e) => out.push(failed("peril: minimality-gd", e, reference)),
    }

    let reference = "IR-PG crosses to region 1 and converges";
    let cfg = OptimizerConfig {
        max_iters: budget.irpg_iters,
        ..OptimizerConfig::with_algorithm(Algorithm::IRPGBacktrack)
    };
    match run(&inst, &k0, &cfg) {
        Ok(res) => {
            out.push(CheckReport::holds(
                "peril: irpg-backtrack final filter in region 1",
                is(region_classify(&res.final_filter), RegionClass::Region1),
                reference,
            ));
            let s = normalized_suboptimality(&inst, &res.final_filter).unwrap_or(f64::INFINITY);
            out.push(CheckReport::below("peril: irpg-backtrack final subopt_norm", s, 1e-6, reference));
        }
        Err(e) => out.push(failed("peril: irpg-backtrack", e, reference)),
    }
    out
}

pub const EXAMPLE2_GAMMAS: [f64; 3] = [1.0, 10.0, 100.0];

/// The full verification suite.
pub fn verify_all() -> Vec<CheckReport> {
    let mut out = verify_example1();
    out.extend(verify_example2(&EXAMPLE2_GAMMAS));
    out.extend(verify_riccati_examples());
    out.extend(verify_peril());
    out
}

/// Human-readable PASS/FAIL table.
pub fn render_table(reports: &[CheckReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for r in reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        let bound = match r.relation {
            Relation::Near => format!("|x - {:e}| <= {:e}", r.target, r.tolerance),
            Relation::AtMost => format!("x <= {:e}", r.tolerance),
            Relation::Above => format!("x > {:e}", r.tolerance),
            Relation::Below => format!("x < {:e}", r.tolerance),
            Relation::Holds => "holds".to_string(),
        };
        s.push_str(&format!("{verdict}  {:<width$}  x = {:<24e} {bound}\n", r.name, r.measured));
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    s.push_str(&format!("{passed}/{} checks passed\n", reports.len()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_all_pass(reports: &[CheckReport]) {
        let failed: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{}", render_table(reports));
    }

    #[test]
    fn example1_checks() {
        assert_all_pass(&verify_example1());
    }

    #[test]
    fn example2_checks() {
        let r = verify_example2(&EXAMPLE2_GAMMAS);
        assert_all_pass(&r);
        assert!(r.iter().any(|c| c.name.contains("decreases")));
    }

    #[test]
    fn riccati_checks() {
        assert_all_pass(&verify_riccati_examples());
    }

    #[test]
    fn report_relations() {
        assert!(CheckReport::near("a", 1.0, 1.05, 0.1, "").passed);
        assert!(!CheckReport::at_most("b", 2.0, 1.0, "").passed);
        assert!(CheckReport::above("c", 2.0, 1.0, "").passed);
        assert!(!CheckReport::below("d", 0.0, 0.0, "").passed);
        assert!(!CheckReport::at_most("nan", f64::NAN, 1.0, "").passed);
        let t = render_table(&[CheckReport::holds("e", false, "")]);
        assert!(t.starts_with("FAIL") && t.contains("0/1"));
    }
}
