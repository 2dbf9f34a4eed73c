//! Policy-search optimizers: IR-PG (fixed step and backtracking), plain
//! gradient descent, gradient descent with reconditioning, and
//! minimality-regularized gradient descent.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::ExtReal;
use crate::gradients::{fd_gradient, fd_step_gradient, grad_oe_of, grad_total_of, Gradient};
use crate::model::{
    kalman, loss_oe_of, recondition_from, reg_ctrb, reg_info_of, reg_obs, region_classify_with,
    stationary_with, subopt_against, Filter, OEInstance, RegionClass, StationaryState, Thresholds,
};
use crate::numerics::{sym_eig, Mat};
use crate::small::{Ray, SmallInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Backtracking gradient descent on `L_OE`.
    #[serde(rename = "plain-gd")]
    PlainGD,
    /// As `PlainGD`, reconditioning before every step.
    #[serde(rename = "gd-recond")]
    GDRecondition,
    /// IR-PG with a fixed step.
    #[serde(rename = "irpg-fixed")]
    IRPGFixed,
    /// IR-PG with the conditioning-constrained backtracking line search.
    #[serde(rename = "irpg-backtrack")]
    IRPGBacktrack,
    /// Backtracking gradient descent on `L_OE + μ_c R_ctr + μ_o R_obs`.
    #[serde(rename = "minimality-gd")]
    MinimalityGD,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::PlainGD,
        Algorithm::GDRecondition,
        Algorithm::IRPGFixed,
        Algorithm::IRPGBacktrack,
        Algorithm::MinimalityGD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::PlainGD => "plain-gd",
            Algorithm::GDRecondition => "gd-recond",
            Algorithm::IRPGFixed => "irpg-fixed",
            Algorithm::IRPGBacktrack => "irpg-backtrack",
            Algorithm::MinimalityGD => "minimality-gd",
        }
    }

    fn reconditions(self) -> bool {
        matches!(
            self,
            Algorithm::GDRecondition | Algorithm::IRPGFixed | Algorithm::IRPGBacktrack
        )
    }

    fn regularized(self) -> bool {
        matches!(self, Algorithm::IRPGFixed | Algorithm::IRPGBacktrack)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    /// Informativity weight `λ` (IR-PG variants only).
    pub lambda: f64,
    pub mu_ctrb: f64,
    pub mu_obs: f64,
    /// Step size for `IRPGFixed`.
    pub eta: f64,
    /// Candidate steps `S_bkt`; must contain 0.
    pub backtrack_steps: Vec<f64>,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Terminate once more than this many consecutive steps fall below `step_tol`.
    pub step_tol_patience: usize,
    pub max_iters: usize,
    /// Drop `λ` to zero the first time a chosen step falls below `step_tol`.
    pub lambda_turnoff: bool,
    pub thresholds: ThresholdsConfig,
}

/// Serializable mirror of [`Thresholds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsConfig {
    pub info_rel: f64,
    pub ctrb_rel: f64,
    pub residue_rel: f64,
    pub pole_rel: f64,
}

impl From<ThresholdsConfig> for Thresholds {
    fn from(t: ThresholdsConfig) -> Self {
        Thresholds {
            info_rel: t.info_rel,
            ctrb_rel: t.ctrb_rel,
            residue_rel: t.residue_rel,
            pole_rel: t.pole_rel,
        }
    }
}

impl Default for ThresholdsConfig {
    fn default() -> Self {
        let t = Thresholds::default();
        ThresholdsConfig {
            info_rel: t.info_rel,
            ctrb_rel: t.ctrb_rel,
            residue_rel: t.residue_rel,
            pole_rel: t.pole_rel,
        }
    }
}

/// `{1, 1/2, …, 2⁻⁶⁰, 0}`.
pub fn default_backtrack_steps() -> Vec<f64> {
    (0..=60)
        .map(|i| 0.5f64.powi(i))
        .chain(std::iter::once(0.0))
        .collect()
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::IRPGBacktrack,
            lambda: 1e-4,
            mu_ctrb: 1e-2,
            mu_obs: 1e-2,
            eta: 1e-3,
            backtrack_steps: default_backtrack_steps(),
            grad_tol: 1e-8,
            step_tol: 1e-16,
            step_tol_patience: 3,
            max_iters: 100_000,
            lambda_turnoff: false,
            thresholds: ThresholdsConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        OptimizerConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and nonnegative");
        }
        if !(self.mu_ctrb >= 0.0 && self.mu_obs >= 0.0) {
            return bad("minimality weights must be nonnegative");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !self.backtrack_steps.contains(&0.0) {
            return bad("backtrack steps must contain 0");
        }
        if self.backtrack_steps.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("backtrack steps must be finite and nonnegative");
        }
        if !(self.grad_tol > 0.0 && self.step_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    GradTol,
    StepTol,
    MaxIters,
    InfeasibleStart,
    /// A numerical failure mid-run (e.g. reconditioning a filter whose
    /// `Σ22` lost rank).
    Breakdown,
}

/// Diagnostics for one iteration, evaluated at the iterate the step is
/// taken from (after reconditioning, where applicable).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss_oe: ExtReal,
    pub loss_reg: ExtReal,
    pub loss_total: ExtReal,
    pub grad_norm: f64,
    /// Chosen step; 0 when the run stopped on the gradient test.
    pub step: f64,
    pub sigma_min_12: f64,
    pub sigma_min_22: f64,
    pub subopt_norm: f64,
    /// `‖Σ22 − I‖_F` right after reconditioning.
    pub recond_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub records: Vec<IterationRecord>,
    pub final_filter: Filter,
    pub termination: Termination,
    /// Brockett region per record (second-order SISO filters, minimality runs only).
    pub regions: Option<Vec<RegionClass>>,
}

impl RunResult {
    pub fn iters(&self) -> usize {
        self.records.len()
    }
}

/// What the line search minimizes.
#[derive(Debug, Clone, Copy)]
enum Objective {
    /// `L_OE + λ R_info`, optionally constrained to `½ I ⪯ Σ22 ⪯ 3/2 I`.
    Info { lambda: f64, constrained: bool },
    /// `L_OE + μ_c R_ctr + μ_o R_obs`.
    Minimality { mu_ctrb: f64, mu_obs: f64 },
}

impl Objective {
    fn plain(self) -> Option<(f64, bool)> {
        match self {
            Objective::Info { lambda, constrained } => Some((lambda, constrained)),
            Objective::Minimality { mu_ctrb, mu_obs } if mu_ctrb == 0.0 && mu_obs == 0.0 => {
                Some((0.0, false))
            }
            Objective::Minimality { .. } => None,
        }
    }
}

/// Shared per-run context: cached `Σ11`, thresholds, and the optimal loss.
struct Context<'a> {
    inst: &'a OEInstance,
    sigma11: Mat,
    th: Thresholds,
    small: Option<SmallInstance>,
    opt_loss: f64,
}

impl<'a> Context<'a> {
    fn new(inst: &'a OEInstance, th: Thresholds) -> Result<Self> {
        inst.check_dims()?;
        let sigma11 = inst.sigma11()?;
        let (kstar, _) = kalman(inst)?;
        let st = stationary_with(inst, &kstar, &sigma11, &th)?;
        let opt_loss = loss_oe_of(inst, &kstar, &st);
        Ok(Context {
            inst,
            small: SmallInstance::new(inst, &sigma11, th),
            sigma11,
            th,
            opt_loss,
        })
    }

    fn state(&self, k: &Filter) -> Result<StationaryState> {
        stationary_with(self.inst, k, &self.sigma11, &self.th)
    }

    fn recondition(&self, k: &Filter) -> Result<(Filter, StationaryState)> {
        let st = self.state(k)?;
        let kr = recondition_from(k, &st)?;
        let st = self.state(&kr)?;
        Ok((kr, st))
    }

    fn minimality_penalty(&self, k: &Filter, mu_ctrb: f64, mu_obs: f64) -> ExtReal {
        reg_ctrb(k).weighted(mu_ctrb) + reg_obs(k).weighted(mu_obs)
    }

    /// Objective value at a candidate, `None` when infeasible.
    fn value(&self, k: &Filter, obj: Objective) -> Option<f64> {
        let st = self.state(k).ok()?;
        let oe = ExtReal::from_f64(loss_oe_of(self.inst, k, &st));
        let total = match obj {
            Objective::Info { lambda, constrained } => {
                if constrained {
                    let s = sym_eig(&st.sigma22).ok()?;
                    if !(s.min() >= 0.5 && s.max() <= 1.5) {
                        return None;
                    }
                }
                oe + reg_info_of(&st).weighted(lambda)
            }
            Objective::Minimality { mu_ctrb, mu_obs } => {
                oe + self.minimality_penalty(k, mu_ctrb, mu_obs)
            }
        };
        total.finite()
    }

    fn ray_values(&self, ray: &Ray, steps: &[f64], lambda: f64, constrained: bool) -> Vec<Option<f64>> {
        let small = self.small.as_ref().unwrap();
        steps
            .iter()
            .map(|&eta| {
                let e = small.eval(ray, eta, lambda != 0.0)?;
                if constrained && !(e.s22_min >= 0.5 && e.s22_max <= 1.5) {
                    return None;
                }
                let total = if lambda == 0.0 {
                    e.loss_oe
                } else {
                    e.loss_oe + lambda * e.reg_info
                };
                total.is_finite().then_some(total)
            })
            .collect()
    }

    /// Backtracking over `steps`: the largest step whose objective is within
    /// `1e-14` (relative) of the smallest feasible objective value.
    fn line_search(&self, k: &Filter, dir: &Gradient, steps: &[f64], obj: Objective) -> f64 {
        let values: Vec<Option<f64>> = match (obj.plain(), &self.small) {
            (Some((lambda, constrained)), Some(small)) => {
                self.ray_values(&small.ray(k, dir), steps, lambda, constrained)
            }
            _ => steps.iter().map(|&eta| self.value(&k.step(dir, eta), obj)).collect(),
        };
        pick_step(steps, &values)
    }
}

/// Tie-broken argmin over feasible candidates; falls back to 0.
fn pick_step(steps: &[f64], values: &[Option<f64>]) -> f64 {
    let best = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return 0.0;
    }
    let cut = best + 1e-14 * best.abs();
    steps
        .iter()
        .zip(values)
        .filter(|(_, v)| matches!(v, Some(v) if *v <= cut))
        .map(|(s, _)| *s)
        .fold(0.0, f64::max)
}

/// One fixed-step IR-PG update: `recond(K) − η ∇L_λ(recond(K))`.
pub fn step_irpg_fixed(inst: &OEInstance, k: &Filter, lambda: f64, eta: f64) -> Result<Filter> {
    let ctx = Context::new(inst, Thresholds::default())?;
    let (kr, st) = irpg_precondition(&ctx, k)?;
    let g = grad_total_of(inst, &kr, &st, lambda)?;
    Ok(kr.step(&g, eta))
}

/// One backtracking IR-PG update; returns the new filter and the chosen step.
pub fn step_irpg_backtrack(
    inst: &OEInstance,
    k: &Filter,
    lambda: f64,
    steps: &[f64],
) -> Result<(Filter, f64)> {
    let ctx = Context::new(inst, Thresholds::default())?;
    let (kr, st) = irpg_precondition(&ctx, k)?;
    let g = grad_total_of(inst, &kr, &st, lambda)?;
    let eta = ctx.line_search(&kr, &g, steps, Objective::Info { lambda, constrained: true });
    Ok((kr.step(&g, eta), eta))
}

fn irpg_precondition(ctx: &Context, k: &Filter) -> Result<(Filter, StationaryState)> {
    let st = ctx.state(k)?;
    if !st.informative {
        return Err(Error::NotInformative);
    }
    let kr = recondition_from(k, &st)?;
    let st = ctx.state(&kr)?;
    Ok((kr, st))
}

/// Runs the configured algorithm from `init`.
pub fn run(inst: &OEInstance, init: &Filter, cfg: &OptimizerConfig) -> Result<RunResult> {
    cfg.validate()?;
    if cfg.algorithm == Algorithm::MinimalityGD {
        return run_minimality(inst, init, cfg);
    }
    let ctx = Context::new(inst, cfg.thresholds.into())?;
    init.check_dims(inst)?;
    let infeasible = || RunResult {
        records: Vec::new(),
        final_filter: init.clone(),
        termination: Termination::InfeasibleStart,
        regions: None,
    };
    let Ok(st0) = ctx.state(init) else {
        return Ok(infeasible());
    };
    if cfg.algorithm.regularized() && !(st0.informative && st0.controllable) {
        return Ok(infeasible());
    }

    let mut lambda = if cfg.algorithm.regularized() { cfg.lambda } else { 0.0 };
    let mut k = init.clone();
    let mut records = Vec::new();
    let mut small_steps = 0usize;
    let mut termination = Termination::MaxIters;

    for iter in 0..cfg.max_iters {
        let (kt, st, recond_residual) = if cfg.algorithm.reconditions() {
            match ctx.recondition(&k) {
                Ok((kr, st)) => {
                    let dev = (&st.sigma22 - Mat::identity(kr.n(), kr.n())).norm();
                    (kr, st, Some(dev))
                }
                Err(_) => {
                    termination = Termination::Breakdown;
                    break;
                }
            }
        } else {
            match ctx.state(&k) {
                Ok(st) => (k.clone(), st, None),
                Err(_) => {
                    termination = Termination::Breakdown;
                    break;
                }
            }
        };
        let Ok(grad) = grad_total_of(inst, &kt, &st, lambda) else {
            termination = Termination::Breakdown;
            break;
        };
        let oe = loss_oe_of(inst, &kt, &st);
        let reg = reg_info_of(&st);
        let mut rec = IterationRecord {
            iter,
            loss_oe: ExtReal::from_f64(oe),
            loss_reg: reg,
            loss_total: ExtReal::from_f64(oe) + reg.weighted(lambda),
            grad_norm: grad.norm(),
            step: 0.0,
            sigma_min_12: st.sigma_min_12(),
            sigma_min_22: st.sigma_min_22(),
            subopt_norm: subopt_against(ctx.opt_loss, ExtReal::from_f64(oe)),
            recond_residual,
        };
        k = kt;
        if !(rec.grad_norm >= cfg.grad_tol) {
            records.push(rec);
            termination = Termination::GradTol;
            break;
        }
        let eta = match cfg.algorithm {
            Algorithm::IRPGFixed => cfg.eta,
            alg => ctx.line_search(
                &k,
                &grad,
                &cfg.backtrack_steps,
                Objective::Info {
                    lambda,
                    constrained: alg == Algorithm::IRPGBacktrack,
                },
            ),
        };
        rec.step = eta;
        records.push(rec);
        k = k.step(&grad, eta);

        if eta < cfg.step_tol {
            if cfg.lambda_turnoff && lambda > 0.0 {
                lambda = 0.0;
                small_steps = 0;
                continue;
            }
            small_steps += 1;
            if small_steps > cfg.step_tol_patience {
                termination = Termination::StepTol;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    Ok(RunResult {
        records,
        final_filter: k,
        termination,
        regions: None,
    })
}

/// Gradient descent with backtracking on `L_OE + μ_c R_ctr + μ_o R_obs`.
/// Regularizer gradients are central finite differences.
pub fn run_minimality(inst: &OEInstance, init: &Filter, cfg: &OptimizerConfig) -> Result<RunResult> {
    cfg.validate()?;
    let ctx = Context::new(inst, cfg.thresholds.into())?;
    init.check_dims(inst)?;
    let (mu_ctrb, mu_obs) = (cfg.mu_ctrb, cfg.mu_obs);
    let obj = Objective::Minimality { mu_ctrb, mu_obs };
    let penalized = mu_ctrb != 0.0 || mu_obs != 0.0;
    let siso2 = inst.n() == 2 && inst.m() == 1 && inst.p() == 1;

    let feasible = ctx.state(init).is_ok() && ctx.minimality_penalty(init, mu_ctrb, mu_obs).is_finite();
    if !feasible {
        return Ok(RunResult {
            records: Vec::new(),
            final_filter: init.clone(),
            termination: Termination::InfeasibleStart,
            regions: siso2.then(Vec::new),
        });
    }

    let mut k = init.clone();
    let mut records = Vec::new();
    let mut regions = Vec::new();
    let mut small_steps = 0usize;
    let mut termination = Termination::MaxIters;

    for iter in 0..cfg.max_iters {
        let Ok(st) = ctx.state(&k) else {
            termination = Termination::Breakdown;
            break;
        };
        let Ok(mut grad) = grad_oe_of(inst, &k, &st) else {
            termination = Termination::Breakdown;
            break;
        };
        let penalty = ctx.minimality_penalty(&k, mu_ctrb, mu_obs);
        if penalized {
            let h = fd_step_gradient(&k);
            match fd_gradient(|f| ctx.minimality_penalty(f, mu_ctrb, mu_obs), &k, h) {
                Ok(g) => grad = &grad + &g,
                Err(_) => {
                    termination = Termination::Breakdown;
                    break;
                }
            }
        }
        let oe = loss_oe_of(inst, &k, &st);
        let mut rec = IterationRecord {
            iter,
            loss_oe: ExtReal::from_f64(oe),
            loss_reg: penalty,
            loss_total: ExtReal::from_f64(oe) + penalty,
            grad_norm: grad.norm(),
            step: 0.0,
            sigma_min_12: st.sigma_min_12(),
            sigma_min_22: st.sigma_min_22(),
            subopt_norm: subopt_against(ctx.opt_loss, ExtReal::from_f64(oe)),
            recond_residual: None,
        };
        if siso2 {
            regions.push(region_classify_with(&k, &ctx.th).unwrap_or(RegionClass::Degenerate));
        }
        if !(rec.grad_norm >= cfg.grad_tol) {
            records.push(rec);
            termination = Termination::GradTol;
            break;
        }
        let eta = ctx.line_search(&k, &grad, &cfg.backtrack_steps, obj);
        rec.step = eta;
        records.push(rec);
        k = k.step(&grad, eta);
        if eta < cfg.step_tol {
            small_steps += 1;
            if small_steps > cfg.step_tol_patience {
                termination = Termination::StepTol;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    Ok(RunResult {
        records,
        final_filter: k,
        termination,
        regions: siso2.then_some(regions),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;
    use crate::gradients::grad_total;
    use crate::model::{loss_total, recondition, stationary};

    fn cfg(alg: Algorithm, max_iters: usize) -> OptimizerConfig {
        OptimizerConfig {
            max_iters,
            ..OptimizerConfig::with_algorithm(alg)
        }
    }

    fn dist(a: &Filter, b: &Filter) -> f64 {
        (&a.a_k - &b.a_k).norm() + (&a.b_k - &b.b_k).norm() + (&a.c_k - &b.c_k).norm()
    }

    #[test]
    fn default_steps() {
        let s = default_backtrack_steps();
        assert_eq!(s.len(), 62);
        assert_eq!(s[0], 1.0);
        assert_eq!(s[60], 0.5f64.powi(60));
        assert_eq!(*s.last().unwrap(), 0.0);
        assert!(OptimizerConfig::default().validate().is_ok());
        let mut c = OptimizerConfig::default();
        c.backtrack_steps.pop();
        assert!(c.validate().is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_value(a).unwrap(), a.name());
        }
        assert!("gd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn pick_step_tie_breaks_to_largest() {
        let steps = [1.0, 0.5, 0.25, 0.0];
        assert_eq!(pick_step(&steps, &[None, Some(1.0), Some(1.0), Some(2.0)]), 0.5);
        assert_eq!(pick_step(&steps, &[Some(3.0), Some(1.0), Some(0.5), Some(2.0)]), 0.25);
        assert_eq!(pick_step(&steps, &[None, None, None, None]), 0.0);
    }

    #[test]
    fn fixed_step_at_optimum_barely_moves() {
        let inst = examples::example2_instance();
        let (kstar, _) = kalman(&inst).unwrap();
        let kr = recondition(&inst, &kstar).unwrap();
        let eta = 1e-2;
        let next = step_irpg_fixed(&inst, &kr, 1e-4, eta).unwrap();
        assert!(dist(&next, &kr) <= eta * 1e-6);
        let inst_p = examples::peril_instance();
        let same = step_irpg_fixed(&inst_p, &examples::peril_k0(), 1e-4, 0.0).unwrap();
        let expected = recondition(&inst_p, &examples::peril_k0()).unwrap();
        assert!(dist(&same, &expected) <= 1e-10 * expected.norm());
    }

    #[test]
    fn fixed_step_descends() {
        let inst = examples::peril_instance();
        let k = recondition(&inst, &examples::peril_k0()).unwrap();
        let next = step_irpg_fixed(&inst, &k, 1e-4, 1e-4).unwrap();
        assert!(loss_total(&inst, &next, 1e-4).to_f64() < loss_total(&inst, &k, 1e-4).to_f64());
    }

    #[test]
    fn fixed_step_rejects_non_informative() {
        let inst = examples::example2_instance();
        assert!(matches!(
            step_irpg_fixed(&inst, &examples::example2_kbad(1.0), 1e-4, 1e-3),
            Err(Error::NotInformative)
        ));
    }

    #[test]
    fn backtrack_step_never_increases_loss() {
        let inst = examples::peril_instance();
        let k = examples::peril_k0();
        let (next, eta) = step_irpg_backtrack(&inst, &k, 1e-4, &default_backtrack_steps()).unwrap();
        assert!(eta > 0.0);
        let before = loss_total(&inst, &k, 1e-4).to_f64();
        assert!(loss_total(&inst, &next, 1e-4).to_f64() <= before);
        let s = sym_eig(&stationary(&inst, &next).unwrap().sigma22).unwrap();
        assert!(s.min() >= 0.5 && s.max() <= 1.5);
    }

    #[test]
    fn backtrack_excludes_ill_conditioned_candidates() {
        let inst = examples::peril_instance();
        let k = recondition(&inst, &examples::peril_k0()).unwrap();
        let g = grad_total(&inst, &k, 1e-4).unwrap();
        // find a step where Σ22 leaves the band while the loss is still finite
        let big = (0..40)
            .map(|i| 2f64.powi(-i))
            .find(|&eta| {
                let cand = k.step(&g, eta);
                match stationary(&inst, &cand) {
                    Ok(st) => {
                        let s = sym_eig(&st.sigma22).unwrap();
                        (s.max() > 1.5 || s.min() < 0.5) && loss_total(&inst, &cand, 1e-4).is_finite()
                    }
                    Err(_) => false,
                }
            })
            .expect("some step violates the conditioning band");
        let steps = [big, 0.0];
        let (_, eta) = step_irpg_backtrack(&inst, &k, 1e-4, &steps).unwrap();
        assert_eq!(eta, 0.0);
    }

    #[test]
    fn plain_gd_trapped_at_kbad() {
        let inst = examples::example2_instance();
        let res = run(&inst, &examples::example2_kbad(1.0), &cfg(Algorithm::PlainGD, 100)).unwrap();
        assert_eq!(res.termination, Termination::GradTol);
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.records[0].iter, 0);
        assert!(res.records[0].subopt_norm > 0.0);
    }

    #[test]
    fn max_iters_respected() {
        let inst = examples::peril_instance();
        for alg in [Algorithm::IRPGBacktrack, Algorithm::PlainGD, Algorithm::IRPGFixed] {
            let res = run(&inst, &examples::peril_k0(), &cfg(alg, 5)).unwrap();
            assert_eq!(res.records.len(), 5);
            assert_eq!(res.termination, Termination::MaxIters);
        }
    }

    #[test]
    fn infeasible_starts() {
        let inst = examples::example2_instance();
        let res = run(&inst, &examples::example2_kbad(1.0), &cfg(Algorithm::IRPGBacktrack, 10)).unwrap();
        assert_eq!(res.termination, Termination::InfeasibleStart);
        let unstable = Filter::new(Mat::identity(2, 2), Mat::identity(2, 2), Mat::identity(2, 2));
        let res = run(&inst, &unstable, &cfg(Algorithm::PlainGD, 10)).unwrap();
        assert_eq!(res.termination, Termination::InfeasibleStart);
    }

    #[test]
    fn irpg_converges_on_example2() {
        let inst = examples::example2_instance();
        let (kstar, _) = kalman(&inst).unwrap();
        let mut init = kstar.clone();
        init.a_k[(0, 1)] += 0.3;
        init.b_k[(1, 0)] -= 0.2;
        init.c_k[(0, 0)] += 0.4;
        let res = run(&inst, &init, &cfg(Algorithm::IRPGBacktrack, 20_000)).unwrap();
        let last = res.records.last().unwrap();
        assert!(last.subopt_norm <= 1e-6, "{:?} {}", res.termination, last.subopt_norm);
        for w in res.records.windows(2) {
            let (a, b) = (w[0].loss_total.to_f64(), w[1].loss_total.to_f64());
            assert!(b <= a + 1e-12 * a.abs());
        }
        for r in &res.records {
            assert!(r.recond_residual.unwrap() <= 1e-10);
        }
    }

    #[test]
    fn minimality_without_weights_matches_plain_gd() {
        let inst = examples::peril_instance();
        let k0 = examples::peril_k0();
        let plain = run(&inst, &k0, &cfg(Algorithm::PlainGD, 30)).unwrap();
        let mut c = cfg(Algorithm::MinimalityGD, 30);
        c.mu_ctrb = 0.0;
        c.mu_obs = 0.0;
        let mini = run(&inst, &k0, &c).unwrap();
        assert_eq!(plain.records.len(), mini.records.len());
        for (a, b) in plain.records.iter().zip(&mini.records) {
            assert_eq!((a.loss_oe, a.grad_norm, a.step), (b.loss_oe, b.grad_norm, b.step));
        }
        assert_eq!(plain.final_filter, mini.final_filter);
        assert_eq!(mini.regions.as_ref().unwrap().len(), 30);
    }

    #[test]
    fn runs_are_deterministic() {
        let inst = examples::peril_instance();
        let c = cfg(Algorithm::IRPGBacktrack, 50);
        let a = run(&inst, &examples::peril_k0(), &c).unwrap();
        let b = run(&inst, &examples::peril_k0(), &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lambda_turnoff_drops_regularizer() {
        let inst = examples::peril_instance();
        let mut c = cfg(Algorithm::IRPGBacktrack, 30);
        c.lambda_turnoff = true;
        c.step_tol = 10.0;
        let res = run(&inst, &examples::peril_k0(), &c).unwrap();
        let r = &res.records[1];
        assert_eq!(r.loss_total, r.loss_oe);
    }
}
