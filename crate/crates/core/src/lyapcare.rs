//! Continuous Lyapunov / Sylvester equations, Gramians, and the continuous
//! algebraic Riccati equation of the Kalman filter.

use nalgebra::Schur;

use crate::error::{Assumption, Error, Result};
use crate::numerics::{
    inverse, is_hurwitz, kron, norm2, solve_linear, sym_eig, symmetrize, unvec, vec_of, Mat,
};

/// Stabilizing solution of the filtering Riccati equation.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Steady-state error covariance `P⋆`.
    pub p: Mat,
    /// Kalman gain `L⋆ = P⋆ Cᵀ W2⁻¹`.
    pub l: Mat,
    /// `A − L⋆ C`.
    pub closed_loop: Mat,
}

fn check_square(m: &Mat, n: usize, what: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be {n}x{n}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Solves `A X + X Aᵀ + Q = 0` for Hurwitz `A` (Bartels–Stewart on the real
/// Schur form of `A`).
pub fn clyap(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    check_square(a, n, "clyap A")?;
    check_square(q, n, "clyap Q")?;
    if !is_hurwitz(a) {
        return Err(Error::NotStable);
    }
    Ok(symmetrize(&lyap_schur(a, &symmetrize(q))?))
}

/// Bartels–Stewart without the stability check.
///
/// With `A = U T Uᵀ`, the transformed unknown `Y = Uᵀ X U` satisfies
/// `T Y + Y Tᵀ = F`, `F = -Uᵀ Q U`. Since `Tᵀ` is block lower triangular,
/// the column blocks of `Y` follow by back substitution from the last block.
fn lyap_schur(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if n == 1 {
        return Ok(Mat::from_element(1, 1, -q[(0, 0)] / (2.0 * a[(0, 0)])));
    }
    let (u, t) = Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or(Error::NotStable)?
        .unpack();
    let f = -(u.transpose() * q * &u);

    // diagonal blocks of the quasi-triangular factor
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && t[(j, j - 1)] != 0.0 {
            j += 1;
        }
        blocks.push((i, j));
        i = j;
    }

    let mut y = Mat::zeros(n, n);
    for &(s, e) in blocks.iter().rev() {
        let b = e - s;
        let mut rhs = f.columns(s, b).into_owned();
        if e < n {
            // subtract Σ_{k ≥ e} Y[:, k] T[J, k]ᵀ
            let tail = y.columns(e, n - e) * t.view((s, e), (b, n - e)).transpose();
            rhs -= tail;
        }
        let tjj = t.view((s, s), (b, b)).into_owned();
        let sys = kron(&Mat::identity(b, b), &t) + kron(&tjj, &Mat::identity(n, n));
        let sol = solve_linear(&sys, &vec_of(&rhs))?;
        y.columns_mut(s, b).copy_from(&unvec(&sol, n, b));
    }
    Ok(&u * y * u.transpose())
}

/// Solves the Sylvester equation `A X + X B + Q = 0` by Kronecker
/// vectorization. Intended for small systems.
pub fn sylvester(a: &Mat, b: &Mat, q: &Mat) -> Result<Mat> {
    let (n, m) = (a.nrows(), b.nrows());
    check_square(a, n, "sylvester A")?;
    check_square(b, m, "sylvester B")?;
    if q.nrows() != n || q.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "sylvester Q must be {n}x{m}, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let sys = kron(&Mat::identity(m, m), a) + kron(&b.transpose(), &Mat::identity(n, n));
    let sol = solve_linear(&sys, &(-vec_of(q)))?;
    Ok(unvec(&sol, n, m))
}

/// Controllability Gramian: `A Y + Y Aᵀ + B Bᵀ = 0`.
pub fn ctrb_gramian(a: &Mat, b: &Mat) -> Result<Mat> {
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch("ctrb_gramian: B rows != n".into()));
    }
    clyap(a, &(b * b.transpose()))
}

/// Observability Gramian: `Aᵀ Y + Y A + Cᵀ C = 0`.
pub fn obs_gramian(a: &Mat, c: &Mat) -> Result<Mat> {
    if c.ncols() != a.nrows() {
        return Err(Error::DimensionMismatch("obs_gramian: C cols != n".into()));
    }
    clyap(&a.transpose(), &(c.transpose() * c))
}

/// `A P + P Aᵀ − P Cᵀ W2⁻¹ C P + W1`.
pub fn riccati_residual(a: &Mat, c: &Mat, w1: &Mat, w2: &Mat, p: &Mat) -> Result<Mat> {
    let w2inv = inverse(w2)?;
    Ok(a * p + p * a.transpose() - p * c.transpose() * w2inv * c * p + w1)
}

const NEWTON_MAX_ITERS: usize = 200;
const NEWTON_TOL: f64 = 1e-12;

/// Stabilizing solution of `A P + P Aᵀ − P Cᵀ W2⁻¹ C P + W1 = 0` by
/// Newton–Kleinman iteration started from `L₀ = 0` (admissible since `A`
/// is Hurwitz).
pub fn care(a: &Mat, c: &Mat, w1: &Mat, w2: &Mat) -> Result<RiccatiSolution> {
    let n = a.nrows();
    let m = c.nrows();
    check_square(a, n, "care A")?;
    check_square(w1, n, "care W1")?;
    check_square(w2, m, "care W2")?;
    if c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "care C must be {m}x{n}, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    if !is_hurwitz(a) {
        return Err(Error::AssumptionViolated(Assumption::Stability));
    }
    if sym_eig(w1)?.min() <= 0.0 || sym_eig(w2)?.min() <= 0.0 {
        return Err(Error::AssumptionViolated(Assumption::PositiveNoise));
    }
    if sym_eig(&obs_gramian(a, c)?)?.min() <= 1e-12 {
        return Err(Error::AssumptionViolated(Assumption::Observability));
    }

    let w2inv = symmetrize(&inverse(w2)?);
    let ct_w2inv = c.transpose() * &w2inv;
    let mut l = Mat::zeros(n, m);
    let mut p = Mat::zeros(n, n);
    for k in 0..NEWTON_MAX_ITERS {
        let acl = a - &l * c;
        let q = w1 + &l * w2 * l.transpose();
        let p_next = clyap(&acl, &q)
            .map_err(|e| Error::RiccatiFailure(format!("Newton step {k}: {e}")))?;
        let diff = (&p_next - &p).norm();
        let scale = p.norm();
        p = p_next;
        l = &p * &ct_w2inv;
        if k > 0 && diff <= NEWTON_TOL * scale {
            break;
        }
    }

    let closed_loop = a - &l * c;
    if !is_hurwitz(&closed_loop) {
        return Err(Error::RiccatiFailure("closed loop A - L C is not stable".into()));
    }
    let res = riccati_residual(a, c, w1, w2, &p)?;
    if norm2(&res) > 1e-8 * norm2(w1) {
        return Err(Error::RiccatiFailure(format!(
            "residual {:.3e} exceeds tolerance",
            norm2(&res)
        )));
    }
    Ok(RiccatiSolution { p, l, closed_loop })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{from_rows, spectral_abscissa};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference: `(I ⊗ A + A ⊗ I) vec(X) = −vec(Q)`.
    fn kron_oracle(a: &Mat, q: &Mat) -> Mat {
        let n = a.nrows();
        let i = Mat::identity(n, n);
        let sys = kron(&i, a) + kron(a, &i);
        let v = sys.lu().solve(&(-vec_of(q))).unwrap();
        unvec(&v, n, n)
    }

    fn random_hurwitz(rng: &mut impl Rng, n: usize) -> Mat {
        let r = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let shift = spectral_abscissa(&r).unwrap() + rng.random_range(0.1..1.0);
        r - Mat::identity(n, n) * shift
    }

    fn random_spd(rng: &mut impl Rng, n: usize) -> Mat {
        let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + Mat::identity(n, n) * 0.1
    }

    fn residual_ok(a: &Mat, q: &Mat, x: &Mat) -> bool {
        let res = (a * x + x * a.transpose() + q).norm();
        res <= 1e-10 * (2.0 * a.norm() * x.norm() + q.norm())
    }

    #[test]
    fn clyap_examples() {
        let a = -Mat::identity(2, 2);
        let x = clyap(&a, &(Mat::identity(2, 2) * 2.0)).unwrap();
        assert!((x - Mat::identity(2, 2)).abs().max() < 1e-14);
        let x = clyap(&a, &(Mat::identity(2, 2) * 3.0)).unwrap();
        assert!((x - Mat::identity(2, 2) * 1.5).abs().max() < 1e-14);
        assert!(matches!(
            clyap(&Mat::identity(2, 2), &Mat::identity(2, 2)),
            Err(Error::NotStable)
        ));
        assert!(matches!(
            clyap(&a, &Mat::identity(3, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn clyap_matches_kronecker_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let n = 2 + trial % 3;
            let a = random_hurwitz(&mut rng, n);
            let q = random_spd(&mut rng, n);
            let x = clyap(&a, &q).unwrap();
            let oracle = kron_oracle(&a, &q);
            assert!(residual_ok(&a, &q, &x), "trial {trial}");
            assert!((&x - &oracle).norm() <= 1e-9 * oracle.norm(), "trial {trial}");
            let min = sym_eig(&x).unwrap().min();
            assert!(min >= -1e-10 * x.norm());
        }
    }

    #[test]
    fn clyap_complex_and_larger_blocks() {
        // complex spectrum forces 2x2 Schur blocks
        let a = from_rows(&[&[-0.5, 3.0, 0.0], &[-3.0, -0.5, 1.0], &[0.0, 0.0, -2.0]]);
        let q = Mat::identity(3, 3);
        let x = clyap(&a, &q).unwrap();
        assert!(residual_ok(&a, &q, &x));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_hurwitz(&mut rng, 8);
        let q = random_spd(&mut rng, 8);
        let x = clyap(&a, &q).unwrap();
        assert!(residual_ok(&a, &q, &x));
    }

    #[test]
    fn lyapunov_duality() {
        // solution of the transposed equation is the observability-type dual
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let a = random_hurwitz(&mut rng, 3);
            let q = random_spd(&mut rng, 3);
            let x = clyap(&a.transpose(), &q).unwrap();
            let res = (a.transpose() * &x + &x * &a + &q).norm();
            assert!(res <= 1e-10 * (2.0 * a.norm() * x.norm() + q.norm()));
            // symmetric Q and X: the transpose of the equation is the same equation
            assert!((&x - x.transpose()).abs().max() == 0.0);
            let oracle = kron_oracle(&a.transpose(), &q);
            assert!((&x - &oracle).norm() <= 1e-9 * oracle.norm());
        }
    }

    #[test]
    fn sylvester_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_hurwitz(&mut rng, 3);
        let b = random_hurwitz(&mut rng, 2);
        let q = Mat::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let x = sylvester(&a, &b, &q).unwrap();
        assert!((&a * &x + &x * &b + &q).norm() < 1e-12);
    }

    #[test]
    fn gramians() {
        let a = -Mat::identity(2, 2);
        let g = ctrb_gramian(&a, &Mat::zeros(2, 1)).unwrap();
        assert_eq!(g.abs().max(), 0.0);

        for gamma in [0.5, 1.0, 10.0] {
            let a_bad = from_rows(&[&[-2.0, 0.0], &[gamma, -gamma]]);
            let b_bad = from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
            let g = ctrb_gramian(&a_bad, &b_bad).unwrap();
            assert!(sym_eig(&g).unwrap().min() > 0.0);
        }

        let a_opt = from_rows(&[&[-5.0, -4.0], &[0.0, -2.0]]);
        let b_opt = from_rows(&[&[4.0], &[0.0]]);
        let g = ctrb_gramian(&a_opt, &b_opt).unwrap();
        let s = sym_eig(&g).unwrap();
        assert!(s.min() <= 1e-10 * s.max());

        let o = obs_gramian(&a, &Mat::identity(2, 2)).unwrap();
        assert!((o - Mat::identity(2, 2) * 0.5).abs().max() < 1e-14);
    }

    #[test]
    fn care_scalar() {
        let one = |x: f64| Mat::from_element(1, 1, x);
        let sol = care(&one(-1.0), &one(1.0), &one(3.0), &one(1.0)).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.l[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.closed_loop[(0, 0)] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn care_opt_not_ctrb() {
        let a = from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]]);
        let c = from_rows(&[&[1.0, 1.0]]);
        let w1 = from_rows(&[&[48.0, -36.0], &[-36.0, 48.0]]);
        let w2 = Mat::identity(1, 1);
        let sol = care(&a, &c, &w1, &w2).unwrap();
        let p_ref = from_rows(&[&[16.0, -12.0], &[-12.0, 12.0]]);
        assert!((&sol.p - p_ref).abs().max() < 1e-8);
        assert!((&sol.l - from_rows(&[&[4.0], &[0.0]])).abs().max() < 1e-8);
        let acl_ref = from_rows(&[&[-5.0, -4.0], &[0.0, -2.0]]);
        assert!((&sol.closed_loop - acl_ref).abs().max() < 1e-8);
    }

    #[test]
    fn care_decoupled_copies() {
        let a = -Mat::identity(2, 2);
        let i = Mat::identity(2, 2);
        let sol = care(&a, &i, &(&i * 3.0), &i).unwrap();
        assert!((&sol.p - &i).abs().max() < 1e-12);
        assert!((&sol.l - &i).abs().max() < 1e-12);
    }

    #[test]
    fn care_assumption_errors() {
        let i = Mat::identity(2, 2);
        assert!(matches!(
            care(&i, &i, &i, &i),
            Err(Error::AssumptionViolated(Assumption::Stability))
        ));
        assert!(matches!(
            care(&(-&i), &i, &(-&i), &i),
            Err(Error::AssumptionViolated(Assumption::PositiveNoise))
        ));
        let c = from_rows(&[&[1.0, 0.0]]);
        assert!(matches!(
            care(&(-&i), &c, &i, &Mat::identity(1, 1)),
            Err(Error::AssumptionViolated(Assumption::Observability))
        ));
    }

    #[test]
    fn care_random_stabilizing_and_newton_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = 3;
            let a = random_hurwitz(&mut rng, n);
            let c = Mat::from_fn(2, n, |_, _| rng.random_range(-1.0..1.0));
            let w1 = random_spd(&mut rng, n);
            let w2 = random_spd(&mut rng, 2);
            let sol = care(&a, &c, &w1, &w2).unwrap();
            assert!(is_hurwitz(&sol.closed_loop));
            let res = riccati_residual(&a, &c, &w1, &w2, &sol.p).unwrap();
            assert!(res.norm() <= 1e-8 * w1.norm());
            // P is the Lyapunov solution for its own closed loop
            let q = &w1 + &sol.l * &w2 * sol.l.transpose();
            let p2 = clyap(&sol.closed_loop, &q).unwrap();
            assert!((&p2 - &sol.p).norm() <= 1e-9 * sol.p.norm());
            assert!(sym_eig(&sol.p).unwrap().min() > 0.0);
        }
    }
}
