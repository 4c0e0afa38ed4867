//! Small dense kernels: sample statistics, SPD regularization and solves,
//! positive roots of the depressed quartic, log-gamma.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

const SYMMETRY_TOL: f64 = 1e-10;

impl SymMatrix {
    /// Wraps `m` after checking it is square and symmetric to `1e-10`
    /// (relative to its largest entry). The stored matrix is exactly symmetrized.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(1.0);
        let n = m.nrows();
        for i in 0..n {
            for j in i + 1..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    pub fn with_added_diagonal(&self, eps: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += eps;
        }
        SymMatrix(m)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, Dyn> {
        SymmetricEigen::new(self.0.clone())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0.symmetric_eigenvalues().min()
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.0.clone()).ok_or_else(|| Error::NotPositiveDefinite {
            min_eigenvalue: self.min_eigenvalue(),
        })
    }
}

/// Sample mean and biased (divide-by-count) sample covariance.
pub fn sample_stats(vectors: &[&[f64]]) -> Result<(DVector<f64>, SymMatrix)> {
    let count = vectors.len();
    if count < 2 {
        return Err(Error::TooFewSamples(count));
    }
    let n = vectors[0].len();
    if vectors.iter().any(|v| v.len() != n) {
        return Err(Error::InvalidArgument("sample vectors differ in length".into()));
    }
    let mut mean = DVector::zeros(n);
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    mean /= count as f64;
    let mut centered = DMatrix::zeros(n, count);
    for (j, v) in vectors.iter().enumerate() {
        for i in 0..n {
            centered[(i, j)] = v[i] - mean[i];
        }
    }
    let cov = (&centered * centered.transpose()) / count as f64;
    Ok((mean, SymMatrix::symmetrized(cov)))
}

/// `cov + epsilon·I`, verified by a Cholesky factorization.
pub fn regularize_spd(cov: &SymMatrix, epsilon: f64) -> Result<SymMatrix> {
    let reg = cov.with_added_diagonal(epsilon);
    reg.cholesky()?;
    Ok(reg)
}

pub fn spd_solve(a: &SymMatrix, b: &DVector<f64>) -> Result<DVector<f64>> {
    check_rhs(a, b.nrows())?;
    Ok(a.cholesky()?.solve(b))
}

pub fn spd_solve_matrix(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rhs(a, b.nrows())?;
    Ok(a.cholesky()?.solve(b))
}

fn check_rhs(a: &SymMatrix, rows: usize) -> Result<()> {
    if rows != a.dim() {
        return Err(Error::InvalidArgument(format!(
            "right-hand side has {rows} rows, matrix is {}x{}",
            a.dim(),
            a.dim()
        )));
    }
    Ok(())
}

/// `a4·w⁴ + a2·w² + a1·w + a0` with `a4 > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartic {
    pub a4: f64,
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
}

impl Quartic {
    pub fn new(a4: f64, a2: f64, a1: f64, a0: f64) -> Result<Self> {
        if !(a4 > 0.0) || ![a4, a2, a1, a0].iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quartic needs finite coefficients and a4 > 0, got ({a4}, {a2}, {a1}, {a0})"
            )));
        }
        Ok(Quartic { a4, a2, a1, a0 })
    }

    #[inline]
    pub fn eval(&self, w: f64) -> f64 {
        let w2 = w * w;
        (self.a4 * w2 + self.a2) * w2 + self.a1 * w + self.a0
    }

    #[inline]
    pub fn derivative(&self, w: f64) -> f64 {
        (4.0 * self.a4 * w * w + 2.0 * self.a2) * w + self.a1
    }

    /// Residual tolerance at `w`: `1e-8 · max|coef| · max(1, w⁴)`.
    pub fn tolerance(&self, w: f64) -> f64 {
        let scale = [self.a4, self.a2, self.a1, self.a0]
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()));
        1e-8 * scale * (w.powi(4)).max(1.0)
    }

    /// Positive real roots in ascending order.
    ///
    /// The derivative is a depressed cubic, so its real roots split `(0, B]`
    /// (Cauchy bound `B`) into intervals on which the quartic is monotone.
    /// Each interval with a sign change holds exactly one root, found by
    /// Newton iteration safeguarded with bisection. A critical point where
    /// the quartic vanishes within tolerance is reported as a double root.
    pub fn positive_roots(&self) -> Vec<f64> {
        let bound =
            1.0 + [self.a2, self.a1, self.a0].iter().fold(0.0f64, |m, c| m.max(c.abs())) / self.a4;
        let mut breaks = vec![0.0];
        breaks.extend(
            self.critical_points()
                .into_iter()
                .filter(|&t| t > 0.0 && t < bound),
        );
        breaks.push(bound);

        let mut roots: Vec<f64> = Vec::new();
        for pair in breaks.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let (flo, fhi) = (self.eval(lo), self.eval(hi));
            if lo > 0.0 && flo.abs() <= self.tolerance(lo) {
                roots.push(lo);
                continue;
            }
            if flo * fhi < 0.0 {
                roots.push(self.bracketed_root(lo, hi, flo));
            }
        }
        roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
        roots
    }

    /// Real roots of `4a4 w³ + 2a2 w + a1`, each polished by Newton steps.
    fn critical_points(&self) -> Vec<f64> {
        let p = self.a2 / (2.0 * self.a4);
        let q = self.a1 / (4.0 * self.a4);
        let mut pts = depressed_cubic_roots(p, q);
        for t in pts.iter_mut() {
            for _ in 0..4 {
                let g = (*t * *t + p) * *t + q;
                let dg = 3.0 * *t * *t + p;
                if dg == 0.0 {
                    break;
                }
                let next = *t - g / dg;
                if !next.is_finite() {
                    break;
                }
                *t = next;
            }
        }
        pts.sort_by(f64::total_cmp);
        pts
    }

    fn bracketed_root(&self, mut lo: f64, mut hi: f64, flo: f64) -> f64 {
        let lo_sign = flo.signum();
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let fx = self.eval(x);
            if fx == 0.0 {
                return x;
            }
            if fx.signum() == lo_sign {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 2.0 * f64::EPSILON * hi.abs() {
                break;
            }
            let d = self.derivative(x);
            let newton = x - fx / d;
            x = if d != 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        // the last Newton iterate may sit at a bracket end; take the better one
        [x, lo, hi]
            .into_iter()
            .min_by(|a, b| self.eval(*a).abs().total_cmp(&self.eval(*b).abs()))
            .unwrap()
    }
}

/// Real roots of `t³ + p t + q`.
fn depressed_cubic_roots(p: f64, q: f64) -> Vec<f64> {
    if p == 0.0 {
        return vec![(-q).cbrt()];
    }
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        // choose the sign that avoids cancellation
        let u = if q > 0.0 { (-q / 2.0 - s).cbrt() } else { (-q / 2.0 + s).cbrt() };
        let t = if u != 0.0 { u - p / (3.0 * u) } else { 0.0 };
        vec![t]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        (0..3)
            .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    }
}

pub fn quartic_positive_roots(q: &Quartic) -> Vec<f64> {
    q.positive_roots()
}

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidArgument(format!("log_gamma needs x > 0, got {x}")));
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(count: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| (0..n).map(|_| rng.random_range(-50.0..200.0)).collect())
            .collect()
    }

    fn random_spd(n: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrized(&a * a.transpose() + DMatrix::identity(n, n) * 0.5)
    }

    #[test]
    fn stats_of_identical_vectors() {
        let v = [1.0, -2.0, 3.5];
        let (mean, cov) = sample_stats(&[&v, &v, &v]).unwrap();
        assert_eq!(mean.as_slice(), &v);
        assert_eq!(cov.as_matrix().amax(), 0.0);
    }

    #[test]
    fn stats_hand_case() {
        let (mean, cov) = sample_stats(&[&[0.0], &[2.0]]).unwrap();
        assert_eq!(mean[0], 1.0);
        assert_eq!(cov.as_matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn stats_need_two_vectors() {
        assert!(matches!(sample_stats(&[&[1.0]]), Err(Error::TooFewSamples(1))));
    }

    #[test]
    fn stats_match_two_pass_loop() {
        let vs = random_vectors(40, 64, 1);
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let (mean, cov) = sample_stats(&refs).unwrap();
        let k = vs.len() as f64;
        let mut m = vec![0.0; 64];
        for v in &vs {
            for i in 0..64 {
                m[i] += v[i];
            }
        }
        for x in m.iter_mut() {
            *x /= k;
        }
        for i in 0..64 {
            assert!((mean[i] - m[i]).abs() <= 1e-12 * m[i].abs().max(1.0));
            for j in 0..64 {
                let mut c = 0.0;
                for v in &vs {
                    c += (v[i] - m[i]) * (v[j] - m[j]);
                }
                c /= k;
                let got = cov.as_matrix()[(i, j)];
                assert!((got - c).abs() <= 1e-12 * c.abs().max(1.0), "({i},{j}) {got} vs {c}");
            }
        }
        assert!(cov.min_eigenvalue() > -1e-10 * cov.trace());
    }

    #[test]
    fn regularize_zero_and_rank_one() {
        let z = regularize_spd(&SymMatrix::zeros(3), 1e-3).unwrap();
        assert_eq!(z, SymMatrix::identity(3).scaled(1e-3));

        let v = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let r1 = SymMatrix::new(&v * v.transpose()).unwrap();
        let reg = regularize_spd(&r1, 0.5).unwrap();
        let mut ev: Vec<f64> = reg.as_matrix().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!((ev[0] - 0.5).abs() < 1e-12);
        assert!((ev[1] - 0.5).abs() < 1e-12);
        assert!((ev[2] - 9.5).abs() < 1e-12);
    }

    #[test]
    fn regularize_rank_deficient_sample_cov() {
        let vs = random_vectors(40, 64, 2);
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let (_, cov) = sample_stats(&refs).unwrap();
        assert!(cov.cholesky().is_err() || cov.min_eigenvalue() < 1e-6);
        let sigma2 = 400.0;
        assert!(regularize_spd(&cov, 1e-3 * sigma2).is_ok());
    }

    #[test]
    fn regularize_reports_min_eigenvalue() {
        let m = SymMatrix::from_diagonal(&[1.0, -2.0]);
        match regularize_spd(&m, 0.5) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => {
                assert!((min_eigenvalue + 1.5).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        assert_eq!(spd_solve(&SymMatrix::identity(3), &b).unwrap(), b);
        let d = SymMatrix::from_diagonal(&[2.0, 4.0, 8.0]);
        let x = spd_solve(&d, &b).unwrap();
        for (got, e) in x.iter().zip([1.5, -0.25, 0.25]) {
            assert!((got - e).abs() < 1e-15);
        }
    }

    #[test]
    fn solve_rejects_indefinite_and_mismatch() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(spd_solve(&m, &DVector::from_vec(vec![1.0, 1.0])).is_err());
        assert!(spd_solve(&SymMatrix::identity(2), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn solve_random_spd_residual() {
        for seed in 0..20 {
            let a = random_spd(64, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let b = DVector::from_fn(64, |_, _| rng.random_range(-10.0..10.0));
            let x = spd_solve(&a, &b).unwrap();
            let r = a.as_matrix() * &x - &b;
            assert!(r.norm() <= 1e-8 * b.norm());
            let bm = DMatrix::from_fn(64, 3, |_, _| rng.random_range(-1.0..1.0));
            let xm = spd_solve_matrix(&a, &bm).unwrap();
            assert!((a.as_matrix() * xm - &bm).norm() <= 1e-8 * bm.norm());
        }
    }

    #[test]
    fn symmetric_check() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.1, 1.0]);
        assert!(SymMatrix::new(m).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn quartic_unit() {
        let q = Quartic::new(1.0, 0.0, 0.0, -1.0).unwrap();
        let roots = q.positive_roots();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quartic_rejects_nonpositive_leading() {
        assert!(Quartic::new(0.0, 1.0, 1.0, -1.0).is_err());
        assert!(Quartic::new(-1.0, 1.0, 1.0, -1.0).is_err());
    }

    /// Bisection to full precision on a sign-change bracket.
    fn bisect(q: &Quartic, mut lo: f64, mut hi: f64) -> f64 {
        let slo = q.eval(lo).signum();
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if q.eval(mid).signum() == slo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quartic_matches_bisection_oracle() {
        // β w⁴ + (1 − α + n/2) w² + (c/2) w − d/2, α = 0.5, n = 64, c = 2, d = 8
        let q = Quartic::new(1.2533, 32.5, 1.0, -4.0).unwrap();
        let roots = q.positive_roots();
        assert_eq!(roots.len(), 1);
        let oracle = bisect(&q, 0.0, 10.0);
        assert!((roots[0] - oracle).abs() <= 1e-12 * oracle);
        assert!((oracle - 0.335_082_855_329_135_5).abs() < 1e-12);
    }

    #[test]
    fn biquadratic_reduction() {
        let (a4, a2, a0) = (1.2533, 32.5, -4.0);
        let q = Quartic::new(a4, a2, 0.0, a0).unwrap();
        let w2 = (-a2 + (a2 * a2 - 4.0 * a4 * a0).sqrt()) / (2.0 * a4);
        let roots = q.positive_roots();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - w2.sqrt()).abs() <= 1e-12 * roots[0]);
    }

    #[test]
    fn quartic_multiple_positive_roots() {
        // (w−1)(w−2)(w−3)(w+6) = w⁴ − 25w² + 60w − 36
        let q = Quartic::new(1.0, -25.0, 60.0, -36.0).unwrap();
        let roots = q.positive_roots();
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([1.0, 2.0, 3.0]) {
            assert!((r - e).abs() < 1e-12);
        }
        // double root at 1: (w−1)²(w²+2w+3) = w⁴ + 0w³ + 0w² − 4w + 3
        let q = Quartic::new(1.0, 0.0, -4.0, 3.0).unwrap();
        let roots = q.positive_roots();
        assert_eq!(roots.len(), 1);
        assert!((roots[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quartic_without_positive_root() {
        let q = Quartic::new(1.0, 2.0, 3.0, 4.0).unwrap();
        assert!(q.positive_roots().is_empty());
    }

    #[test]
    fn quartic_random_residual_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100_000 {
            let a4 = 10f64.powf(rng.random_range(-3.0..3.0));
            let a2 = rng.random_range(-1.0..1.0) * 10f64.powf(rng.random_range(-3.0..4.0));
            let a1 = rng.random_range(-1.0..1.0) * 10f64.powf(rng.random_range(-3.0..9.0));
            let a0 = -10f64.powf(rng.random_range(-3.0..9.0));
            let q = Quartic::new(a4, a2, a1, a0).unwrap();
            let roots = q.positive_roots();
            assert!(!roots.is_empty(), "{q:?}");
            for w in roots {
                assert!(w > 0.0);
                assert!(q.eval(w).abs() <= q.tolerance(w), "{q:?} at {w}: {}", q.eval(w));
            }
        }
    }

    #[test]
    fn log_gamma_values() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-14);
        let half = 0.5 * std::f64::consts::PI.ln();
        assert!((log_gamma(0.5).unwrap() - half).abs() < 1e-13);
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-13);
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
    }

    #[test]
    fn log_gamma_recurrence() {
        // Γ(x + 1) = x Γ(x) over [0.1, 100]
        let mut x = 0.1;
        while x < 100.0 {
            let lhs = log_gamma(x + 1.0).unwrap();
            let rhs = x.ln() + log_gamma(x).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "x = {x}");
            x += 0.37;
        }
    }
}
