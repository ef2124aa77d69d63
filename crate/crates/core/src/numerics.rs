//! Dense complex linear algebra and quadrature helpers.
//!
//! Everything here works on small matrices (the system dimension `d` is a
//! handful) or on moderately sized Hermitian Gram matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type C = Complex64;
pub type CMat = DMatrix<C>;
pub type CVec = DVector<C>;

pub const IM: C = C { re: 0.0, im: 1.0 };

#[inline]
pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

/// Build a complex matrix from real row-major entries.
pub fn real_mat(rows: usize, cols: usize, data: &[f64]) -> CMat {
    assert_eq!(data.len(), rows * cols);
    CMat::from_row_iterator(rows, cols, data.iter().map(|&x| c(x, 0.0)))
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Spectral norm (largest singular value).
pub fn norm2(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// 2-norm condition number; `inf` for singular input.
pub fn condition_number(m: &CMat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Numerical rank with threshold `factor * sigma_max * 1e-10`.
pub fn numerical_rank(m: &CMat, factor: f64) -> usize {
    let s = singular_values(m);
    let smax = s.first().cloned().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    let tol = factor * smax * 1e-10;
    s.iter().filter(|&&x| x > tol).count()
}

/// Eigenvalues and (unit) eigenvectors of a general complex matrix.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<C>,
    pub vectors: CMat,
}

fn schur(m: &CMat) -> Result<(CMat, CMat)> {
    let s = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    Ok(s.unpack())
}

pub fn eigenvalues(m: &CMat) -> Result<Vec<C>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = schur(m)?;
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Eigen-decomposition from the complex Schur form; eigenvectors of the
/// triangular factor are obtained by back substitution.
pub fn eig(m: &CMat) -> Result<Eigen> {
    let n = m.nrows();
    let (q, t) = schur(m)?;
    let scale = t.norm().max(1e-100);
    let small = f64::EPSILON * scale;
    let mut y = CMat::zeros(n, n);
    for k in 0..n {
        let lk = t[(k, k)];
        y[(k, k)] = c(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = C::new(0.0, 0.0);
            for j in (i + 1)..=k {
                s += t[(i, j)] * y[(j, k)];
            }
            let mut den = t[(i, i)] - lk;
            if den.norm() < small || den.norm() == 0.0 {
                den = c(small, 0.0);
            }
            y[(i, k)] = -s / den;
        }
    }
    let mut v = &q * y;
    for k in 0..n {
        let nk = v.column(k).norm();
        if nk > 0.0 {
            v.column_mut(k).scale_mut(1.0 / nk);
        }
    }
    Ok(Eigen {
        values: (0..n).map(|i| t[(i, i)]).collect(),
        vectors: v,
    })
}

pub fn inverse(m: &CMat) -> Result<CMat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant.
pub fn expm(a: &CMat) -> CMat {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let id = identity(n);
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|x| x.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * c(2f64.powi(-s), 0.0);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let r = |x: f64| c(x, 0.0);
    let u_inner = &a6 * (&a6 * r(B[13]) + &a4 * r(B[11]) + &a2 * r(B[9]))
        + &a6 * r(B[7])
        + &a4 * r(B[5])
        + &a2 * r(B[3])
        + &id * r(B[1]);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * r(B[12]) + &a4 * r(B[10]) + &a2 * r(B[8]))
        + &a6 * r(B[6])
        + &a4 * r(B[4])
        + &a2 * r(B[2])
        + &id * r(B[0]);
    let p = &v + &u;
    let q = &v - &u;
    let mut res = q.lu().solve(&p).unwrap_or_else(|| CMat::from_element(n, n, c(f64::NAN, 0.0)));
    for _ in 0..s {
        res = &res * &res;
    }
    res
}

/// Eigenvector conditioning bound above which exponentials fall back to
/// scaling and squaring.
pub const EIG_COND_LIMIT: f64 = 1e8;

/// Reusable evaluator of `t -> exp(-t L)` for a fixed generator `L`.
#[derive(Clone, Debug)]
pub enum ExpGenerator {
    Diagonal { v: CMat, vinv: CMat, lambda: Vec<C> },
    Dense { gen: CMat },
}

impl ExpGenerator {
    pub fn new(gen: &CMat) -> Self {
        if let Ok(e) = eig(gen) {
            if condition_number(&e.vectors) < EIG_COND_LIMIT {
                if let Ok(vinv) = inverse(&e.vectors) {
                    return ExpGenerator::Diagonal {
                        v: e.vectors,
                        vinv,
                        lambda: e.values,
                    };
                }
            }
        }
        ExpGenerator::Dense { gen: gen.clone() }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, ExpGenerator::Diagonal { .. })
    }

    /// Largest value of `Re(-t lambda)` over the spectrum; used to detect
    /// overflow before exponentiating backwards in time.
    pub fn growth_exponent(&self, t: f64) -> f64 {
        let vals = match self {
            ExpGenerator::Diagonal { lambda, .. } => lambda.clone(),
            ExpGenerator::Dense { gen } => eigenvalues(gen).unwrap_or_default(),
        };
        vals.iter().map(|l| (-t * l).re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `exp(-t L)`.
    pub fn exp(&self, t: f64) -> CMat {
        match self {
            ExpGenerator::Diagonal { v, vinv, lambda } => {
                let mut vd = v.clone();
                for (j, l) in lambda.iter().enumerate() {
                    let e = (-t * l).exp();
                    for i in 0..vd.nrows() {
                        vd[(i, j)] *= e;
                    }
                }
                vd * vinv
            }
            ExpGenerator::Dense { gen } => expm(&(gen * c(-t, 0.0))),
        }
    }

    /// `exp(-t L^*)`, the adjoint propagator.
    pub fn exp_adjoint(&self, t: f64) -> CMat {
        self.exp(t).adjoint()
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = z;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite Gauss-Legendre rule on `[a, b]` with `panels` equal panels.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn gauss_panels(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        if panels == 0 || b <= a {
            return Quadrature { nodes, weights };
        }
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(lo + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Quadrature { nodes, weights }
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Outcome of a Hermitian positive-definite solve performed after symmetric
/// diagonal (Jacobi) equilibration.
#[derive(Clone, Debug)]
pub struct HermitianSolve {
    pub x: CMat,
    /// Condition number of the equilibrated matrix.
    pub cond: f64,
    /// Extreme eigenvalues of the equilibrated matrix.
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Eigen-factorisation of an equilibrated Hermitian matrix, reusable for many
/// right-hand sides.
#[derive(Clone, Debug)]
pub struct HermitianFactor {
    a: CMat,
    scale: Vec<f64>,
    u: CMat,
    lambda: Vec<f64>,
    pub cond: f64,
    pub min_eig: f64,
    pub max_eig: f64,
}

impl HermitianFactor {
    pub fn new(a: &CMat, cond_limit: f64, hint: &str) -> Result<Self> {
        let n = a.nrows();
        let mut scale = vec![0.0; n];
        for i in 0..n {
            let d = a[(i, i)].re;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::GramSingular {
                    cond: f64::INFINITY,
                    hint: format!("{hint} (zero diagonal entry {i})"),
                });
            }
            scale[i] = 1.0 / d.sqrt();
        }
        let mut s = a.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] *= scale[i] * scale[j];
            }
        }
        let s = (&s + s.adjoint()) * c(0.5, 0.0);
        let e = SymmetricEigen::new(s);
        let lambda: Vec<f64> = e.eigenvalues.iter().cloned().collect();
        let min_eig = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_eig = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cond = if min_eig > 0.0 { max_eig / min_eig } else { f64::INFINITY };
        if cond > cond_limit {
            return Err(Error::GramSingular {
                cond,
                hint: hint.to_string(),
            });
        }
        Ok(HermitianFactor {
            a: a.clone(),
            scale,
            u: e.eigenvectors,
            lambda,
            cond,
            min_eig,
            max_eig,
        })
    }

    fn apply_inverse(&self, b: &CMat) -> CMat {
        let mut y = b.clone();
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                y[(i, j)] *= self.scale[i];
            }
        }
        let mut z = self.u.adjoint() * y;
        for i in 0..z.nrows() {
            let inv = 1.0 / self.lambda[i];
            for j in 0..z.ncols() {
                z[(i, j)] *= inv;
            }
        }
        let mut x = &self.u * z;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                x[(i, j)] *= self.scale[i];
            }
        }
        x
    }

    /// Solve with two steps of iterative refinement.
    pub fn solve(&self, b: &CMat) -> CMat {
        let mut x = self.apply_inverse(b);
        for _ in 0..2 {
            let r = b - &self.a * &x;
            x += self.apply_inverse(&r);
        }
        x
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        let bm = CMat::from_column_slice(b.len(), 1, b.as_slice());
        CVec::from_column_slice(self.solve(&bm).as_slice())
    }
}

pub fn solve_hermitian(a: &CMat, b: &CMat, cond_limit: f64, hint: &str) -> Result<HermitianSolve> {
    let f = HermitianFactor::new(a, cond_limit, hint)?;
    Ok(HermitianSolve {
        x: f.solve(b),
        cond: f.cond,
        min_eig: f.min_eig,
        max_eig: f.max_eig,
    })
}

/// General square solve with row/column equilibration and refinement.
pub fn solve_general(a: &CMat, b: &CVec) -> Result<CVec> {
    let n = a.nrows();
    let mut cs = vec![1.0; n];
    for j in 0..n {
        let m = a.column(j).iter().map(|x| x.norm()).fold(0.0, f64::max);
        if m > 0.0 {
            cs[j] = 1.0 / m;
        }
    }
    let mut s = a.clone();
    for j in 0..n {
        for i in 0..n {
            s[(i, j)] *= cs[j];
        }
    }
    let lu = s.clone().lu();
    let solve = |r: &CVec| -> Result<CVec> {
        let y = lu
            .solve(r)
            .ok_or_else(|| Error::Numerical("singular stacked system".into()))?;
        Ok(CVec::from_iterator(n, (0..n).map(|j| y[j] * cs[j])))
    };
    let mut x = solve(b)?;
    for _ in 0..2 {
        let r = b - a * &x;
        x += solve(&r)?;
    }
    Ok(x)
}

/// Least-squares line fit; returns `(slope, intercept)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly).0
}

/// Blocks of a `d x d` matrix split at `d1`.
pub fn block(m: &CMat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> CMat {
    m.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for order in [1usize, 2, 5, 8, 16] {
            let (x, w) = gauss_legendre(order);
            for deg in 0..(2 * order) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "order {order} deg {deg}");
            }
        }
    }

    #[test]
    fn eig_reconstructs_matrix() {
        let m = CMat::from_row_slice(
            3,
            3,
            &[c(1.0, 2.0), c(0.0, 1.0), c(3.0, 0.0), c(0.5, 0.0), c(-1.0, 0.0), c(0.0, 0.3), c(2.0, 0.0), c(0.0, 0.0), c(0.0, -1.0)],
        );
        let e = eig(&m).unwrap();
        for (k, l) in e.values.iter().enumerate() {
            let v = e.vectors.column(k);
            assert!((&m * v - v * *l).norm() < 1e-12);
        }
    }

    #[test]
    fn expm_matches_scalar_and_nilpotent() {
        let a = real_mat(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a);
        assert!((e - real_mat(2, 2, &[1.0, 1.0, 0.0, 1.0])).norm() < 1e-14);
        let d = real_mat(2, 2, &[-30.0, 0.0, 0.0, 2.0]);
        let e = expm(&d);
        assert!((e[(0, 0)].re - (-30f64).exp()).abs() < 1e-20);
        assert!((e[(1, 1)].re - 2f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn exp_generator_paths_agree() {
        let g = CMat::from_row_slice(2, 2, &[c(3.0, 0.5), c(1.0, 0.0), c(-0.2, 0.0), c(0.0, 4.0)]);
        let diag = ExpGenerator::new(&g);
        assert!(diag.is_diagonal());
        let dense = ExpGenerator::Dense { gen: g.clone() };
        for t in [0.0, 0.1, 1.0, 3.0] {
            assert!((diag.exp(t) - dense.exp(t)).norm() < 1e-12);
        }
        let jordan = real_mat(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(!ExpGenerator::new(&jordan).is_diagonal());
    }

    #[test]
    fn hermitian_solve_recovers_solution() {
        let n = 6;
        let h = CMat::from_fn(n, n, |i, j| c(1.0 / (1.0 + i as f64 + j as f64), 0.0));
        let x = CMat::from_fn(n, 1, |i, _| c(i as f64, 1.0));
        let b = &h * &x;
        let s = solve_hermitian(&h, &b, 1e14, "hilbert").unwrap();
        assert!((&h * &s.x - &b).norm() < 1e-12 * b.norm());
        assert!(s.min_eig > 0.0);
    }

    #[test]
    fn rank_threshold() {
        let m = real_mat(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(numerical_rank(&m, 2.0), 1);
        assert_eq!(numerical_rank(&CMat::zeros(2, 2), 2.0), 0);
    }
}
