//! System matrices, hypothesis checks, minimal control time, Kalman rank and
//! cascade (Brunovski) changes of basis.

use std::f64::consts::PI;

use crate::numerics::{self, block, c, condition_number, inverse, numerical_rank, CMat};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Coefficients of the coupled system: `A`, `B = diag(0, D)`, `K`, `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemMatrices {
    pub d1: usize,
    pub d2: usize,
    pub a: CMat,
    /// Diffusion block of `B`.
    pub diff: CMat,
    pub k: CMat,
    /// Control matrix, `d x m`.
    pub m: CMat,
}

impl SystemMatrices {
    pub fn new(d1: usize, d2: usize, a: CMat, diff: CMat, k: CMat, m: CMat) -> Result<Self> {
        let d = d1 + d2;
        let check = |name: &str, mat: &CMat, r: usize, cols: Option<usize>| -> Result<()> {
            if mat.nrows() != r || cols.is_some_and(|cc| mat.ncols() != cc) {
                return Err(Error::Structural(format!(
                    "{name} has shape {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    r,
                    cols.map(|x| x.to_string()).unwrap_or_else(|| "m".into())
                )));
            }
            Ok(())
        };
        check("A", &a, d, Some(d))?;
        check("D", &diff, d2, Some(d2))?;
        check("K", &k, d, Some(d))?;
        check("M", &m, d, None)?;
        if m.ncols() == 0 {
            return Err(Error::Structural("M has no columns".into()));
        }
        Ok(SystemMatrices { d1, d2, a, diff, k, m })
    }

    pub fn dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn inputs(&self) -> usize {
        self.m.ncols()
    }

    /// `B = diag(0, D)`.
    pub fn b(&self) -> CMat {
        let d = self.dim();
        let mut b = CMat::zeros(d, d);
        b.view_mut((self.d1, self.d1), (self.d2, self.d2)).copy_from(&self.diff);
        b
    }

    fn h(&self) -> std::ops::Range<usize> {
        0..self.d1
    }

    fn p(&self) -> std::ops::Range<usize> {
        self.d1..self.dim()
    }

    /// Transport block `A'` (upper-left of `A`).
    pub fn a_prime(&self) -> CMat {
        block(&self.a, self.h(), self.h())
    }
    pub fn a12(&self) -> CMat {
        block(&self.a, self.h(), self.p())
    }
    pub fn a21(&self) -> CMat {
        block(&self.a, self.p(), self.h())
    }
    pub fn a22(&self) -> CMat {
        block(&self.a, self.p(), self.p())
    }
    pub fn k11(&self) -> CMat {
        block(&self.k, self.h(), self.h())
    }
    pub fn k12(&self) -> CMat {
        block(&self.k, self.h(), self.p())
    }
    pub fn k21(&self) -> CMat {
        block(&self.k, self.p(), self.h())
    }
    pub fn k22(&self) -> CMat {
        block(&self.k, self.p(), self.p())
    }
    pub fn m1(&self) -> CMat {
        block(&self.m, self.h(), 0..self.inputs())
    }
    pub fn m2(&self) -> CMat {
        block(&self.m, self.p(), 0..self.inputs())
    }

    /// Distinct eigenvalues of `A'` (real parts), merged within `tol`.
    pub fn transport_speeds(&self) -> Result<Vec<f64>> {
        let ev = numerics::eigenvalues(&self.a_prime())?;
        let mut re: Vec<f64> = ev.iter().map(|l| l.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out: Vec<f64> = Vec::new();
        let scale = 1.0 + re.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for x in re {
            match out.last() {
                Some(&l) if (x - l).abs() <= 1e-8 * scale => {}
                _ => out.push(x),
            }
        }
        Ok(out)
    }
}

/// Union of disjoint open arcs of the torus `[0, 2 pi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusSubset {
    /// Sorted, disjoint segments inside `[0, 2 pi]`. An arc crossing `2 pi`
    /// is stored as two segments.
    segs: Vec<(f64, f64)>,
}

impl TorusSubset {
    /// Arcs are `(start, end)` with `start < end`; they may wrap past `2 pi`.
    pub fn new(arcs: &[(f64, f64)]) -> Result<Self> {
        if arcs.is_empty() {
            return Err(Error::Structural("observation set has no arcs".into()));
        }
        let mut segs = Vec::new();
        for &(a, b) in arcs {
            let len = b - a;
            if !(len > 0.0) || !a.is_finite() || !b.is_finite() {
                return Err(Error::Structural(format!("arc ({a}, {b}) has non-positive length")));
            }
            if len >= TWO_PI {
                segs.push((0.0, TWO_PI));
                continue;
            }
            let s = a.rem_euclid(TWO_PI);
            let e = s + len;
            if e <= TWO_PI {
                segs.push((s, e));
            } else {
                segs.push((s, TWO_PI));
                segs.push((0.0, e - TWO_PI));
            }
        }
        segs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (s, e) in segs {
            if let Some(last) = merged.last_mut() {
                if s < last.1 - 1e-14 {
                    return Err(Error::Structural("arcs overlap".into()));
                }
                if s <= last.1 {
                    last.1 = last.1.max(e);
                    continue;
                }
            }
            merged.push((s, e));
        }
        Ok(TorusSubset { segs: merged })
    }

    pub fn arc(a: f64, b: f64) -> Result<Self> {
        Self::new(&[(a, b)])
    }

    pub fn full() -> Self {
        TorusSubset { segs: vec![(0.0, TWO_PI)] }
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segs
    }

    /// Arcs with pieces split at `2 pi` joined again.
    pub fn arcs(&self) -> Vec<(f64, f64)> {
        let mut v = self.segs.clone();
        if v.len() > 1 && v[0].0 == 0.0 && v[v.len() - 1].1 == TWO_PI {
            let first = v.remove(0);
            let last = v.last_mut().unwrap();
            last.1 = TWO_PI + first.1;
        }
        v
    }

    pub fn measure(&self) -> f64 {
        self.segs.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_full(&self) -> bool {
        self.measure() >= TWO_PI - 1e-14
    }

    pub fn contains(&self, x: f64) -> bool {
        let y = x.rem_euclid(TWO_PI);
        self.segs.iter().any(|&(a, b)| y > a && y < b)
    }

    /// Connected components of the complement as `(start, length)`.
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        if self.is_full() {
            return Vec::new();
        }
        let arcs = self.arcs();
        let n = arcs.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let end = arcs[i].1;
            let next = if i + 1 < n { arcs[i + 1].0 } else { arcs[0].0 + TWO_PI };
            let len = next - end;
            if len > 0.0 {
                out.push((end.rem_euclid(TWO_PI), len));
            }
        }
        out
    }

    /// Length of the largest hole, `0` for the whole torus.
    pub fn ell(&self) -> f64 {
        self.gaps().iter().map(|g| g.1).fold(0.0, f64::max)
    }

    /// Largest gap as `(start, length)`.
    pub fn largest_gap(&self) -> Option<(f64, f64)> {
        self.gaps()
            .into_iter()
            .fold(None, |acc: Option<(f64, f64)>, g| match acc {
                Some(a) if a.1 >= g.1 => Some(a),
                _ => Some(g),
            })
    }

    /// Each arc shrunk by `frac` of its length on both sides.
    pub fn shrink(&self, frac: f64) -> Self {
        if self.is_full() {
            return self.clone();
        }
        let arcs: Vec<(f64, f64)> = self
            .arcs()
            .into_iter()
            .map(|(a, b)| {
                let h = (b - a) * frac;
                (a + h, b - h)
            })
            .collect();
        TorusSubset::new(&arcs).expect("shrinking keeps arcs valid")
    }

    /// `int_omega e^{i m x} dx` in closed form.
    pub fn fourier_integral(&self, m: i64) -> crate::C {
        let mut s = c(0.0, 0.0);
        for &(a, b) in &self.segs {
            if m == 0 {
                s += c(b - a, 0.0);
            } else {
                let mf = m as f64;
                let ib = c(0.0, mf * b).exp();
                let ia = c(0.0, mf * a).exp();
                s += (ib - ia) / c(0.0, mf);
            }
        }
        s
    }

    pub fn indicator(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| if self.contains(x) { 1.0 } else { 0.0 }).collect()
    }
}

/// Per-hypothesis outcome of [`validate_system`].
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub h1: bool,
    pub h2: bool,
    pub h3: bool,
    pub h4: bool,
    pub a_prime_spectrum: Vec<crate::C>,
    pub a_prime_eigvec_cond: f64,
    pub diffusion_spectrum: Vec<crate::C>,
    pub diagnostics: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.h1 && self.h2 && self.h3 && self.h4
    }

    pub fn into_result(self) -> Result<Self> {
        if self.ok() {
            Ok(self)
        } else {
            Err(Error::Precondition(format!(
                "system fails hypotheses: {}",
                self.diagnostics.join("; ")
            )))
        }
    }
}

/// Eigenvector condition bound for the diagonalizability test of `A'`.
pub const DIAG_COND_LIMIT: f64 = 1e8;

pub fn validate_system(sys: &SystemMatrices) -> Result<ValidationReport> {
    let d = sys.dim();
    for (name, mat) in [("A", &sys.a), ("K", &sys.k)] {
        if mat.nrows() != d || mat.ncols() != d {
            return Err(Error::Structural(format!("{name} is not {d}x{d}")));
        }
    }
    if sys.diff.nrows() != sys.d2 || sys.diff.ncols() != sys.d2 || sys.m.nrows() != d {
        return Err(Error::Structural("D or M has inconsistent shape".into()));
    }
    let mut diag = Vec::new();
    let h1 = sys.d1 >= 1 && sys.d2 >= 1;
    if !h1 {
        diag.push(format!("need d1 >= 1 and d2 >= 1, got ({}, {})", sys.d1, sys.d2));
    }
    // B is assembled from D, so its block shape holds by construction.
    let h2 = true;
    let dspec = numerics::eigenvalues(&sys.diff)?;
    let h3 = dspec.iter().all(|l| l.re > 0.0);
    if !h3 {
        diag.push(format!("D has spectrum {dspec:?} not in the right half plane"));
    }
    let e = numerics::eig(&sys.a_prime())?;
    let scale = 1.0 + e.values.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let real = e.values.iter().all(|l| l.im.abs() <= 1e-10 * scale);
    let cond = condition_number(&e.vectors);
    let h4 = real && cond < DIAG_COND_LIMIT;
    if !real {
        diag.push(format!("A' has non-real eigenvalues {:?}", e.values));
    }
    if cond >= DIAG_COND_LIMIT {
        diag.push(format!("A' is not diagonalizable (eigenvector condition {cond:.3e})"));
    }
    Ok(ValidationReport {
        h1,
        h2,
        h3,
        h4,
        a_prime_spectrum: e.values,
        a_prime_eigvec_cond: cond,
        diffusion_spectrum: dspec,
        diagnostics: diag,
    })
}

/// `l(omega) / mu_*`, with `mu_* = min |Sp(A')|`; infinite when `mu_* = 0`.
pub fn minimal_time(sys: &SystemMatrices, omega: &TorusSubset) -> Result<f64> {
    if omega.segments().is_empty() {
        return Err(Error::Precondition("empty observation set".into()));
    }
    let ell = omega.ell();
    if ell == 0.0 {
        return Ok(0.0);
    }
    let speeds = sys.transport_speeds()?;
    let mu_star = speeds.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    if mu_star <= 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(ell / mu_star)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KalmanReport {
    pub rank: usize,
    pub satisfied: bool,
}

/// Krylov matrix `(M21 | M22 M21 | ... | M22^{d2-1} M21)`.
pub fn krylov_matrix(m22: &CMat, m21: &CMat) -> CMat {
    let d2 = m22.nrows();
    let d1 = m21.ncols();
    let mut out = CMat::zeros(d2, d1 * d2);
    let mut cur = m21.clone();
    for j in 0..d2 {
        out.view_mut((0, j * d1), (d2, d1)).copy_from(&cur);
        cur = m22 * cur;
    }
    out
}

pub fn kalman_rank(m22: &CMat, m21: &CMat) -> Result<KalmanReport> {
    let d2 = m22.nrows();
    if m22.ncols() != d2 || m21.nrows() != d2 {
        return Err(Error::Structural(format!(
            "Kalman pair shapes {}x{} and {}x{} are inconsistent",
            m22.nrows(),
            m22.ncols(),
            m21.nrows(),
            m21.ncols()
        )));
    }
    let factor = d2.max(m21.ncols()) as f64;
    let rank = numerical_rank(&krylov_matrix(m22, m21), factor);
    Ok(KalmanReport {
        rank,
        satisfied: rank == d2,
    })
}

/// Adapted basis turning `(M22, M21)` into block companion form.
#[derive(Clone, Debug)]
pub struct CascadeForm {
    pub p: CMat,
    /// `P^{-1} M22 P`: block upper triangular with companion diagonal blocks.
    pub hat22: CMat,
    /// `P^{-1} M21`.
    pub hat21: CMat,
    /// Column of `M21` that seeds each chain.
    pub column_indices: Vec<usize>,
    pub block_sizes: Vec<usize>,
    /// For chain `i`, coefficients expressing `M22^{s_i} M21 e_{l_i}` in the
    /// basis built so far (last column of the companion block and above).
    pub alpha: Vec<Vec<crate::C>>,
}

impl CascadeForm {
    /// Index in the new basis of the first vector of chain `i`.
    pub fn chain_start(&self, i: usize) -> usize {
        self.block_sizes[..i].iter().sum()
    }

    /// `max |M22 P - P hat22|`.
    pub fn residual(&self, m22: &CMat) -> f64 {
        (m22 * &self.p - &self.p * &self.hat22).camax()
    }
}

pub fn cascade_transform(m22: &CMat, m21: &CMat) -> Result<CascadeForm> {
    let kal = kalman_rank(m22, m21)?;
    if !kal.satisfied {
        return Err(Error::Precondition(format!(
            "Kalman rank condition fails (rank {} < {})",
            kal.rank,
            m22.nrows()
        )));
    }
    let d2 = m22.nrows();
    let factor = d2.max(m21.ncols()) as f64;
    let scale = krylov_matrix(m22, m21)
        .clone()
        .svd(false, false)
        .singular_values
        .max();
    let mut cols: Vec<crate::CVec> = Vec::new();
    let mut column_indices = Vec::new();
    let mut block_sizes = Vec::new();
    let independent = |cols: &[crate::CVec], v: &crate::CVec| -> bool {
        let mut m = CMat::zeros(d2, cols.len() + 1);
        for (j, c) in cols.iter().enumerate() {
            m.set_column(j, c);
        }
        m.set_column(cols.len(), v);
        let s = m.svd(false, false).singular_values;
        let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
        smin > factor * scale * 1e-10
    };
    for l in 0..m21.ncols() {
        if cols.len() == d2 {
            break;
        }
        let mut v: crate::CVec = m21.column(l).into_owned();
        let mut size = 0;
        while cols.len() < d2 && independent(&cols, &v) {
            cols.push(v.clone());
            v = m22 * v;
            size += 1;
        }
        if size > 0 {
            column_indices.push(l);
            block_sizes.push(size);
        }
    }
    if cols.len() != d2 {
        return Err(Error::Numerical("adapted basis scan ended short of full rank".into()));
    }
    let mut p = CMat::zeros(d2, d2);
    for (j, v) in cols.iter().enumerate() {
        p.set_column(j, v);
    }
    let pinv = inverse(&p)?;
    let hat22 = &pinv * m22 * &p;
    let hat21 = &pinv * m21;
    let mut alpha = Vec::new();
    let mut start = 0;
    for &s in &block_sizes {
        let last = start + s - 1;
        let col: Vec<crate::C> = (0..start + s).map(|i| hat22[(i, last)]).collect();
        alpha.push(col);
        start += s;
    }
    Ok(CascadeForm {
        p,
        hat22,
        hat21,
        column_indices,
        block_sizes,
        alpha,
    })
}
