//! Gram matrices between control pieces.
//!
//! A piece doubles as a family of linear conditions on the state at its
//! final time: the coordinates `Phi_n^* f_n(t_final)` along its kernel
//! bases. The Gram matrix `gram(rows, cols)` maps the kernel coefficients of
//! `cols` to the conditions of `rows` that the resulting control produces.

use std::sync::Arc;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use super::signal::{ControlPiece, KernelMode, SpatialWeight, TimeWeight};
use crate::algebra::{SystemMatrices, TorusSubset};
use crate::dynamics::{mode_generator, FourierState};
use crate::numerics::{c, identity, CMat, CVec, ExpGenerator, C};
use crate::spectral::{reduced_parabolic_adjoint, BranchTable};
use crate::{Error, Result};

/// Conditioning above which a Gram system is refused.
pub const GRAM_COND_LIMIT: f64 = 1e14;

/// Invariant subspaces of `L_n^*` used as kernels and conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Range of `Pp(i/n)^*`, parametrised by `phi_2` (basis `[G; I]`).
    Parabolic,
    /// Range of `Ph(i/n)^*`, orthonormal basis.
    Hyperbolic,
    /// The whole of `C^d` (modes `|n| <= n0`).
    Low,
}

/// Kernel mode of a family at frequency `n`, with zero coefficients.
pub fn family_mode(sys: &SystemMatrices, table: &BranchTable, family: Family, n: i64) -> Result<KernelMode> {
    let (basis, gen) = match family {
        Family::Low => (identity(sys.dim()), mode_generator(sys, n).adjoint()),
        Family::Parabolic => {
            let b = table.require(n)?;
            let mut basis = CMat::zeros(sys.dim(), sys.d2);
            basis.view_mut((0, 0), (sys.d1, sys.d2)).copy_from(&b.g);
            basis.view_mut((sys.d1, 0), (sys.d2, sys.d2)).copy_from(&identity(sys.d2));
            let nf = n as f64;
            let gen = reduced_parabolic_adjoint(sys, b.z(), &b.g) * c(nf * nf, 0.0);
            (basis, gen)
        }
        Family::Hyperbolic => {
            let b = table.require(n)?;
            let svd = b.ph.adjoint().svd(true, false);
            let u = svd.u.ok_or_else(|| Error::Numerical("SVD of Ph failed".into()))?;
            let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
            order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
            let mut basis = CMat::zeros(sys.dim(), sys.d1);
            for (col, &i) in order.iter().take(sys.d1).enumerate() {
                basis.set_column(col, &u.column(i));
            }
            let gen = basis.adjoint() * mode_generator(sys, n).adjoint() * &basis;
            (basis, gen)
        }
    };
    let r = basis.ncols();
    Ok(KernelMode {
        k: n,
        basis,
        gen: Arc::new(ExpGenerator::new(&gen)),
        coeff: CVec::zeros(r),
    })
}

/// Channels that carry control by default: with `M = I` the parabolic
/// family uses the last `d2` channels and the hyperbolic one the first `d1`;
/// otherwise every channel.
pub fn default_mask(sys: &SystemMatrices, family: Family) -> Vec<bool> {
    let m = sys.inputs();
    let is_identity = m == sys.dim() && (&sys.m - identity(m)).camax() == 0.0;
    if !is_identity {
        return vec![true; m];
    }
    match family {
        Family::Parabolic => (0..m).map(|i| i >= sys.d1).collect(),
        Family::Hyperbolic => (0..m).map(|i| i < sys.d1).collect(),
        Family::Low => vec![true; m],
    }
}

/// Panels for a window of length `len` with frequencies up to `kmax`
/// travelling at speeds up to `speed`.
pub fn default_panels(kmax: usize, len: f64, speed: f64) -> usize {
    let osc = kmax as f64 * speed * len / std::f64::consts::PI;
    (16 + 4 * kmax).max(osc.ceil() as usize * 2)
}

/// Everything except the kernel of a piece.
#[derive(Clone, Debug)]
pub struct PieceLayout {
    pub window: (f64, f64),
    pub t_final: f64,
    pub panels: usize,
    pub time_weight: TimeWeight,
    pub omega: TorusSubset,
    pub margin: f64,
    pub mask: Vec<bool>,
    pub deriv_order: u32,
}

impl PieceLayout {
    /// Build a piece over the given kernel; `mmax` bounds the frequencies the
    /// spatial cut-off must resolve.
    pub fn build(&self, sys: &SystemMatrices, kernel: Vec<KernelMode>, mmax: usize) -> ControlPiece {
        let spatial = Arc::new(SpatialWeight::plateau(&self.omega, self.margin, mmax.max(1024)));
        ControlPiece {
            window: self.window,
            t_final: self.t_final,
            panels: self.panels,
            time_weight: self.time_weight,
            spatial,
            mask: self.mask.clone(),
            deriv_order: self.deriv_order,
            m_adj: sys.m.adjoint(),
            kernel,
        }
    }
}

/// Number of scalar coefficients (= conditions) of a piece.
pub fn piece_size(p: &ControlPiece) -> usize {
    p.kernel.iter().map(|k| k.coeff.len()).sum()
}

fn offsets(p: &ControlPiece) -> Vec<usize> {
    let mut o = Vec::with_capacity(p.kernel.len() + 1);
    let mut s = 0;
    o.push(0);
    for k in &p.kernel {
        s += k.coeff.len();
        o.push(s);
    }
    o
}

/// `M^* Phi_k exp(-s gen_k)` for every kernel mode, side by side.
fn stacked_observation(p: &ControlPiece, s: f64, masked: bool) -> CMat {
    let m = p.inputs();
    let mut out = CMat::zeros(m, piece_size(p));
    let mut col = 0;
    for km in &p.kernel {
        let y = km.observe(&p.m_adj, s);
        out.view_mut((0, col), (m, y.ncols())).copy_from(&y);
        col += y.ncols();
    }
    if masked {
        for (i, &on) in p.mask.iter().enumerate() {
            if !on {
                out.row_mut(i).fill(c(0.0, 0.0));
            }
        }
    }
    out
}

/// Gram matrix: conditions of `rows` produced by unit coefficients of the
/// kernel of `cols`. `gram(p, p)` is Hermitian positive semidefinite.
pub fn gram(rows: &ControlPiece, cols: &ControlPiece) -> Result<CMat> {
    if cols.window.1 > rows.t_final + 1e-12 {
        return Err(Error::Precondition(format!(
            "control window ends at {} after the condition time {}",
            cols.window.1, rows.t_final
        )));
    }
    if rows.m_adj != cols.m_adj {
        return Err(Error::Structural("pieces use different input matrices".into()));
    }
    let nr = piece_size(rows);
    let nc = piece_size(cols);
    let q = cols.quadrature();
    // Fixed chunking keeps the summation order, hence the bits, reproducible.
    let nodes: Vec<(f64, f64)> = q.nodes.iter().cloned().zip(q.weights.iter().cloned()).collect();
    let partial: Vec<CMat> = nodes
        .par_chunks(super::signal::GL_ORDER)
        .map(|chunk| {
            let mut acc = CMat::zeros(nr, nc);
            for &(t, w) in chunk {
                let wt = w * cols.time_weight.eval(t, cols.window);
                if wt != 0.0 {
                    let yr = stacked_observation(rows, rows.t_final - t, false);
                    let yc = stacked_observation(cols, cols.t_final - t, true);
                    acc += yr.adjoint() * yc * c(wt, 0.0);
                }
            }
            acc
        })
        .collect();
    let mut s = CMat::zeros(nr, nc);
    for p in partial {
        s += p;
    }
    let ro = offsets(rows);
    let co = offsets(cols);
    let deriv = |n: i64| -> C { (C::i() * n as f64).powu(cols.deriv_order) };
    let mut g = s;
    for (i, rn) in rows.kernel.iter().enumerate() {
        for (j, ck) in cols.kernel.iter().enumerate() {
            let f = cols.spatial.coeff(rn.k - ck.k) * deriv(rn.k) * deriv(ck.k).conj();
            let mut v = g.view_mut((ro[i], co[j]), (ro[i + 1] - ro[i], co[j + 1] - co[j]));
            v *= f;
        }
    }
    Ok(g)
}

/// Conditions of `p` evaluated on the free evolution of a state given at
/// time `t0 <= t_final`: `(Phi_n exp(-(t_final - t0) gen_n))^* f_n`.
pub fn observe_state(p: &ControlPiece, f: &FourierState, t0: f64) -> CVec {
    let s = p.t_final - t0;
    let mut out = CVec::zeros(piece_size(p));
    let mut row = 0;
    for km in &p.kernel {
        let y = (&km.basis * km.gen.exp(s)).adjoint() * f.get(km.k);
        out.rows_mut(row, y.len()).copy_from(&y);
        row += y.len();
    }
    out
}

/// Write stacked coefficients into the kernel of `p`.
pub fn set_coefficients(p: &mut ControlPiece, x: &CVec) {
    let mut row = 0;
    for km in p.kernel.iter_mut() {
        let r = km.coeff.len();
        km.coeff = x.rows(row, r).into_owned();
        row += r;
    }
}

/// Extreme eigenvalues of a Hermitian matrix, without equilibration.
pub fn hermitian_extremes(a: &CMat) -> (f64, f64) {
    let h = (a + a.adjoint()) * c(0.5, 0.0);
    let e = SymmetricEigen::new(h);
    let lo = e.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
