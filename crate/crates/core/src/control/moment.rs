//! Parabolic control by the moment method.
//!
//! The control is sought in the span of the adjoint parabolic modes,
//! `u = rho1(t) rho2(x) sum_k M^* Phi_k exp(-(T - t) n^2 E2adj(k)) V_k e^{ikx}`,
//! and the moment conditions `Pp f_n(T) = 0` for `n0 < |n| <= N` become the
//! Hermitian system `A V = F`.

use super::gram::{
    default_mask, default_panels, family_mode, gram, observe_state, piece_size, set_coefficients, Family, PieceLayout,
    GRAM_COND_LIMIT,
};
use super::signal::{ControlSignal, TimeWeight, PLATEAU_MARGIN};
use crate::algebra::{SystemMatrices, TorusSubset};
use crate::dynamics::{decompose, evolve, parabolic_projection, FourierState};
use crate::numerics::{fit_line, HermitianFactor};
use crate::spectral::BranchTable;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct MomentOptions {
    /// Channels carrying the control; `None` picks [`default_mask`].
    pub mask: Option<Vec<bool>>,
    /// `u` is replaced by `d^j/dx^j (rho2 v)` when nonzero.
    pub deriv_order: u32,
    pub cond_limit: f64,
    /// Fraction of each arc of omega outside the plateau of `rho2`.
    pub margin: f64,
    pub panels: Option<usize>,
    /// Omit modes already negligible at a later time.
    pub prune: Option<Prune>,
}

/// A mode is left out of the moment conditions when its parabolic
/// coordinates, freely evolved for `horizon`, are at most `threshold`, and
/// anything of size `leak` injected by the control would also decay below
/// `threshold` during the `tail` that follows the control window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prune {
    pub horizon: f64,
    pub tail: f64,
    pub leak: f64,
    pub threshold: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions {
            mask: None,
            deriv_order: 0,
            cond_limit: GRAM_COND_LIMIT,
            margin: PLATEAU_MARGIN,
            panels: None,
            prune: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MomentControl {
    pub control: ControlSignal,
    /// Condition number of the equilibrated Gram matrix.
    pub gram_cond: f64,
    /// Extreme eigenvalues of the equilibrated Gram matrix.
    pub min_eig: f64,
    pub max_eig: f64,
    /// `|Pi^p_N f(T)| / |f0p|`.
    pub residual: f64,
    pub conditions: usize,
}

fn modes_between(n0: usize, n: usize) -> Vec<i64> {
    (n0 as i64 + 1..=n as i64).flat_map(|k| [-k, k]).collect()
}

/// Gram matrix of the parabolic moment problem on `(0, t)`.
pub fn moment_gram(
    sys: &SystemMatrices,
    table: &BranchTable,
    t: f64,
    n: usize,
    omega: &TorusSubset,
    opts: &MomentOptions,
) -> Result<(crate::ControlPiece, crate::CMat)> {
    moment_gram_modes(sys, table, t, n, &modes_between(table.n0(), n), omega, opts)
}

fn moment_gram_modes(
    sys: &SystemMatrices,
    table: &BranchTable,
    t: f64,
    n: usize,
    modes: &[i64],
    omega: &TorusSubset,
    opts: &MomentOptions,
) -> Result<(crate::ControlPiece, crate::CMat)> {
    if n > table.nmax {
        return Err(Error::Precondition(format!("N = {n} exceeds the branch table ({})", table.nmax)));
    }
    if n <= table.n0() {
        return Err(Error::Precondition(format!("N = {n} is not above n0 = {}", table.n0())));
    }
    if !(t > 0.0) {
        return Err(Error::Precondition("horizon must be positive".into()));
    }
    let kernel = modes
        .iter()
        .map(|&k| family_mode(sys, table, Family::Parabolic, k))
        .collect::<Result<Vec<_>>>()?;
    let layout = PieceLayout {
        window: (0.0, t),
        t_final: t,
        panels: opts.panels.unwrap_or_else(|| default_panels(n, t, 0.0)),
        time_weight: TimeWeight::Smooth,
        omega: omega.clone(),
        margin: opts.margin,
        mask: opts.mask.clone().unwrap_or_else(|| default_mask(sys, Family::Parabolic)),
        deriv_order: opts.deriv_order,
    };
    let piece = layout.build(sys, kernel, 2 * table.nmax);
    let g = gram(&piece, &piece)?;
    Ok((piece, g))
}

/// Control on `(0, t) x omega` cancelling the parabolic part of modes
/// `n0 < |n| <= n` at time `t`, starting from `f0p`.
pub fn parabolic_moment_control(
    sys: &SystemMatrices,
    table: &BranchTable,
    f0p: &FourierState,
    t: f64,
    n: usize,
    omega: &TorusSubset,
    opts: &MomentOptions,
) -> Result<MomentControl> {
    let norm0 = f0p.l2_norm();
    let (low, _, hyp) = decompose(f0p, table)?;
    if low.l2_norm() + hyp.l2_norm() > 1e-8 * norm0 {
        return Err(Error::Precondition("initial state is not parabolic".into()));
    }
    let mut modes = modes_between(table.n0(), n);
    if let Some(pr) = opts.prune {
        let mut kept = Vec::new();
        for k in modes {
            let km = family_mode(sys, table, Family::Parabolic, k)?;
            let y = (&km.basis * km.gen.exp(pr.horizon)).adjoint() * f0p.get(k);
            let decay = crate::numerics::norm2(&km.gen.exp(pr.tail));
            if y.norm() > pr.threshold || decay * pr.leak > pr.threshold {
                kept.push(k);
            }
        }
        modes = kept;
    }
    let mut control = ControlSignal::zero(sys.inputs());
    if modes.is_empty() {
        let fin = evolve(sys, f0p, None, t)?;
        return Ok(MomentControl {
            control,
            gram_cond: 1.0,
            min_eig: 1.0,
            max_eig: 1.0,
            residual: if norm0 == 0.0 { 0.0 } else { parabolic_projection(&fin, table, n)?.l2_norm() / norm0 },
            conditions: 0,
        });
    }
    let (mut piece, g) = moment_gram_modes(sys, table, t, n, &modes, omega, opts)?;
    let factor = HermitianFactor::new(&g, opts.cond_limit, "moment Gram matrix: reduce N or increase T")?;
    let rhs = -observe_state(&piece, f0p, 0.0);
    let conditions = piece_size(&piece);
    if norm0 == 0.0 {
        return Ok(MomentControl {
            control,
            gram_cond: factor.cond,
            min_eig: factor.min_eig,
            max_eig: factor.max_eig,
            residual: 0.0,
            conditions,
        });
    }
    set_coefficients(&mut piece, &factor.solve_vec(&rhs));
    control.push(piece);
    let fin = evolve(sys, f0p, Some(&control), t)?;
    let residual = parabolic_projection(&fin, table, n)?.l2_norm() / norm0;
    Ok(MomentControl {
        control,
        gram_cond: factor.cond,
        min_eig: factor.min_eig,
        max_eig: factor.max_eig,
        residual,
        conditions,
    })
}

/// `(N, cond)` of the equilibrated moment Gram matrix over `ns`, and the
/// slope of `log cond` against `N`.
pub fn gram_condition_sweep(
    sys: &SystemMatrices,
    table: &BranchTable,
    t: f64,
    ns: &[usize],
    omega: &TorusSubset,
) -> Result<(Vec<(usize, f64)>, f64)> {
    let mut out = Vec::new();
    for &n in ns {
        let (_, g) = moment_gram(sys, table, t, n, omega, &MomentOptions::default())?;
        let f = HermitianFactor::new(&g, f64::INFINITY, "")?;
        out.push((n, f.cond));
    }
    let x: Vec<f64> = out.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = out.iter().map(|p| p.1.ln()).collect();
    let slope = if out.len() >= 2 { fit_line(&x, &y).0 } else { f64::NAN };
    Ok((out, slope))
}
