//! Finite-dimensional HUM controls from controllability Gramians.

use super::gram::{default_mask, default_panels, family_mode, gram, hermitian_extremes, observe_state, set_coefficients, Family, PieceLayout, GRAM_COND_LIMIT};
use super::signal::{ControlPiece, ControlSignal, TimeWeight, PLATEAU_MARGIN};
use crate::algebra::{minimal_time, SystemMatrices, TorusSubset};
use crate::dynamics::{evolve, FourierState};
use crate::numerics::{HermitianFactor, CMat};
use crate::spectral::BranchTable;
use crate::{Error, Result};

/// Subspace steered by a HUM control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// `Ph` parts of the modes `n0 < |n| <= nmax`.
    Hyperbolic,
    /// Modes `|n| <= n0`, all components.
    Low,
}

impl Target {
    pub fn family(self) -> Family {
        match self {
            Target::Hyperbolic => Family::Hyperbolic,
            Target::Low => Family::Low,
        }
    }

    pub fn modes(self, table: &BranchTable, nmax: usize) -> Vec<i64> {
        let n0 = table.n0() as i64;
        match self {
            Target::Hyperbolic => (n0 + 1..=nmax as i64).flat_map(|k| [-k, k]).collect(),
            Target::Low => (-n0.min(nmax as i64)..=n0.min(nmax as i64)).collect(),
        }
    }

    /// Component of `f` in the target subspace.
    pub fn project(self, f: &FourierState, table: &BranchTable) -> Result<FourierState> {
        let n0 = table.n0() as i64;
        let mut out = FourierState::zeros(f.nmax, f.dim);
        for n in f.modes() {
            match self {
                Target::Low if n.abs() <= n0 => out.set(n, f.get(n)),
                Target::Hyperbolic if n.abs() > n0 => out.set(n, &table.require(n)?.ph * f.coeff(n)),
                _ => {}
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct HumOptions {
    /// Control window; defaults to `(0, T)`.
    pub window: Option<(f64, f64)>,
    pub mask: Option<Vec<bool>>,
    pub time_weight: TimeWeight,
    pub margin: f64,
    pub cond_limit: f64,
    pub panels: Option<usize>,
}

impl Default for HumOptions {
    fn default() -> Self {
        HumOptions {
            window: None,
            mask: None,
            time_weight: TimeWeight::Plateau(0.1),
            margin: PLATEAU_MARGIN,
            cond_limit: GRAM_COND_LIMIT,
            panels: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HumControl {
    pub control: ControlSignal,
    /// Condition number of the equilibrated Gramian.
    pub gram_cond: f64,
    /// Extreme eigenvalues of the raw Gramian.
    pub min_eig: f64,
    pub max_eig: f64,
    /// `|Pi f(T) - fstar| / |fstar|` (relative to `|f0|` when `fstar = 0`).
    pub residual: f64,
    /// `<lambda, G lambda>`.
    pub energy: f64,
    pub warning: Option<String>,
}

/// The Gramian piece of a target: kernel modes, window and weights.
#[allow(clippy::too_many_arguments)]
pub fn target_piece(
    sys: &SystemMatrices,
    table: &BranchTable,
    target: Target,
    nmax: usize,
    t: f64,
    omega: &TorusSubset,
    opts: &HumOptions,
) -> Result<ControlPiece> {
    let window = opts.window.unwrap_or((0.0, t));
    if !(window.0 >= 0.0 && window.0 < window.1 && window.1 <= t + 1e-12) {
        return Err(Error::Precondition(format!("window {window:?} not inside (0, {t})")));
    }
    let kernel = target
        .modes(table, nmax)
        .into_iter()
        .map(|k| family_mode(sys, table, target.family(), k))
        .collect::<Result<Vec<_>>>()?;
    let speed = sys.transport_speeds()?.iter().fold(1.0f64, |a, m| a.max(m.abs()));
    let layout = PieceLayout {
        window,
        t_final: t,
        panels: opts.panels.unwrap_or_else(|| default_panels(nmax, window.1 - window.0, speed)),
        time_weight: opts.time_weight,
        omega: omega.clone(),
        margin: opts.margin,
        mask: opts.mask.clone().unwrap_or_else(|| default_mask(sys, target.family())),
        deriv_order: 0,
    };
    Ok(layout.build(sys, kernel, 2 * nmax))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GramSpectrum {
    pub min_eig: f64,
    pub max_eig: f64,
    /// Condition number after diagonal equilibration.
    pub equilibrated_cond: f64,
}

/// Spectrum of the target Gramian without solving anything.
pub fn target_gramian(
    sys: &SystemMatrices,
    table: &BranchTable,
    target: Target,
    nmax: usize,
    t: f64,
    omega: &TorusSubset,
    opts: &HumOptions,
) -> Result<GramSpectrum> {
    let p = target_piece(sys, table, target, nmax, t, omega, opts)?;
    let g = gram(&p, &p)?;
    let (min_eig, max_eig) = hermitian_extremes(&g);
    let equilibrated_cond = match HermitianFactor::new(&g, f64::INFINITY, "") {
        Ok(f) => f.cond,
        Err(_) => f64::INFINITY,
    };
    Ok(GramSpectrum {
        min_eig,
        max_eig,
        equilibrated_cond,
    })
}

/// Steer the target component of the state at `T` to `fstar`, starting from
/// `f0` (zero when `None`).
#[allow(clippy::too_many_arguments)]
pub fn hum_gramian_control(
    sys: &SystemMatrices,
    table: &BranchTable,
    target: Target,
    fstar: &FourierState,
    f0: Option<&FourierState>,
    t: f64,
    omega: &TorusSubset,
    opts: &HumOptions,
) -> Result<HumControl> {
    let nmax = fstar.nmax;
    let zero = FourierState::zeros(nmax, sys.dim());
    let f0 = f0.unwrap_or(&zero);
    if f0.nmax != nmax || fstar.dim != sys.dim() {
        return Err(Error::Structural("fstar and f0 must share truncation and dimension".into()));
    }
    let warning = match target {
        Target::Hyperbolic => {
            let tstar = minimal_time(sys, omega)?;
            (t <= tstar).then(|| format!("T = {t:.4} <= T* = {tstar:.4}: the hyperbolic Gramian degenerates as N grows"))
        }
        Target::Low => None,
    };
    let mut piece = target_piece(sys, table, target, nmax, t, omega, opts)?;
    let g = gram(&piece, &piece)?;
    let (min_eig, max_eig) = hermitian_extremes(&g);
    let factor = HermitianFactor::new(&g, opts.cond_limit, "target too high-dimensional for this (T, omega)")?;
    let rhs = observe_state(&piece, fstar, t) - observe_state(&piece, f0, 0.0);
    let lambda = factor.solve_vec(&rhs);
    let energy = lambda.dotc(&(&g * &lambda)).re;
    let goal = target.project(fstar, table)?;
    let scale = if goal.l2_norm() > 0.0 { goal.l2_norm() } else { f0.l2_norm() };
    let mut control = ControlSignal::zero(sys.inputs());
    if rhs.norm() == 0.0 {
        return Ok(HumControl {
            control,
            gram_cond: factor.cond,
            min_eig,
            max_eig,
            residual: 0.0,
            energy: 0.0,
            warning,
        });
    }
    set_coefficients(&mut piece, &lambda);
    control.push(piece);
    let fin = evolve(sys, f0, Some(&control), t)?;
    let residual = target.project(&fin, table)?.sub(&goal).l2_norm() / scale;
    Ok(HumControl {
        control,
        gram_cond: factor.cond,
        min_eig,
        max_eig,
        residual,
        energy,
        warning,
    })
}

/// Relative distance of sampled control values from the span of the
/// Gramian kernel, by least squares on the kernel basis functions.
pub fn kernel_range_residual(piece: &ControlPiece, samples: &[(f64, f64)]) -> Result<f64> {
    let r = super::gram::piece_size(piece);
    let m = piece.inputs();
    let rows = samples.len() * m;
    let mut a = CMat::zeros(rows, r);
    let mut b = crate::CVec::zeros(rows);
    let mut basis_piece = piece.clone();
    for j in 0..r {
        let mut e = crate::CVec::zeros(r);
        e[j] = crate::numerics::c(1.0, 0.0);
        set_coefficients(&mut basis_piece, &e);
        for (i, &(t, x)) in samples.iter().enumerate() {
            let v = basis_piece.field(t, x)?;
            for ch in 0..m {
                a[(i * m + ch, j)] = v[ch];
            }
        }
    }
    for (i, &(t, x)) in samples.iter().enumerate() {
        let v = piece.field(t, x)?;
        for ch in 0..m {
            b[i * m + ch] = v[ch];
        }
    }
    if b.norm() == 0.0 {
        return Ok(0.0);
    }
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-13)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))?;
    Ok((&a * x - &b).norm() / b.norm())
}
