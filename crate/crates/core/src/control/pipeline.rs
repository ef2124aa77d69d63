//! Null control of the full system.
//!
//! Three Gram blocks, all observed at the final time `T`:
//! hyperbolic modes driven on `(0, T')`, parabolic modes driven on
//! `(T', T)` and low modes driven on a short trailing window. Each block
//! leaks into the others, so the stacked system is solved by block
//! Gauss-Seidel, with a direct solve when the iteration does not settle.

use super::gram::{default_mask, default_panels, family_mode, gram, observe_state, piece_size, set_coefficients, Family, PieceLayout, GRAM_COND_LIMIT};
use super::hum::{target_piece, HumOptions, Target};
use super::signal::{ControlPiece, ControlSignal, TimeWeight, PLATEAU_MARGIN};
use crate::algebra::{minimal_time, validate_system, SystemMatrices, TorusSubset};
use crate::dynamics::{evolve, FourierState};
use crate::numerics::{solve_general, CMat, CVec, HermitianFactor};
use crate::spectral::BranchTable;
use crate::{Error, Result};

/// Neumann/Gauss-Seidel sweeps before falling back to a direct solve.
pub const MAX_SWEEPS: usize = 50;
pub const SWEEP_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolvePath {
    BlockIteration { sweeps: usize },
    Direct,
}

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: &'static str,
    pub window: (f64, f64),
    pub conditions: usize,
    pub gram_cond: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub control: ControlSignal,
    pub blocks: Vec<BlockReport>,
    pub path: SolvePath,
    /// `|f(T)| / |f0|`.
    pub residual: f64,
    pub tstar: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    /// Mask of the hyperbolic block; default first `d1` channels when `M = I`.
    pub hyperbolic_mask: Option<Vec<bool>>,
    pub parabolic_mask: Option<Vec<bool>>,
    pub cond_limit: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            hyperbolic_mask: None,
            parabolic_mask: None,
            cond_limit: GRAM_COND_LIMIT,
        }
    }
}

/// Check `T > T' > T*` and that the geometry allows control at all.
pub fn check_horizons(sys: &SystemMatrices, omega: &TorusSubset, t: f64, tprime: f64) -> Result<f64> {
    validate_system(sys)?.into_result()?;
    let tstar = minimal_time(sys, omega)?;
    if !tstar.is_finite() {
        return Err(Error::Precondition(
            "A' has no nonzero transport speed, so T* is infinite: the system is not null controllable \
             from a strict subset, even with an additional control on the transport component"
                .into(),
        ));
    }
    if !(tprime > tstar && t > tprime) {
        return Err(Error::Precondition(format!(
            "need T > T' > T*, got T = {t:.4}, T' = {tprime:.4}, T* = {tstar:.4}"
        )));
    }
    Ok(tstar)
}

fn parabolic_piece(
    sys: &SystemMatrices,
    table: &BranchTable,
    nmax: usize,
    window: (f64, f64),
    t: f64,
    omega: &TorusSubset,
    mask: Vec<bool>,
) -> Result<ControlPiece> {
    let n0 = table.n0() as i64;
    let kernel = (n0 + 1..=nmax as i64)
        .flat_map(|k| [-k, k])
        .map(|k| family_mode(sys, table, Family::Parabolic, k))
        .collect::<Result<Vec<_>>>()?;
    let layout = PieceLayout {
        window,
        t_final: t,
        panels: default_panels(nmax, window.1 - window.0, 0.0),
        time_weight: TimeWeight::Smooth,
        omega: omega.clone(),
        margin: PLATEAU_MARGIN,
        mask,
        deriv_order: 0,
    };
    Ok(layout.build(sys, kernel, 2 * nmax))
}

/// Control on `(0, T) x omega` bringing `f0` to rest at `T`.
pub fn full_pipeline(
    sys: &SystemMatrices,
    table: &BranchTable,
    f0: &FourierState,
    t: f64,
    tprime: f64,
    omega: &TorusSubset,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    let tstar = check_horizons(sys, omega, t, tprime)?;
    let nmax = f0.nmax;
    if nmax > table.nmax {
        return Err(Error::Precondition("branch table shorter than the state truncation".into()));
    }
    let tau = (0.1 * t).min(t - tprime) / 2.0;
    let hopts = HumOptions {
        window: Some((0.0, tprime)),
        mask: opts.hyperbolic_mask.clone(),
        ..Default::default()
    };
    let mut pieces = Vec::new();
    let mut names = Vec::new();
    if nmax > table.n0() {
        pieces.push(target_piece(sys, table, Target::Hyperbolic, nmax, t, omega, &hopts)?);
        names.push("hyperbolic");
        let mask = opts
            .parabolic_mask
            .clone()
            .unwrap_or_else(|| default_mask(sys, Family::Parabolic));
        pieces.push(parabolic_piece(sys, table, nmax, (tprime, t), t, omega, mask)?);
        names.push("parabolic");
    }
    let lopts = HumOptions {
        window: Some((t - tau, t)),
        ..Default::default()
    };
    pieces.push(target_piece(sys, table, Target::Low, nmax, t, omega, &lopts)?);
    names.push("low");

    let nb = pieces.len();
    let mut grams = vec![vec![CMat::zeros(0, 0); nb]; nb];
    for i in 0..nb {
        for j in 0..nb {
            grams[i][j] = gram(&pieces[i], &pieces[j])?;
        }
    }
    let factors = (0..nb)
        .map(|i| HermitianFactor::new(&grams[i][i], opts.cond_limit, &format!("{} Gram block of the pipeline", names[i])))
        .collect::<Result<Vec<_>>>()?;
    let rhs: Vec<CVec> = pieces.iter().map(|p| -observe_state(p, f0, 0.0)).collect();
    let blocks = (0..nb)
        .map(|i| BlockReport {
            name: names[i],
            window: pieces[i].window,
            conditions: piece_size(&pieces[i]),
            gram_cond: factors[i].cond,
        })
        .collect();

    let mut x: Vec<CVec> = pieces.iter().map(|p| CVec::zeros(piece_size(p))).collect();
    let mut path = None;
    let rnorm = rhs.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt();
    if rnorm > 0.0 {
        for sweep in 1..=MAX_SWEEPS {
            let mut change = 0.0;
            let mut size = 0.0;
            for i in 0..nb {
                let mut r = rhs[i].clone();
                for j in 0..nb {
                    if j != i {
                        r -= &grams[i][j] * &x[j];
                    }
                }
                let xi = factors[i].solve_vec(&r);
                change += (&xi - &x[i]).norm_squared();
                size += xi.norm_squared();
                x[i] = xi;
            }
            if !change.is_finite() {
                break;
            }
            if change.sqrt() <= SWEEP_TOL * size.sqrt() {
                path = Some(SolvePath::BlockIteration { sweeps: sweep });
                break;
            }
        }
        if path.is_none() {
            let sizes: Vec<usize> = x.iter().map(|v| v.len()).collect();
            let tot: usize = sizes.iter().sum();
            let mut a = CMat::zeros(tot, tot);
            let mut b = CVec::zeros(tot);
            let mut ro = 0;
            for i in 0..nb {
                let mut co = 0;
                for j in 0..nb {
                    a.view_mut((ro, co), (sizes[i], sizes[j])).copy_from(&grams[i][j]);
                    co += sizes[j];
                }
                b.rows_mut(ro, sizes[i]).copy_from(&rhs[i]);
                ro += sizes[i];
            }
            let sol = solve_general(&a, &b)?;
            let mut off = 0;
            for (xi, &s) in x.iter_mut().zip(&sizes) {
                *xi = sol.rows(off, s).into_owned();
                off += s;
            }
            path = Some(SolvePath::Direct);
        }
    }
    let mut control = ControlSignal::zero(sys.inputs());
    let norm0 = f0.l2_norm();
    if rnorm == 0.0 {
        return Ok(PipelineResult {
            control,
            blocks,
            path: SolvePath::BlockIteration { sweeps: 0 },
            residual: 0.0,
            tstar,
        });
    }
    for (mut p, xi) in pieces.into_iter().zip(&x) {
        set_coefficients(&mut p, xi);
        control.push(p);
    }
    let fin = evolve(sys, f0, Some(&control), t)?;
    Ok(PipelineResult {
        control,
        blocks,
        path: path.unwrap(),
        residual: fin.l2_norm() / norm0,
        tstar,
    })
}
