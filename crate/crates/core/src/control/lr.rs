//! Lebeau-Robbiano iteration for the parabolic block.
//!
//! Stage `l` acts on `[a_{l-1}, a_{l-1} + T_l]` with a moment control that
//! cancels the parabolic modes `|n| <= N_l = 2^l`, then lets the state decay
//! freely for another `T_l`.

use super::moment::{parabolic_moment_control, MomentOptions, Prune};
use super::signal::ControlSignal;
use crate::algebra::{SystemMatrices, TorusSubset};
use crate::dynamics::{decompose, evolve, FourierState};
use crate::spectral::BranchTable;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrStage {
    pub l: u32,
    pub n_l: usize,
    pub t_l: f64,
    /// Start of the active phase, `a_{l-1}`.
    pub start: f64,
}

impl LrStage {
    /// `a_l`, the end of the passive phase.
    pub fn end(&self) -> f64 {
        self.start + 2.0 * self.t_l
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub t: f64,
    pub delta: f64,
    pub rho: f64,
    /// `A` with `2 sum_{l >= 1} T_l = T - 2 delta`.
    pub a_const: f64,
    pub stages: Vec<LrStage>,
}

impl LrSchedule {
    /// Stages `l = 1, 2, ...` with `N_l <= nmax`.
    pub fn new(t: f64, delta: f64, rho: f64, nmax: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < t / 2.0) {
            return Err(Error::Precondition(format!("delta = {delta} must lie in (0, T/2)")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Precondition(format!("rho = {rho} must lie in (0, 1)")));
        }
        let q = 2f64.powf(-rho);
        let a_const = (t - 2.0 * delta) / 2.0 * (1.0 - q) / q;
        let mut stages = Vec::new();
        let mut start = delta;
        let mut l = 1u32;
        while 1usize << l <= nmax {
            let t_l = a_const * q.powi(l as i32);
            stages.push(LrStage {
                l,
                n_l: 1 << l,
                t_l,
                start,
            });
            start += 2.0 * t_l;
            l += 1;
        }
        Ok(LrSchedule {
            t,
            delta,
            rho,
            a_const,
            stages,
        })
    }
}

#[derive(Clone, Debug)]
pub struct StageReport {
    pub stage: LrStage,
    /// Moment conditions actually imposed.
    pub conditions: usize,
    pub gram_cond: f64,
    /// `|Pp f|` at `a_{l-1}` and at `a_l`.
    pub norm_before: f64,
    pub norm_after: f64,
    /// Full state norm at `a_l`.
    pub state_norm: f64,
}

#[derive(Clone, Debug)]
pub struct LrResult {
    pub schedule: LrSchedule,
    pub control: ControlSignal,
    pub stages: Vec<StageReport>,
    /// `|f_l| = |Pp f(a_l)|` for `l = 0, 1, ...` (`a_0 = delta`).
    pub norms: Vec<f64>,
    /// `|Pp f(T)| / |f0p|` from a single evolution with the whole control.
    pub final_residual: f64,
}

#[derive(Clone, Debug)]
pub struct LrOptions {
    pub moment: MomentOptions,
    /// Modes whose free decay until `T` already brings them below
    /// `tol * |f0p|` are not targeted.
    pub tol: f64,
}

impl Default for LrOptions {
    fn default() -> Self {
        LrOptions {
            moment: MomentOptions::default(),
            tol: 1e-12,
        }
    }
}

fn parabolic_norm(f: &FourierState, table: &BranchTable) -> Result<f64> {
    Ok(decompose(f, table)?.1.l2_norm())
}

#[allow(clippy::too_many_arguments)]
pub fn lebeau_robbiano(
    sys: &SystemMatrices,
    table: &BranchTable,
    f0p: &FourierState,
    t: f64,
    delta: f64,
    rho: f64,
    omega: &TorusSubset,
    opts: &LrOptions,
) -> Result<LrResult> {
    let nmax = f0p.nmax.min(table.nmax);
    let schedule = LrSchedule::new(t, delta, rho, nmax)?;
    let norm0 = f0p.l2_norm();
    let (low, _, hyp) = decompose(f0p, table)?;
    if low.l2_norm() + hyp.l2_norm() > 1e-8 * norm0 {
        return Err(Error::Precondition("initial state is not parabolic".into()));
    }
    let mut control = ControlSignal::zero(sys.inputs());
    let mut f = evolve(sys, f0p, None, delta)?;
    let mut norms = vec![parabolic_norm(&f, table)?];
    let mut stages = Vec::new();
    for st in &schedule.stages {
        let before = *norms.last().unwrap();
        let par = decompose(&f, table)?.1;
        let (conditions, gram_cond, local) = if st.n_l > table.n0() && before > 0.0 {
            let mut mo = opts.moment.clone();
            mo.prune = Some(Prune {
                horizon: t - st.start,
                tail: t - st.start - st.t_l,
                leak: before,
                threshold: opts.tol * norm0,
            });
            let mc = parabolic_moment_control(sys, table, &par, st.t_l, st.n_l, omega, &mo)
                .map_err(|e| e.context(&format!("stage {}", st.l)))?;
            (mc.conditions, mc.gram_cond, mc.control)
        } else {
            (0, 1.0, ControlSignal::zero(sys.inputs()))
        };
        f = evolve(sys, &f, Some(&local), 2.0 * st.t_l)?;
        control.extend(local.shifted(st.start));
        let after = parabolic_norm(&f, table)?;
        norms.push(after);
        stages.push(StageReport {
            stage: *st,
            conditions,
            gram_cond,
            norm_before: before,
            norm_after: after,
            state_norm: f.l2_norm(),
        });
    }
    let fin = evolve(sys, f0p, Some(&control), t)?;
    let final_residual = if norm0 == 0.0 {
        0.0
    } else {
        parabolic_norm(&fin, table)? / norm0
    };
    Ok(LrResult {
        schedule,
        control,
        stages,
        norms,
        final_residual,
    })
}
