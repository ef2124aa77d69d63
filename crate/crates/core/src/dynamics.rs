//! Truncated Fourier states, exact per-mode propagators, forward and adjoint
//! evolution, Sobolev norms and the low / parabolic / hyperbolic split.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::algebra::{SystemMatrices, TorusSubset};
use crate::control::ControlSignal;
use crate::numerics::{c, CMat, CVec, ExpGenerator, Quadrature, C, IM};
use crate::spectral::BranchTable;
use crate::{Error, Result};

/// Coefficients `f(n)` of `f(x) = sum_n f(n) e^{inx}` for `|n| <= nmax`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierState {
    pub nmax: usize,
    pub dim: usize,
    coeffs: Vec<CVec>,
}

impl FourierState {
    pub fn zeros(nmax: usize, dim: usize) -> Self {
        FourierState {
            nmax,
            dim,
            coeffs: vec![CVec::zeros(dim); 2 * nmax + 1],
        }
    }

    pub fn from_fn<F: FnMut(i64) -> CVec>(nmax: usize, dim: usize, mut f: F) -> Self {
        let coeffs = (-(nmax as i64)..=nmax as i64)
            .map(|n| {
                let v = f(n);
                assert_eq!(v.len(), dim);
                v
            })
            .collect();
        FourierState { nmax, dim, coeffs }
    }

    /// Single mode `x e_n`.
    pub fn mode(nmax: usize, n: i64, x: CVec) -> Self {
        let dim = x.len();
        let mut s = Self::zeros(nmax, dim);
        s.set(n, x);
        s
    }

    /// Random state with coefficients of size `(1 + |n|)^{-decay}`.
    pub fn random<R: Rng>(nmax: usize, dim: usize, decay: f64, rng: &mut R) -> Self {
        Self::from_fn(nmax, dim, |n| {
            let s = (1.0 + n.abs() as f64).powf(-decay);
            CVec::from_fn(dim, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * s)
        })
    }

    /// Restrict a random or computed state to real-valued fields.
    pub fn real_part(&self) -> Self {
        Self::from_fn(self.nmax, self.dim, |n| {
            (self.get(n) + self.get(-n).map(|z| z.conj())) * c(0.5, 0.0)
        })
    }

    pub fn modes(&self) -> impl Iterator<Item = i64> {
        -(self.nmax as i64)..=self.nmax as i64
    }

    fn idx(&self, n: i64) -> Option<usize> {
        let i = n + self.nmax as i64;
        (i >= 0 && (i as usize) < self.coeffs.len()).then_some(i as usize)
    }

    /// Coefficient of mode `n`; zero outside the truncation.
    pub fn get(&self, n: i64) -> CVec {
        self.idx(n).map(|i| self.coeffs[i].clone()).unwrap_or_else(|| CVec::zeros(self.dim))
    }

    pub fn coeff(&self, n: i64) -> &CVec {
        &self.coeffs[self.idx(n).expect("mode inside truncation")]
    }

    pub fn set(&mut self, n: i64, v: CVec) {
        let i = self.idx(n).expect("mode inside truncation");
        self.coeffs[i] = v;
    }

    pub fn coeffs(&self) -> &[CVec] {
        &self.coeffs
    }

    /// Same coefficients on a different truncation.
    pub fn resized(&self, nmax: usize) -> Self {
        Self::from_fn(nmax, self.dim, |n| self.get(n))
    }

    pub fn map_modes<F: Fn(i64, &CVec) -> CVec + Sync>(&self, f: F) -> Self {
        let coeffs = self
            .coeffs
            .par_iter()
            .enumerate()
            .map(|(i, v)| f(i as i64 - self.nmax as i64, v))
            .collect();
        FourierState {
            nmax: self.nmax,
            dim: self.dim,
            coeffs,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        let nmax = self.nmax.max(o.nmax);
        Self::from_fn(nmax, self.dim, |n| self.get(n) + o.get(n))
    }

    pub fn sub(&self, o: &Self) -> Self {
        let nmax = self.nmax.max(o.nmax);
        Self::from_fn(nmax, self.dim, |n| self.get(n) - o.get(n))
    }

    pub fn scale(&self, s: C) -> Self {
        self.map_modes(|_, v| v * s)
    }

    /// `sqrt(sum |f(n)|^2)`.
    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
    }

    /// `L^2` norm on the torus, `sqrt(2 pi sum |f(n)|^2)`.
    pub fn l2_norm(&self) -> f64 {
        (2.0 * PI).sqrt() * self.coeff_norm()
    }

    /// `L^2` inner product `int f . conj(g)`.
    pub fn inner(&self, o: &Self) -> C {
        let mut s = c(0.0, 0.0);
        for n in self.modes() {
            s += o.get(n).dotc(self.coeff(n));
        }
        s * (2.0 * PI)
    }

    /// `f(-n) = conj f(n)` within `tol`.
    pub fn is_real(&self, tol: f64) -> bool {
        self.modes()
            .all(|n| (self.get(n) - self.get(-n).map(|z| z.conj())).camax() <= tol)
    }

    /// Zero-mean flag per component.
    pub fn zero_mean(&self, tol: f64) -> Vec<bool> {
        self.get(0).iter().map(|z| z.norm() <= tol).collect()
    }

    /// Values on `ng` equispaced points of `[0, 2 pi)`.
    pub fn synthesize(&self, ng: usize) -> Result<Vec<CVec>> {
        if ng < 2 * self.nmax + 1 {
            return Err(Error::Resolution(format!(
                "grid of {ng} points cannot represent modes up to {}",
                self.nmax
            )));
        }
        let mut out = vec![CVec::zeros(self.dim); ng];
        let fft = FftPlanner::new().plan_fft_inverse(ng);
        for comp in 0..self.dim {
            let mut buf = vec![c(0.0, 0.0); ng];
            for n in self.modes() {
                buf[n.rem_euclid(ng as i64) as usize] += self.coeff(n)[comp];
            }
            fft.process(&mut buf);
            for (j, v) in buf.into_iter().enumerate() {
                out[j][comp] = v;
            }
        }
        Ok(out)
    }

    /// Pointwise value.
    pub fn eval(&self, x: f64) -> CVec {
        let mut s = CVec::zeros(self.dim);
        for n in self.modes() {
            s += self.coeff(n) * C::from_polar(1.0, n as f64 * x);
        }
        s
    }
}

/// `(sum (1 + n^2)^s |f(n)|^2)^{1/2}`.
pub fn sobolev_norm(f: &FourierState, s: f64) -> f64 {
    f.modes()
        .map(|n| (1.0 + (n * n) as f64).powf(s) * f.coeff(n).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// `(sum_{|n| > n0} |f(n)|^2 / n^2)^{1/2}`, the high-frequency negative norm.
pub fn hminus1_tail_norm(f: &FourierState, n0: usize) -> f64 {
    f.modes()
        .filter(|n| n.unsigned_abs() as usize > n0)
        .map(|n| f.coeff(n).norm_squared() / (n * n) as f64)
        .sum::<f64>()
        .sqrt()
}

/// Generator of mode `n`: `n^2 B + i n A + K` (so mode 0 uses `K`).
pub fn mode_generator(sys: &SystemMatrices, n: i64) -> CMat {
    let nf = n as f64;
    sys.b() * c(nf * nf, 0.0) + &sys.a * (IM * nf) + &sys.k
}

/// Largest exponent accepted when propagating backwards in time.
const MAX_GROWTH: f64 = 700.0;

/// `exp(-t L_n)` or its adjoint `exp(-t L_n^*)`; `t >= 0`.
pub fn mode_propagator(sys: &SystemMatrices, n: i64, t: f64, adjoint: bool) -> Result<CMat> {
    if t < 0.0 {
        return Err(Error::Precondition(
            "backward propagation needs hyperbolic-branch data; use hyperbolic_propagator".into(),
        ));
    }
    let e = ExpGenerator::new(&mode_generator(sys, n)).exp(t);
    Ok(if adjoint { e.adjoint() } else { e })
}

/// `exp(-t L_n) Ph(i/n) = sum_mu exp(-i n mu t) exp(t R_mu) P_mu` for any real
/// `t`, valid on hyperbolic data.
pub fn hyperbolic_propagator(table: &BranchTable, n: i64, t: f64) -> Result<CMat> {
    let b = table.require(n)?;
    let d = b.ph.nrows();
    let mut out = CMat::zeros(d, d);
    for h in &b.hyper {
        let er = ExpGenerator::new(&(&h.r * c(-1.0, 0.0)));
        if er.growth_exponent(t) > MAX_GROWTH {
            return Err(Error::Numerical(format!("hyperbolic propagator overflows at t = {t}")));
        }
        out += er.exp(t) * &h.p * C::from_polar(1.0, -(n as f64) * h.mu * t);
    }
    Ok(out)
}

/// Cached `t -> exp(-t L_n)` for every mode of a truncation.
#[derive(Clone, Debug)]
pub struct Propagators {
    pub nmax: usize,
    gens: Vec<Arc<ExpGenerator>>,
    adj: Vec<Arc<ExpGenerator>>,
    pub m: CMat,
}

impl Propagators {
    pub fn new(sys: &SystemMatrices, nmax: usize) -> Self {
        let ns: Vec<i64> = (-(nmax as i64)..=nmax as i64).collect();
        let pairs: Vec<(Arc<ExpGenerator>, Arc<ExpGenerator>)> = ns
            .par_iter()
            .map(|&n| {
                let l = mode_generator(sys, n);
                (Arc::new(ExpGenerator::new(&l)), Arc::new(ExpGenerator::new(&l.adjoint())))
            })
            .collect();
        let (gens, adj) = pairs.into_iter().unzip();
        Propagators {
            nmax,
            gens,
            adj,
            m: sys.m.clone(),
        }
    }

    fn idx(&self, n: i64) -> usize {
        assert!(n.unsigned_abs() as usize <= self.nmax, "mode {n} outside truncation");
        (n + self.nmax as i64) as usize
    }

    pub fn forward(&self, n: i64, t: f64) -> CMat {
        self.gens[self.idx(n)].exp(t)
    }

    /// `exp(-t L_n^*)`.
    pub fn adjoint(&self, n: i64, t: f64) -> CMat {
        self.adj[self.idx(n)].exp(t)
    }

    /// Generator object for `L_n^*`.
    pub fn adjoint_generator(&self, n: i64) -> Arc<ExpGenerator> {
        self.adj[self.idx(n)].clone()
    }
}

/// States on a time quadrature grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub window: (f64, f64),
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
    pub states: Vec<FourierState>,
}

/// Controlled source `M hat u_n(t_q)` at the quadrature nodes of one piece.
fn duhamel(
    props: &Propagators,
    u: &ControlSignal,
    nmax: usize,
    t_end: f64,
) -> Result<Vec<CVec>> {
    let d = props.m.nrows();
    let mut acc = vec![CVec::zeros(d); 2 * nmax + 1];
    for p in &u.pieces {
        if p.window.0 >= t_end {
            continue;
        }
        let q = p.quadrature_until(t_end);
        let smp = p.samples(&q);
        let contrib: Vec<CVec> = (-(nmax as i64)..=nmax as i64)
            .into_par_iter()
            .map(|n| {
                let mut s = CVec::zeros(d);
                for (qi, (&t, &w)) in smp.nodes.iter().zip(&smp.weights).enumerate() {
                    let un = p.action_from(n, &smp.coef[qi]);
                    if un.iter().all(|z| *z == c(0.0, 0.0)) {
                        continue;
                    }
                    s += props.forward(n, t_end - t) * (&props.m * un) * c(w, 0.0);
                }
                s
            })
            .collect();
        for (a, b) in acc.iter_mut().zip(contrib) {
            *a += b;
        }
    }
    Ok(acc)
}

fn check_control(sys: &SystemMatrices, u: &ControlSignal, t_end: f64) -> Result<()> {
    if u.inputs != sys.inputs() {
        return Err(Error::Structural(format!(
            "control has {} inputs, system expects {}",
            u.inputs,
            sys.inputs()
        )));
    }
    let end = u.end_time();
    let start = u.pieces.iter().map(|p| p.window.0).fold(f64::INFINITY, f64::min);
    if start < 0.0 {
        return Err(Error::Precondition("control starts before t = 0".into()));
    }
    if end > t_end + 1e-12 {
        return Err(Error::Precondition(format!(
            "control extends to {end} beyond the horizon {t_end}"
        )));
    }
    Ok(())
}

/// State at time `t` of the controlled system started from `f0` at 0.
pub fn evolve_with(props: &Propagators, f0: &FourierState, u: Option<&ControlSignal>, t: f64) -> Result<FourierState> {
    if t < 0.0 {
        return Err(Error::Precondition("negative horizon".into()));
    }
    let nmax = f0.nmax.min(props.nmax);
    let src = match u {
        Some(u) if !u.pieces.is_empty() => Some(duhamel(props, u, nmax, t)?),
        _ => None,
    };
    let coeffs = (-(nmax as i64)..=nmax as i64)
        .into_par_iter()
        .map(|n| {
            let mut v = props.forward(n, t) * f0.coeff(n);
            if let Some(s) = &src {
                v += &s[(n + nmax as i64) as usize];
            }
            v
        })
        .collect();
    Ok(FourierState {
        nmax,
        dim: f0.dim,
        coeffs,
    })
}

pub fn evolve(sys: &SystemMatrices, f0: &FourierState, u: Option<&ControlSignal>, t: f64) -> Result<FourierState> {
    if let Some(u) = u {
        check_control(sys, u, t)?;
    }
    if f0.dim != sys.dim() {
        return Err(Error::Structural("state dimension differs from the system".into()));
    }
    let props = Propagators::new(sys, f0.nmax);
    evolve_with(&props, f0, u, t)
}

/// Trajectory on a Gauss-Legendre grid of `window` (`panels` panels).
pub fn evolve_trajectory(
    sys: &SystemMatrices,
    f0: &FourierState,
    u: Option<&ControlSignal>,
    window: (f64, f64),
    panels: usize,
) -> Result<Trajectory> {
    if let Some(u) = u {
        check_control(sys, u, u.end_time().max(window.1))?;
    }
    let props = Propagators::new(sys, f0.nmax);
    let q = Quadrature::gauss_panels(window.0, window.1, panels, crate::control::signal::GL_ORDER);
    let states = q
        .nodes
        .iter()
        .map(|&t| evolve_with(&props, f0, u, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        window,
        times: q.nodes,
        weights: q.weights,
        states,
    })
}

/// Adjoint evolution `g(t) = exp(-t L^*) g0` per mode.
pub fn evolve_adjoint(sys: &SystemMatrices, g0: &FourierState, t: f64) -> Result<FourierState> {
    if t < 0.0 {
        return Err(Error::Precondition("negative horizon".into()));
    }
    if g0.dim != sys.dim() {
        return Err(Error::Structural("state dimension differs from the system".into()));
    }
    let props = Propagators::new(sys, g0.nmax);
    Ok(g0.map_modes(|n, v| props.adjoint(n, t) * v))
}

pub fn adjoint_trajectory(sys: &SystemMatrices, g0: &FourierState, window: (f64, f64), panels: usize) -> Result<Trajectory> {
    let props = Propagators::new(sys, g0.nmax);
    let q = Quadrature::gauss_panels(window.0, window.1, panels, crate::control::signal::GL_ORDER);
    let states = q
        .nodes
        .iter()
        .map(|&t| g0.map_modes(|n, v| props.adjoint(n, t) * v))
        .collect();
    Ok(Trajectory {
        window,
        times: q.nodes,
        weights: q.weights,
        states,
    })
}

/// `(low, parabolic, hyperbolic)` parts: modes `|n| <= n0`, `Pp f(n)`, `Ph f(n)`.
pub fn decompose(f: &FourierState, table: &BranchTable) -> Result<(FourierState, FourierState, FourierState)> {
    let n0 = table.n0() as i64;
    if f.nmax > table.nmax && f.nmax as i64 > n0 {
        return Err(Error::Precondition(format!(
            "branch table covers |n| <= {}, state has modes up to {}",
            table.nmax, f.nmax
        )));
    }
    let mut low = FourierState::zeros(f.nmax, f.dim);
    let mut par = FourierState::zeros(f.nmax, f.dim);
    let mut hyp = FourierState::zeros(f.nmax, f.dim);
    for n in f.modes() {
        if n.abs() <= n0 {
            low.set(n, f.get(n));
        } else {
            let b = table.require(n)?;
            par.set(n, &b.pp * f.coeff(n));
            hyp.set(n, &b.ph * f.coeff(n));
        }
    }
    Ok((low, par, hyp))
}

/// Parabolic part restricted to `|n| <= ncut`.
pub fn parabolic_projection(f: &FourierState, table: &BranchTable, ncut: usize) -> Result<FourierState> {
    let n0 = table.n0() as i64;
    let mut out = FourierState::zeros(f.nmax, f.dim);
    for n in f.modes() {
        if n.abs() > n0 && n.unsigned_abs() as usize <= ncut {
            out.set(n, &table.require(n)?.pp * f.coeff(n));
        }
    }
    Ok(out)
}

/// Smallest power of two grid that resolves `|f|^2` exactly.
pub fn exact_grid(nmax: usize) -> usize {
    (4 * nmax + 1).next_power_of_two().max(8)
}

/// `int_omega |obs f(x)|^2 dx` for a state, computed on a grid of `ng`
/// points: the squared modulus is sampled, transformed back to Fourier
/// coefficients and integrated over the arcs in closed form. With
/// `ng >= 4 nmax + 1` the result is exact.
pub fn omega_norm_sq(f: &FourierState, omega: &TorusSubset, obs: Option<&CMat>, ng: usize) -> Result<f64> {
    if ng < 2 * f.nmax {
        return Err(Error::Resolution(format!(
            "grid of {ng} points violates the Nyquist bound 2 N = {}",
            2 * f.nmax
        )));
    }
    let vals = f.synthesize(ng.max(2 * f.nmax + 1))?;
    let ng = vals.len();
    let mut sq: Vec<C> = vals
        .iter()
        .map(|v| {
            let w = match obs {
                Some(m) => m * v,
                None => v.clone(),
            };
            c(w.norm_squared(), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(ng).process(&mut sq);
    let half = (ng / 2) as i64;
    let mut tot = c(0.0, 0.0);
    for m in -half + 1..half {
        let cm = sq[m.rem_euclid(ng as i64) as usize] / ng as f64;
        tot += cm * omega.fourier_integral(m);
    }
    Ok(tot.re)
}

/// `(int_window int_omega |obs g|^2)^{1/2}` using the trajectory's own time
/// quadrature.
pub fn windowed_l2_norm(traj: &Trajectory, window: (f64, f64), omega: &TorusSubset, obs: Option<&CMat>) -> Result<f64> {
    let nmax = traj.states.first().map(|s| s.nmax).unwrap_or(0);
    windowed_l2_norm_grid(traj, window, omega, obs, exact_grid(nmax))
}

pub fn windowed_l2_norm_grid(
    traj: &Trajectory,
    window: (f64, f64),
    omega: &TorusSubset,
    obs: Option<&CMat>,
    ng: usize,
) -> Result<f64> {
    let tol = 1e-12 * (1.0 + window.1.abs());
    if (traj.window.0 - window.0).abs() > tol || (traj.window.1 - window.1).abs() > tol {
        return Err(Error::Precondition(format!(
            "trajectory quadrature covers {:?}, requested window {:?}",
            traj.window, window
        )));
    }
    let parts = traj
        .states
        .par_iter()
        .zip(&traj.weights)
        .map(|(s, &w)| omega_norm_sq(s, omega, obs, ng).map(|v| v * w))
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>().max(0.0).sqrt())
}
