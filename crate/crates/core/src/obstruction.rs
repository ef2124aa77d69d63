//! High-frequency approximate transport solutions of the adjoint system and
//! the observability quotient they defeat when `T < T*`.
//!
//! The witness is `g_N(t, x) = sum_n a_n^N e^{in(x + mu t)} e^{t R_mu(i/n)^*} P_mu(i/n)^* phi0`,
//! where `a_n^N = P_N(n) a_n` are the Fourier coefficients of `P_N(-i d/dx) chi`
//! and `P_N(X) = prod_{j=-N}^{N} (X - j)`. Replacing the branch data by its
//! value at `z = 0` gives the pure transport `g~_N(t, x) = chi_N(x + mu t) e^{t R_mu(0)^*} phi0`.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::algebra::{krylov_matrix, minimal_time, SystemMatrices, TorusSubset};
use crate::dynamics::FourierState;
use crate::numerics::{c, eigenvalues, gauss_legendre, loglog_slope, numerical_rank, CMat, CVec, ExpGenerator, C, IM};
use crate::spectral::{branch_projections_at_zero, remainders_at_zero, spectral_branch, Separation};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * PI;

/// Modes whose log-magnitude falls this far below the peak are dropped.
pub const LOG_DROP: f64 = 40.0;
/// Largest frequency scanned when looking for the tail of `chi_N`.
pub const MAX_CUTOFF: usize = 2_000_000;
/// Default number of boxes in [`BoxChain`].
pub const DEFAULT_BOXES: usize = 600;
/// Distance kept between the swept support and omega, as a fraction of `2 pi`.
pub const SUPPORT_MARGIN: f64 = 0.05;

/// Convolution of normalized indicator functions of widths `h_j = c / j`,
/// `j = 1..=boxes`, centred at `center`, with `sum h_j = width`.
///
/// Its Fourier coefficients `(1/2pi) e^{-in center} prod_j sinc(n h_j / 2)` are
/// known in closed form, so their logarithm is exact even far below the
/// floating point floor. The profile is `C^{boxes - 2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxChain {
    pub center: f64,
    pub width: f64,
    pub boxes: usize,
}

impl BoxChain {
    pub fn new(center: f64, width: f64, boxes: usize) -> Result<Self> {
        if !(width > 0.0 && width < TWO_PI) || boxes < 2 {
            return Err(Error::Precondition(format!("box chain of width {width} with {boxes} boxes")));
        }
        Ok(BoxChain { center, width, boxes })
    }

    fn scale(&self) -> f64 {
        let h: f64 = (1..=self.boxes).map(|j| 1.0 / j as f64).sum();
        self.width / h
    }

    /// Closed support `[center - width/2, center + width/2]`.
    pub fn support(&self) -> (f64, f64) {
        (self.center - 0.5 * self.width, self.center + 0.5 * self.width)
    }

    /// `(log |a_n|, a_n / |a_n|)`; the log is `-inf` at exact zeros.
    pub fn log_coeff(&self, n: i64) -> (f64, C) {
        let base = -(TWO_PI.ln());
        let phase = C::from_polar(1.0, -(n as f64) * self.center);
        if n == 0 {
            return (base, phase);
        }
        let cs = self.scale();
        let mut lg = base;
        let mut neg = false;
        for j in 1..=self.boxes {
            let x = n as f64 * cs / (2.0 * j as f64);
            let s = x.sin() / x;
            if s == 0.0 {
                return (f64::NEG_INFINITY, phase);
            }
            lg += s.abs().ln();
            neg ^= s < 0.0;
        }
        (lg, if neg { -phase } else { phase })
    }

    /// Truncated Fourier series of the profile itself.
    pub fn state(&self, nmax: usize) -> FourierState {
        FourierState::from_fn(nmax, 1, |n| {
            let (lg, ph) = self.log_coeff(n);
            CVec::from_element(1, ph * lg.exp())
        })
    }
}

/// Coefficients of `chi_N = P_N(-i d/dx) chi`, divided by `exp(log_scale)`.
#[derive(Clone, Debug)]
pub struct Highpass {
    pub order: usize,
    pub log_scale: f64,
    pub modes: Vec<i64>,
    pub coeffs: Vec<C>,
}

impl Highpass {
    /// `|chi_N| / exp(log_scale)` with `|f|^2 = 2 pi sum |f_n|^2`.
    pub fn norm(&self) -> f64 {
        (TWO_PI * self.coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn max_mode(&self) -> usize {
        self.modes.iter().map(|n| n.unsigned_abs() as usize).max().unwrap_or(0)
    }

    pub fn state(&self) -> FourierState {
        let mut f = FourierState::zeros(self.max_mode(), 1);
        for (&n, &a) in self.modes.iter().zip(&self.coeffs) {
            f.set(n, CVec::from_element(1, a));
        }
        f
    }
}

/// `log |P_N(n)|` and the sign of `P_N(n)`; `None` for `|n| <= N`.
pub fn log_poly(order: usize, n: i64) -> Option<(f64, f64)> {
    let nn = order as i64;
    if n.abs() <= nn {
        return None;
    }
    let lg = (-nn..=nn).map(|j| ((n - j).abs() as f64).ln()).sum();
    Some((lg, if n > 0 { 1.0 } else { -1.0 }))
}

fn finish(order: usize, raw: Vec<(i64, f64, C)>, drop: f64) -> Result<Highpass> {
    if raw.iter().any(|r| r.1.is_nan() || r.1 == f64::INFINITY) {
        return Err(Error::Numerical(format!("P_N coefficients overflow even in log space for N = {order}")));
    }
    let log_scale = raw.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let mut modes = Vec::new();
    let mut coeffs = Vec::new();
    if log_scale.is_finite() {
        for (n, lg, ph) in raw {
            if lg - log_scale >= -drop {
                modes.push(n);
                coeffs.push(ph * (lg - log_scale).exp());
            }
        }
    }
    Ok(Highpass {
        order,
        log_scale: if log_scale.is_finite() { log_scale } else { 0.0 },
        modes,
        coeffs,
    })
}

/// `a_n^N = P_N(n) a_n` for a scalar truncated series.
pub fn highpass_profile(chi: &FourierState, order: usize) -> Result<Highpass> {
    if chi.dim != 1 {
        return Err(Error::Structural("the profile must be scalar".into()));
    }
    let raw = chi
        .modes()
        .filter_map(|n| {
            let a = chi.coeff(n)[0];
            if a.norm() == 0.0 {
                return None;
            }
            log_poly(order, n).map(|(lp, s)| (n, lp + a.norm().ln(), a / a.norm() * s))
        })
        .collect();
    finish(order, raw, 745.0)
}

/// Highpass of a box chain, keeping `N < |n| <= ncut`. Without `ncut` the
/// tail is cut where the log-magnitude stays [`LOG_DROP`] below its peak.
pub fn highpass_box_chain(chi: &BoxChain, order: usize, ncut: Option<usize>) -> Result<Highpass> {
    if 2 * order + 3 > chi.boxes {
        return Err(Error::Precondition(format!(
            "a chain of {} boxes is only C^{}; N = {order} needs at least {} boxes",
            chi.boxes,
            chi.boxes - 2,
            2 * order + 3
        )));
    }
    let nn = order as i64;
    let mut logs = Vec::new();
    // sum_{j=-N}^{N} ln|n - j| updated incrementally in n.
    let mut lp: f64 = (-nn..=nn).map(|j| ((nn + 1 - j) as f64).ln()).sum();
    let mut peak = f64::NEG_INFINITY;
    let mut n = nn + 1;
    loop {
        let (la, ph) = chi.log_coeff(n);
        let lg = la + lp;
        peak = peak.max(lg);
        logs.push((n, lg, ph));
        match ncut {
            Some(k) if n as usize >= k => break,
            Some(_) => {}
            None => {
                let k = logs.len();
                if k > 64 && logs[k - 64..].iter().all(|r| r.1 < peak - LOG_DROP) {
                    break;
                }
                if n as usize >= MAX_CUTOFF {
                    return Err(Error::Resolution(format!(
                        "chi_N has not decayed by e^-{LOG_DROP} below its peak up to n = {MAX_CUTOFF}"
                    )));
                }
            }
        }
        lp += ((n + 1 + nn) as f64).ln() - ((n - nn) as f64).ln();
        n += 1;
    }
    let mut raw = Vec::with_capacity(2 * logs.len());
    for &(n, lg, ph) in &logs {
        // chi real: a_{-n} = conj(a_n), and P_N(-n) = -P_N(n).
        raw.push((-n, lg, -ph.conj()));
        raw.push((n, lg, ph));
    }
    raw.sort_by_key(|r| r.0);
    finish(order, raw, if ncut.is_some() { 745.0 } else { LOG_DROP })
}

/// `(lo, hi)` meets omega modulo `2 pi`.
fn meets(omega: &TorusSubset, lo: f64, hi: f64) -> bool {
    omega.segments().iter().any(|&(a, b)| {
        let k0 = ((lo - b) / TWO_PI).floor() as i64;
        let k1 = ((hi - a) / TWO_PI).ceil() as i64;
        (k0..=k1).any(|k| {
            let s = k as f64 * TWO_PI;
            a + s < hi && b + s > lo
        })
    })
}

/// Default profile: the widest box chain whose flow `x -> x - mu t`,
/// `t in [0, T]`, stays [`SUPPORT_MARGIN`]` * 2 pi` away from omega.
pub fn default_profile(omega: &TorusSubset, mu: f64, t: f64, boxes: usize) -> Result<BoxChain> {
    let (s, len) = omega
        .largest_gap()
        .ok_or_else(|| Error::Precondition("omega is the whole torus, so T* = 0".into()))?;
    let m = SUPPORT_MARGIN * TWO_PI;
    let sweep = mu.abs() * t;
    let width = len - 2.0 * m - sweep;
    if !(width > 0.0) {
        return Err(Error::Precondition(format!(
            "no admissible profile support: T >= T* for this geometry (gap {len:.4}, sweep {sweep:.4}, margin {m:.4})"
        )));
    }
    let center = if mu >= 0.0 {
        s + m + sweep + 0.5 * width
    } else {
        s + m + 0.5 * width
    };
    BoxChain::new(center, width, boxes)
}

struct WitnessMode {
    /// `a_n^N P_mu(i/n)^* phi0`.
    b0: CVec,
    /// `t -> exp(t R_mu(i/n)^*)`.
    flow: ExpGenerator,
}

/// Data of `g_N` and `g~_N` for one order `N`.
pub struct ObstructionWitness {
    pub order: usize,
    pub mu: f64,
    pub t: f64,
    pub chi: BoxChain,
    pub chi_n: Highpass,
    pub phi0: CVec,
    /// `P_mu(0)^* phi0`.
    pub tilde_vec: CVec,
    pub obs: CMat,
    tilde_flow: ExpGenerator,
    modes: Vec<WitnessMode>,
}

/// Speed with `|mu| = mu*`, the positive one when both signs occur.
pub fn slowest_speed(sys: &SystemMatrices) -> Result<f64> {
    let speeds = sys.transport_speeds()?;
    let ms = speeds.iter().map(|m| m.abs()).fold(f64::INFINITY, f64::min);
    if ms <= 1e-12 {
        return Err(Error::Precondition("A' has a zero speed, so T* is infinite".into()));
    }
    Ok(speeds
        .iter()
        .cloned()
        .filter(|m| (m.abs() - ms).abs() <= 1e-12 * (1.0 + ms))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Build `g_N` and `g~_N` for `T < T*`. Without `chi` the [`default_profile`] is used.
pub fn build_witness(
    sys: &SystemMatrices,
    sep: &Separation,
    omega: &TorusSubset,
    t: f64,
    order: usize,
    chi: Option<BoxChain>,
) -> Result<ObstructionWitness> {
    let tstar = minimal_time(sys, omega)?;
    if tstar == 0.0 {
        return Err(Error::Precondition("omega is the whole torus, so T* = 0".into()));
    }
    if !(t > 0.0) {
        return Err(Error::Precondition("horizon must be positive".into()));
    }
    if t >= tstar {
        return Err(Error::Precondition(format!(
            "no admissible profile support: T >= T* for this geometry (T = {t:.4}, T* = {tstar:.4})"
        )));
    }
    if order < sep.n0 {
        return Err(Error::Precondition(format!("N = {order} must be at least n0 = {}", sep.n0)));
    }
    let mu = slowest_speed(sys)?;
    let chi = match chi {
        Some(p) => {
            let (lo, hi) = p.support();
            let swept = if mu >= 0.0 { (lo - mu * t, hi) } else { (lo, hi - mu * t) };
            if meets(omega, swept.0, swept.1) {
                return Err(Error::Precondition(
                    "the profile's flow over [0, T] meets omega: T >= T* for this geometry".into(),
                ));
            }
            p
        }
        None => default_profile(omega, mu, t, DEFAULT_BOXES)?,
    };
    let chi_n = highpass_box_chain(&chi, order, None)?;

    let p0 = branch_projections_at_zero(sys)?
        .into_iter()
        .find(|(m, _)| (m - mu).abs() <= 1e-9 * (1.0 + mu.abs()))
        .map(|x| x.1)
        .ok_or_else(|| Error::Numerical("no branch projection for the chosen speed".into()))?;
    let r0 = remainders_at_zero(sys, sep)?
        .into_iter()
        .find(|(m, _)| (m - mu).abs() <= 1e-9 * (1.0 + mu.abs()))
        .map(|x| x.1)
        .ok_or_else(|| Error::Numerical("no remainder for the chosen speed".into()))?;
    // phi0 = P^* v / |P^* v| for the top right-singular vector v of P^*; it
    // lies in Ima(P_mu(0)^*).
    let ps = p0.adjoint();
    let svd = ps.clone().svd(true, true);
    let (k, _) = svd.singular_values.argmax();
    let v = svd.v_t.as_ref().unwrap().row(k).adjoint();
    let pv = &ps * v;
    let phi0 = &pv / c(pv.norm(), 0.0);
    let tilde_vec = &ps * &phi0;

    let modes = chi_n
        .modes
        .par_iter()
        .zip(&chi_n.coeffs)
        .map(|(&n, &a)| {
            let br = spectral_branch(sys, sep, n)?;
            let h = br
                .branch(mu)
                .ok_or_else(|| Error::Numerical(format!("mode {n} has no branch for speed {mu}")))?;
            Ok(WitnessMode {
                b0: h.p.adjoint() * &phi0 * a,
                flow: ExpGenerator::new(&(h.r.adjoint() * c(-1.0, 0.0))),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObstructionWitness {
        order,
        mu,
        t,
        chi,
        chi_n,
        phi0,
        tilde_vec,
        obs: sys.m.adjoint(),
        tilde_flow: ExpGenerator::new(&(r0.adjoint() * c(-1.0, 0.0))),
        modes,
    })
}

impl ObstructionWitness {
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// `e^{-in mu t} g_N(n, t)`, without the transport phase.
    fn amplitudes(&self, t: f64) -> Vec<CVec> {
        self.modes.par_iter().map(|m| m.flow.exp(t) * &m.b0).collect()
    }

    fn tilde_amplitudes(&self, t: f64) -> Vec<CVec> {
        let v = self.tilde_flow.exp(t) * &self.tilde_vec;
        self.chi_n.coeffs.iter().map(|&a| &v * a).collect()
    }

    fn to_state(&self, amps: Vec<CVec>, t: f64) -> FourierState {
        let d = self.phi0.len();
        let mut f = FourierState::zeros(self.chi_n.max_mode(), d);
        for (&n, v) in self.chi_n.modes.iter().zip(amps) {
            f.set(n, v * C::from_polar(1.0, n as f64 * self.mu * t));
        }
        f
    }

    /// `g_N(t)` (scaled by `exp(-log_scale)`).
    pub fn g(&self, t: f64) -> FourierState {
        self.to_state(self.amplitudes(t), t)
    }

    pub fn g_tilde(&self, t: f64) -> FourierState {
        self.to_state(self.tilde_amplitudes(t), t)
    }

    /// `|g_N(T)|^2`.
    pub fn final_norm_sq(&self) -> f64 {
        TWO_PI * self.amplitudes(self.t).iter().map(|v| v.norm_squared()).sum::<f64>()
    }

    /// `max_t |g_N(t) - g~_N(t)| / |chi_N|` over `samples + 1` equispaced times.
    pub fn approximation_error(&self, samples: usize) -> f64 {
        let cn = self.chi_n.norm();
        (0..=samples)
            .map(|k| {
                let t = self.t * k as f64 / samples as f64;
                let a = self.amplitudes(t);
                let b = self.tilde_amplitudes(t);
                let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_squared()).sum();
                (TWO_PI * d).sqrt() / cn
            })
            .fold(0.0, f64::max)
    }

    /// `c = min_n |e^{T R_n^*} P_n^* phi0|`, so that `|g_N(T)| >= c |chi_N|`.
    pub fn lower_bound_constant(&self) -> f64 {
        self.amplitudes(self.t)
            .iter()
            .zip(&self.chi_n.coeffs)
            .filter(|(_, a)| a.norm() > 0.0)
            .map(|(v, a)| v.norm() / a.norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// `int_0^T int_omega |M^* g_N|^2`.
    ///
    /// With `y = x + mu t` the integrand is `|h_t(y)|^2`, `h_t(y) = sum_n b_n(t) e^{iny}`,
    /// whose coefficients are smooth in `t`. They are interpolated at `cheb`
    /// Chebyshev times and synthesized by FFT; for each `y` the times with
    /// `y - mu t in omega` form explicit intervals, integrated by Gauss-Legendre,
    /// and the outer integral in `y` is a trapezoid sum on the FFT grid.
    pub fn observed_energy(&self, omega: &TorusSubset, cheb: usize) -> Result<f64> {
        self.windowed_energy(omega, cheb, false)
    }

    /// `int_0^T int_omega |M^* (g_N - g~_N)|^2`. It equals [`Self::observed_energy`]
    /// whenever `g~_N` vanishes on omega, with a rounding floor relative to
    /// `|g_N - g~_N|` instead of `|g_N|`.
    pub fn defect_energy(&self, omega: &TorusSubset, cheb: usize) -> Result<f64> {
        self.windowed_energy(omega, cheb, true)
    }

    /// `int_0^T |g_N - g~_N|^2 dt`, by Gauss-Legendre in time.
    pub fn defect_bound(&self, panels: usize) -> f64 {
        let q = crate::numerics::Quadrature::gauss_panels(0.0, self.t, panels, 8);
        q.nodes
            .iter()
            .zip(&q.weights)
            .map(|(&t, &w)| {
                let a = self.amplitudes(t);
                let b = self.tilde_amplitudes(t);
                w * TWO_PI * a.iter().zip(&b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>()
            })
            .sum()
    }

    fn windowed_energy(&self, omega: &TorusSubset, cheb: usize, defect: bool) -> Result<f64> {
        let q = cheb.max(2);
        let m = self.obs.nrows();
        let ny = (4 * self.chi_n.max_mode() + 1).next_power_of_two().max(64);
        let nodes: Vec<f64> = (0..q)
            .map(|k| 0.5 * self.t * (1.0 - (PI * k as f64 / (q - 1) as f64).cos()))
            .collect();
        let bw: Vec<f64> = (0..q)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                if k == 0 || k == q - 1 {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_inverse(ny);
        // h[(k * m + ch) * ny + j] = (M^* h_{t_k})(y_j)
        let mut h = vec![c(0.0, 0.0); q * m * ny];
        for (k, &tk) in nodes.iter().enumerate() {
            let mut amps = self.amplitudes(tk);
            if defect {
                for (a, b) in amps.iter_mut().zip(self.tilde_amplitudes(tk)) {
                    *a -= b;
                }
            }
            for ch in 0..m {
                let buf = &mut h[(k * m + ch) * ny..(k * m + ch + 1) * ny];
                for (&n, v) in self.chi_n.modes.iter().zip(&amps) {
                    let w = (self.obs.row(ch) * v)[0];
                    buf[n.rem_euclid(ny as i64) as usize] += w;
                }
                fft.process(buf);
            }
        }
        let (gx, gw) = gauss_legendre(q + 4);
        let arcs = omega.segments().to_vec();
        let (tt, mu) = (self.t, self.mu);
        let dy = TWO_PI / ny as f64;
        let chunk = 2048;
        let parts: Vec<f64> = (0..ny.div_ceil(chunk))
            .into_par_iter()
            .map(|ci| {
                let mut acc = 0.0;
                let mut ell = vec![0.0; q];
                for j in ci * chunk..((ci + 1) * chunk).min(ny) {
                    let y = j as f64 * dy;
                    for &(a, b) in &arcs {
                        // y - mu t in (a, b) + 2 pi k  <=>  t between (y - b - 2pi k)/mu and (y - a - 2pi k)/mu
                        let k0 = ((y - mu.abs() * tt - b) / TWO_PI).floor() as i64;
                        let k1 = ((y + mu.abs() * tt - a) / TWO_PI).ceil() as i64;
                        for k in k0..=k1 {
                            let s = k as f64 * TWO_PI;
                            let t1 = (y - b - s) / mu;
                            let t2 = (y - a - s) / mu;
                            let lo = t1.min(t2).max(0.0);
                            let hi = t1.max(t2).min(tt);
                            if hi <= lo {
                                continue;
                            }
                            for (&xg, &wg) in gx.iter().zip(&gw) {
                                let t = lo + 0.5 * (hi - lo) * (xg + 1.0);
                                lagrange(&nodes, &bw, t, &mut ell);
                                let mut e2 = 0.0;
                                for ch in 0..m {
                                    let mut v = c(0.0, 0.0);
                                    for (kq, &l) in ell.iter().enumerate() {
                                        v += h[(kq * m + ch) * ny + j] * l;
                                    }
                                    e2 += v.norm_sqr();
                                }
                                acc += 0.5 * (hi - lo) * wg * e2;
                            }
                        }
                    }
                }
                acc * dy
            })
            .collect();
        Ok(parts.iter().sum())
    }

    /// `int_0^T int_omega |M^* g_N|^2 / |g_N(T)|^2`.
    pub fn observability_ratio(&self, omega: &TorusSubset) -> Result<f64> {
        let den = self.final_norm_sq();
        if !(den > 0.0) {
            return Err(Error::Numerical("degenerate witness: |g_N(T)| = 0".into()));
        }
        Ok(self.observed_energy(omega, CHEB_NODES)? / den)
    }
}

/// Chebyshev nodes used by [`ObstructionWitness::observability_ratio`].
pub const CHEB_NODES: usize = 16;

/// Barycentric Lagrange basis at `t` for Chebyshev points of the second kind.
fn lagrange(nodes: &[f64], bw: &[f64], t: f64, out: &mut [f64]) {
    if let Some(k) = nodes.iter().position(|&x| x == t) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[k] = 1.0;
        return;
    }
    let mut s = 0.0;
    for k in 0..nodes.len() {
        out[k] = bw[k] / (t - nodes[k]);
        s += out[k];
    }
    out.iter_mut().for_each(|v| *v /= s);
}

/// One row of an obstruction sweep. All ratios are relative to `|g_N(T)|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstructionRow {
    pub order: usize,
    /// `int_0^T int_omega |M^* g_N|^2`, computed directly.
    pub ratio: f64,
    /// `int_0^T |g_N - g~_N|^2`, an upper bound for `ratio` because `g~_N`
    /// vanishes on omega; free of cancellation.
    pub bound: f64,
    pub approx_error: f64,
    pub lower_constant: f64,
    pub modes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObstructionSweep {
    pub rows: Vec<ObstructionRow>,
    /// Log-log slopes against `N`.
    pub ratio_slope: f64,
    pub bound_slope: f64,
    pub approx_slope: f64,
    /// `C` in the fit `bound ~ C N^slope`.
    pub bound_fit: f64,
}

pub fn obstruction_sweep(
    sys: &SystemMatrices,
    sep: &Separation,
    omega: &TorusSubset,
    t: f64,
    orders: &[usize],
) -> Result<ObstructionSweep> {
    let mut rows = Vec::new();
    for &n in orders {
        let w = build_witness(sys, sep, omega, t, n, None)?;
        let den = w.final_norm_sq();
        rows.push(ObstructionRow {
            order: n,
            ratio: w.observability_ratio(omega)?,
            bound: w.defect_bound(16) / den,
            approx_error: w.approximation_error(16),
            lower_constant: w.lower_bound_constant(),
            modes: w.mode_count(),
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.order as f64).collect();
    let col = |f: fn(&ObstructionRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let lb: Vec<f64> = col(|r| r.bound).iter().map(|v| v.ln()).collect();
    let (bound_slope, icpt) = if rows.len() >= 2 { crate::numerics::fit_line(&lx, &lb) } else { (f64::NAN, f64::NAN) };
    Ok(ObstructionSweep {
        ratio_slope: loglog_slope(&x, &col(|r| r.ratio)),
        bound_slope,
        approx_slope: loglog_slope(&x, &col(|r| r.approx_error)),
        bound_fit: icpt.exp(),
        rows,
    })
}

/// Result of the pure-transport scan.
#[derive(Clone, Debug)]
pub struct PureTransport {
    pub mu: f64,
    /// Modes where `i mu` is an eigenvalue of `n E(i/n)^*`, with a unit eigenvector.
    pub matches: Vec<(i64, CVec)>,
    /// Rank of `(B | AB | ... | A^{d-1} B)`.
    pub rank: usize,
    pub dim: usize,
}

impl PureTransport {
    pub fn count(&self) -> usize {
        self.matches.len()
    }

    /// Finite dimensionality is expected when the rank condition holds.
    pub fn rank_condition(&self) -> bool {
        self.rank == self.dim
    }
}

/// Scan `0 < |n| <= nmax` for adjoint solutions of the form `g0(x - mu t)`.
pub fn pure_transport_space(sys: &SystemMatrices, mu: f64, nmax: usize) -> Result<PureTransport> {
    let d = sys.dim();
    let target = IM * mu;
    let mut matches = Vec::new();
    for k in 1..=nmax as i64 {
        for n in [-k, k] {
            let nf = n as f64;
            let e = (sys.b() * c(nf, 0.0) + &sys.a * IM - &sys.k * c(1.0 / nf, 0.0)).adjoint();
            let tol = 1e-8 * (1.0 + nf.abs());
            if eigenvalues(&e)?.iter().any(|l| (l - target).norm() < tol) {
                let shifted = &e - CMat::identity(d, d) * target;
                let svd = shifted.svd(false, true);
                let (j, _) = svd.singular_values.argmin();
                let v = svd.v_t.as_ref().unwrap().row(j).adjoint();
                matches.push((n, v));
            }
        }
    }
    let rank = numerical_rank(&krylov_matrix(&sys.a, &sys.b()), 1e3);
    Ok(PureTransport {
        mu,
        matches,
        rank,
        dim: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::evolve_adjoint;
    use crate::numerics::{identity, real_mat};
    use crate::spectral::separation_radius;

    fn nscl() -> SystemMatrices {
        SystemMatrices::new(
            1,
            1,
            real_mat(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            real_mat(1, 1, &[1.0]),
            CMat::zeros(2, 2),
            identity(2),
        )
        .unwrap()
    }

    #[test]
    fn highpass_kills_low_modes() {
        let f = FourierState::from_fn(20, 1, |n| CVec::from_element(1, c(1.0 / (1.0 + (n * n) as f64), 0.0)));
        let h = highpass_profile(&f, 5).unwrap();
        assert!(h.modes.iter().all(|n| n.abs() > 5));
        assert_eq!(h.modes.len(), 30);
    }

    #[test]
    fn single_surviving_mode() {
        let n = 3;
        let f = FourierState::mode(8, 4, CVec::from_element(1, c(1.0, 0.0)));
        let h = highpass_profile(&f, n).unwrap();
        assert_eq!(h.modes, vec![4]);
        // P_3(4) = 7!
        let p: f64 = (1..=7).map(|k| k as f64).product();
        assert!((h.log_scale - p.ln()).abs() < 1e-12);
    }

    #[test]
    fn box_chain_coefficients_match_quadrature() {
        let chi = BoxChain::new(1.0, 0.8, 6).unwrap();
        // Direct oracle: the profile is a piecewise polynomial; integrate
        // the product of sincs against the spatial convolution by sampling
        // the inverse series at many points.
        let f = chi.state(4000);
        let vals = f.synthesize(16384).unwrap();
        let mass: f64 = vals.iter().map(|v| v[0].re).sum::<f64>() * TWO_PI / 16384.0;
        assert!((mass - 1.0).abs() < 1e-9);
        let (lo, hi) = chi.support();
        for (j, v) in vals.iter().enumerate() {
            let x = TWO_PI * j as f64 / 16384.0;
            if x < lo - 0.01 || x > hi + 0.01 {
                assert!(v[0].norm() < 1e-6, "{x} {}", v[0]);
            }
        }
    }

    #[test]
    fn highpassed_chain_stays_in_its_support() {
        let chi = BoxChain::new(4.0, 0.9, 600).unwrap();
        let h = highpass_box_chain(&chi, 2, None).unwrap();
        let f = h.state();
        let ng = (4 * f.nmax + 1).next_power_of_two();
        let vals = f.synthesize(ng).unwrap();
        let peak = vals.iter().map(|v| v[0].norm()).fold(0.0, f64::max);
        let (lo, hi) = chi.support();
        let mut outside: f64 = 0.0;
        for (j, v) in vals.iter().enumerate() {
            let x = TWO_PI * j as f64 / ng as f64;
            if x < lo || x > hi {
                outside = outside.max(v[0].norm());
            }
        }
        assert!(outside <= 1e-10 * h.norm(), "{outside} vs {}", h.norm());
        assert!(peak > 0.0);
    }

    #[test]
    fn short_chain_is_refused() {
        let chi = BoxChain::new(4.0, 0.9, 10).unwrap();
        assert!(highpass_box_chain(&chi, 8, None).is_err());
    }

    #[test]
    fn witness_solves_the_adjoint_system() {
        let sys = nscl();
        let sep = separation_radius(&sys).unwrap();
        let om = TorusSubset::arc(0.0, PI).unwrap();
        let w = build_witness(&sys, &sep, &om, 0.5 * PI, 8, None).unwrap();
        let g0 = w.g(0.0);
        for t in [0.3, 1.0, 0.5 * PI] {
            let e = evolve_adjoint(&sys, &g0, t).unwrap();
            let err = e.sub(&w.g(t)).l2_norm();
            assert!(err <= 1e-9 * g0.l2_norm(), "t = {t}: {err}");
        }
        // exact transport misses omega: sampled oracle on a grid of omega
        let q = crate::numerics::Quadrature::gauss_panels(0.0, w.t, 4, 8);
        let mut acc = 0.0;
        for (&t, &wt) in q.nodes.iter().zip(&q.weights) {
            let gt = w.g_tilde(t);
            let ng = (4 * gt.nmax + 1).next_power_of_two();
            let vals = gt.synthesize(ng).unwrap();
            let dx = TWO_PI / ng as f64;
            for (j, v) in vals.iter().enumerate() {
                if om.contains(j as f64 * dx) {
                    acc += wt * dx * v.norm_squared();
                }
            }
        }
        assert!(acc.sqrt() <= 1e-10 * w.chi_n.norm(), "{}", acc.sqrt());
        assert!(w.final_norm_sq() >= w.lower_bound_constant().powi(2) * w.chi_n.norm().powi(2) * (1.0 - 1e-12));
        // the direct ratio sits below the defect bound
        let den = w.final_norm_sq();
        assert!(w.observability_ratio(&om).unwrap() <= w.defect_bound(16) / den);
    }

    #[test]
    fn decoupled_witness_is_pure_transport() {
        let sys = SystemMatrices::new(
            1,
            1,
            real_mat(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            real_mat(1, 1, &[1.0]),
            CMat::zeros(2, 2),
            identity(2),
        )
        .unwrap();
        let sep = separation_radius(&sys).unwrap();
        let om = TorusSubset::arc(0.0, PI).unwrap();
        let w = build_witness(&sys, &sep, &om, 1.0, sep.n0.max(4), None).unwrap();
        assert!(w.approximation_error(8) < 1e-12);
    }

    #[test]
    fn witness_refuses_long_horizons() {
        let sys = nscl();
        let sep = separation_radius(&sys).unwrap();
        let om = TorusSubset::arc(0.0, PI).unwrap();
        let e = build_witness(&sys, &sep, &om, 1.1 * PI, 8, None).err().unwrap();
        assert!(e.to_string().contains("T >= T* for this geometry"));
        assert!(build_witness(&sys, &sep, &TorusSubset::full(), 0.1, 8, None).is_err());
    }

    #[test]
    fn windowed_energy_matches_time_quadrature() {
        let sys = nscl();
        let sep = separation_radius(&sys).unwrap();
        let om = TorusSubset::arc(0.0, PI).unwrap();
        let w = build_witness(&sys, &sep, &om, 0.5 * PI, 8, None).unwrap();
        // an observation set that the witness does cross
        let seen = TorusSubset::arc(2.0, 5.5).unwrap();
        let a = w.observed_energy(&seen, CHEB_NODES).unwrap();
        let b = w.observed_energy(&seen, 2 * CHEB_NODES).unwrap();
        assert!((a - b).abs() <= 1e-8 * b, "{a} {b}");
        let q = crate::numerics::Quadrature::gauss_panels(0.0, w.t, 64, 8);
        let direct: f64 = q
            .nodes
            .iter()
            .zip(&q.weights)
            .map(|(&t, &wt)| {
                let g = w.g(t);
                wt * crate::dynamics::omega_norm_sq(&g, &seen, None, crate::dynamics::exact_grid(g.nmax)).unwrap()
            })
            .sum();
        assert!((a - direct).abs() <= 1e-4 * direct, "{a} {direct}");
    }

    #[test]
    fn sol_scan_on_the_b_zero_edge_case_matches_everywhere() {
        let sys = SystemMatrices::new(
            1,
            1,
            identity(2),
            real_mat(1, 1, &[1.0]),
            CMat::zeros(2, 2),
            identity(2),
        )
        .unwrap();
        // With A = I the first component of the adjoint is transported as
        // g0(x + t) at every n.
        let r = pure_transport_space(&sys, -1.0, 8).unwrap();
        assert_eq!(r.count(), 16);
    }
}
