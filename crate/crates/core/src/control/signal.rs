//! Space-time control fields in closed form.
//!
//! A piece lives on a time window and has the shape
//!
//! ```text
//! u(t, x) = rho1(t) rho2(x) sum_k mask * M^* Phi_k exp(-(t_f - t) G_k) lambda_k e^{ikx}
//! ```
//!
//! where `Phi_k exp(-s G_k) = exp(-s L_k^*) Phi_k` spans an adjoint-invariant
//! subspace of mode `k`. Every control produced by the synthesis routines is
//! a sum of such pieces, which makes them smooth in time and exactly
//! supported in `window x omega`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::FftPlanner;

use crate::algebra::TorusSubset;
use crate::numerics::{c, CMat, CVec, ExpGenerator, Quadrature, C, IM};
use crate::{Error, Result};

/// Gauss-Legendre order used on every time panel.
pub const GL_ORDER: usize = 8;

fn psi(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else {
        (-1.0 / s).exp()
    }
}

/// Smooth step: 0 for `s <= 0`, 1 for `s >= 1`.
pub fn smooth_step(s: f64) -> f64 {
    let a = psi(s);
    let b = psi(1.0 - s);
    if a + b == 0.0 {
        return if s > 0.5 { 1.0 } else { 0.0 };
    }
    a / (a + b)
}

/// Time profile on `(0, 1)`: `exp(-1/tau)` near 0, `exp(-1/(1-tau))` near 1,
/// blended on `[1/4, 3/4]`.
pub fn rho1(tau: f64) -> f64 {
    if tau <= 0.0 || tau >= 1.0 {
        return 0.0;
    }
    let s = smooth_step(2.0 * (tau - 0.25));
    psi(tau) * (1.0 - s) + psi(1.0 - tau) * s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeWeight {
    /// `rho1` rescaled to the window.
    Smooth,
    /// 1 away from the ends, with smooth ramps over the given fraction of
    /// the window on each side.
    Plateau(f64),
    Constant,
}

impl TimeWeight {
    pub fn eval(&self, t: f64, window: (f64, f64)) -> f64 {
        let (a, b) = window;
        match self {
            TimeWeight::Smooth => rho1((t - a) / (b - a)),
            TimeWeight::Plateau(m) => {
                let tau = (t - a) / (b - a);
                if tau <= 0.0 || tau >= 1.0 {
                    return 0.0;
                }
                smooth_step(tau / m) * smooth_step((1.0 - tau) / m)
            }
            TimeWeight::Constant => {
                if t >= a && t <= b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Spatial cut-off `rho2` and its Fourier coefficients.
#[derive(Clone, Debug)]
pub struct SpatialWeight {
    /// `None` means the whole torus.
    pub omega: Option<TorusSubset>,
    /// Fraction of each arc used by the transition on either side.
    pub margin: f64,
    coeffs: Vec<C>,
    mmax: usize,
}

/// Fraction of each arc of omega left out of the plateau on each side.
pub const PLATEAU_MARGIN: f64 = 0.1;

impl SpatialWeight {
    pub fn full() -> Self {
        SpatialWeight {
            omega: None,
            margin: 0.0,
            coeffs: vec![c(1.0, 0.0)],
            mmax: 0,
        }
    }

    /// Plateau equal to 1 on omega shrunk by `margin` per side, 0 outside
    /// omega. Coefficients are tabulated for `|m| <= mmax`.
    pub fn plateau(omega: &TorusSubset, margin: f64, mmax: usize) -> Self {
        if omega.is_full() {
            let mut w = Self::full();
            w.mmax = mmax;
            w.coeffs = (0..=2 * mmax).map(|i| if i == mmax { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect();
            return w;
        }
        let mut w = SpatialWeight {
            omega: Some(omega.clone()),
            margin,
            coeffs: Vec::new(),
            mmax,
        };
        let ng = (4 * mmax + 1).next_power_of_two().max(4096);
        let mut buf: Vec<C> = (0..ng)
            .map(|j| c(w.value(2.0 * PI * j as f64 / ng as f64), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(ng).process(&mut buf);
        w.coeffs = (-(mmax as i64)..=mmax as i64)
            .map(|m| buf[m.rem_euclid(ng as i64) as usize] / ng as f64)
            .collect();
        w
    }

    pub fn value(&self, x: f64) -> f64 {
        let Some(om) = &self.omega else { return 1.0 };
        let y = x.rem_euclid(2.0 * PI);
        for (a, b) in om.arcs() {
            let h = (b - a) * self.margin;
            for shift in [0.0, 2.0 * PI, -2.0 * PI] {
                let z = y + shift;
                if z > a && z < b {
                    if h == 0.0 {
                        return 1.0;
                    }
                    return smooth_step((z - a) / h) * smooth_step((b - z) / h);
                }
            }
        }
        0.0
    }

    pub fn mmax(&self) -> usize {
        self.mmax
    }

    /// `hat rho2(m)`, zero beyond the tabulated range.
    pub fn coeff(&self, m: i64) -> C {
        if self.omega.is_none() && self.mmax == 0 {
            return if m == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) };
        }
        if m.unsigned_abs() as usize > self.mmax {
            return c(0.0, 0.0);
        }
        self.coeffs[(m + self.mmax as i64) as usize]
    }
}

/// One adjoint mode driving a control piece.
#[derive(Clone, Debug)]
pub struct KernelMode {
    pub k: i64,
    /// `d x r` basis of an invariant subspace of `L_k^*`.
    pub basis: CMat,
    /// Generator with `exp(-s L_k^*) basis = basis exp(-s gen)`.
    pub gen: Arc<ExpGenerator>,
    /// Coefficients in the basis (length `r`).
    pub coeff: CVec,
}

impl KernelMode {
    /// `M^* basis exp(-s gen)` as an `m x r` matrix.
    pub fn observe(&self, m_adj: &CMat, s: f64) -> CMat {
        m_adj * &self.basis * self.gen.exp(s)
    }
}

#[derive(Clone, Debug)]
pub struct ControlPiece {
    pub window: (f64, f64),
    /// Final time of the adjoint states in the kernel.
    pub t_final: f64,
    pub panels: usize,
    pub time_weight: TimeWeight,
    pub spatial: Arc<SpatialWeight>,
    /// Channels allowed to carry control.
    pub mask: Vec<bool>,
    /// Order `j` of the `d^j/dx^j` applied around the spatial cut-off.
    pub deriv_order: u32,
    /// `M^*`, `m x d`.
    pub m_adj: CMat,
    pub kernel: Vec<KernelMode>,
}

/// Per-node samples of a piece: nodes, weights and `c_k(t_q)`.
pub struct PieceSamples {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `coef[q][i]`: `c_{k_i}(t_q)` in `C^m`.
    pub coef: Vec<Vec<CVec>>,
}

impl ControlPiece {
    pub fn inputs(&self) -> usize {
        self.m_adj.nrows()
    }

    /// The same control delayed by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        let mut p = self.clone();
        p.window = (p.window.0 + dt, p.window.1 + dt);
        p.t_final += dt;
        p
    }

    pub fn quadrature(&self) -> Quadrature {
        Quadrature::gauss_panels(self.window.0, self.window.1, self.panels, GL_ORDER)
    }

    /// Quadrature restricted to `[window.0, min(window.1, t)]`.
    pub fn quadrature_until(&self, t: f64) -> Quadrature {
        if t >= self.window.1 {
            return self.quadrature();
        }
        Quadrature::gauss_panels(self.window.0, t.max(self.window.0), self.panels, GL_ORDER)
    }

    fn mask_vec(&self, v: &mut CVec) {
        for (i, m) in self.mask.iter().enumerate() {
            if !m {
                v[i] = c(0.0, 0.0);
            }
        }
    }

    /// `c_k(t)` for every kernel mode.
    pub fn coefficients(&self, t: f64) -> Vec<CVec> {
        let w = self.time_weight.eval(t, self.window);
        self.kernel
            .iter()
            .map(|km| {
                let mut v = km.observe(&self.m_adj, self.t_final - t) * &km.coeff * c(w, 0.0);
                self.mask_vec(&mut v);
                v
            })
            .collect()
    }

    pub fn samples(&self, q: &Quadrature) -> PieceSamples {
        use rayon::prelude::*;
        let coef = q.nodes.par_iter().map(|&t| self.coefficients(t)).collect();
        PieceSamples {
            nodes: q.nodes.clone(),
            weights: q.weights.clone(),
            coef,
        }
    }

    fn deriv(&self, n: i64) -> C {
        (IM * n as f64).powu(self.deriv_order)
    }

    /// Fourier coefficient `hat u_n` given the kernel coefficients at one time.
    pub fn action_from(&self, n: i64, coef: &[CVec]) -> CVec {
        let mut out = CVec::zeros(self.inputs());
        for (km, ck) in self.kernel.iter().zip(coef) {
            let w = self.spatial.coeff(n - km.k) * self.deriv(km.k).conj();
            if w != c(0.0, 0.0) {
                out += ck * w;
            }
        }
        out * self.deriv(n)
    }

    pub fn action(&self, n: i64, t: f64) -> CVec {
        if t <= self.window.0 || t >= self.window.1 {
            return CVec::zeros(self.inputs());
        }
        self.action_from(n, &self.coefficients(t))
    }

    /// Pointwise value `u(t, x)` (without truncation), for `deriv_order = 0`.
    pub fn field(&self, t: f64, x: f64) -> Result<CVec> {
        if self.deriv_order != 0 {
            return Err(Error::Precondition("pointwise field needs deriv_order = 0".into()));
        }
        if t <= self.window.0 || t >= self.window.1 {
            return Ok(CVec::zeros(self.inputs()));
        }
        let r2 = self.spatial.value(x);
        if r2 == 0.0 {
            return Ok(CVec::zeros(self.inputs()));
        }
        let mut s = CVec::zeros(self.inputs());
        for (km, ck) in self.kernel.iter().zip(self.coefficients(t)) {
            s += ck * C::from_polar(1.0, km.k as f64 * x);
        }
        Ok(s * c(r2, 0.0))
    }
}

/// A control on `(0, T) x torus`, the sum of its pieces.
#[derive(Clone, Debug, Default)]
pub struct ControlSignal {
    pub inputs: usize,
    pub pieces: Vec<ControlPiece>,
}

impl ControlSignal {
    pub fn zero(inputs: usize) -> Self {
        ControlSignal {
            inputs,
            pieces: Vec::new(),
        }
    }

    pub fn push(&mut self, p: ControlPiece) {
        self.pieces.push(p);
    }

    pub fn shifted(&self, dt: f64) -> Self {
        ControlSignal {
            inputs: self.inputs,
            pieces: self.pieces.iter().map(|p| p.shifted(dt)).collect(),
        }
    }

    pub fn extend(&mut self, other: ControlSignal) {
        self.pieces.extend(other.pieces);
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.kernel.iter().all(|k| k.coeff.norm() == 0.0))
    }

    pub fn action(&self, n: i64, t: f64) -> CVec {
        let mut s = CVec::zeros(self.inputs);
        for p in &self.pieces {
            s += p.action(n, t);
        }
        s
    }

    pub fn field(&self, t: f64, x: f64) -> Result<CVec> {
        let mut s = CVec::zeros(self.inputs);
        for p in &self.pieces {
            s += p.field(t, x)?;
        }
        Ok(s)
    }

    /// Latest time at which the control can be nonzero.
    pub fn end_time(&self) -> f64 {
        self.pieces.iter().map(|p| p.window.1).fold(0.0, f64::max)
    }

    /// `int int |u|^2 dx dt` over the truncated modes `|n| <= nmax`
    /// (Parseval, `2 pi sum |hat u_n|^2`).
    pub fn energy(&self, nmax: usize) -> f64 {
        let mut cuts: Vec<f64> = self.pieces.iter().flat_map(|p| [p.window.0, p.window.1]).collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let panels = self.pieces.iter().map(|p| p.panels).max().unwrap_or(1);
        let mut tot = 0.0;
        for w in cuts.windows(2) {
            let q = Quadrature::gauss_panels(w[0], w[1], panels, GL_ORDER);
            for (&t, &wt) in q.nodes.iter().zip(&q.weights) {
                let active: Vec<(&ControlPiece, Vec<CVec>)> = self
                    .pieces
                    .iter()
                    .filter(|p| t > p.window.0 && t < p.window.1)
                    .map(|p| (p, p.coefficients(t)))
                    .collect();
                for n in -(nmax as i64)..=nmax as i64 {
                    let mut v = CVec::zeros(self.inputs);
                    for (p, cf) in &active {
                        v += p.action_from(n, cf);
                    }
                    tot += wt * 2.0 * PI * v.norm_squared();
                }
            }
        }
        tot
    }

    /// Total number of kernel coefficients.
    pub fn kernel_size(&self) -> usize {
        self.pieces.iter().map(|p| p.kernel.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho1_tails_and_symmetry() {
        for tau in [0.01, 0.1, 0.2, 0.24] {
            assert!((rho1(tau) - (-1.0 / tau).exp()).abs() < 1e-300 + 1e-15 * rho1(tau));
            let u = 1.0 - tau;
            assert!((rho1(u) - (-1.0 / (1.0 - u)).exp()).abs() <= 1e-14 * rho1(u));
        }
        for tau in [0.3, 0.45, 0.6] {
            assert!((rho1(tau) - rho1(1.0 - tau)).abs() < 1e-15);
            assert!(rho1(tau) > 0.0);
        }
        assert_eq!(rho1(0.0), 0.0);
        assert_eq!(rho1(1.0), 0.0);
    }

    #[test]
    fn plateau_coefficients_resynthesize() {
        let om = TorusSubset::arc(0.5, 3.0).unwrap();
        let w = SpatialWeight::plateau(&om, PLATEAU_MARGIN, 1500);
        for x in [0.2, 0.6, 1.0, 2.0, 2.9, 4.0] {
            let mut s = c(0.0, 0.0);
            for m in -1500i64..=1500 {
                s += w.coeff(m) * C::from_polar(1.0, m as f64 * x);
            }
            assert!((s.re - w.value(x)).abs() < 1e-8, "x = {x}: {}", s.re - w.value(x));
        }
        assert_eq!(w.value(0.4), 0.0);
        assert_eq!(w.value(1.5), 1.0);
        assert!((w.coeff(0).re - w.value(1.5) * 0.0 - {
            let n = 100000;
            (0..n).map(|j| w.value(2.0 * PI * (j as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
        })
        .abs()
            < 1e-9);
    }

    #[test]
    fn full_weight_is_identity_convolution() {
        let w = SpatialWeight::full();
        assert_eq!(w.coeff(0), c(1.0, 0.0));
        assert_eq!(w.coeff(3), c(0.0, 0.0));
        assert_eq!(w.value(1.0), 1.0);
    }
}
