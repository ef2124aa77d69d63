//! Exact control of the scalar transport equation `f_t + mu f_x = u 1_omega`
//! by a cut-off along characteristics.

use std::f64::consts::PI;

use super::signal::smooth_step;
use crate::algebra::TorusSubset;
use crate::dynamics::FourierState;
use crate::numerics::{CVec, Quadrature};
use crate::{Error, Result};

/// Smallest admissible `min |Q_x|`.
pub const Q_FLOOR: f64 = 1e-8;
const Q_PANELS: usize = 6;
const Q_ORDER: usize = 12;

/// Plateau bump on `(lo, hi)` with ramps of width `h`.
fn bump(s: f64, lo: f64, hi: f64, h: f64) -> f64 {
    if s <= lo || s >= hi {
        return 0.0;
    }
    smooth_step((s - lo) / h) * smooth_step((hi - s) / h)
}

/// Tensor cut-off `eta(t, x)` supported in `(delta, T' - delta) x (a + delta, b - delta)`,
/// equal to 1 once `delta` further inside.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub a: f64,
    pub b: f64,
    pub tprime: f64,
    pub mu: f64,
    pub delta: f64,
    /// `Q_x` on the grid `x_j = 2 pi j / len`.
    pub q_table: Vec<f64>,
    pub q_min: f64,
}

impl Cutoff {
    pub fn eta(&self, t: f64, x: f64) -> f64 {
        let tb = bump(t, self.delta, self.tprime - self.delta, self.delta);
        if tb == 0.0 {
            return 0.0;
        }
        // Representative of x in [a, a + 2 pi).
        let y = self.a + (x - self.a).rem_euclid(2.0 * PI);
        tb * bump(y, self.a + self.delta, self.b - self.delta, self.delta)
    }

    /// Times in `[0, T']` where the characteristic from `x` crosses a ramp
    /// edge of `eta`, sorted, with both ends included.
    fn breakpoints(&self, x: f64) -> Vec<f64> {
        let d = self.delta;
        let mut bp = vec![0.0, d, 2.0 * d, self.tprime - 2.0 * d, self.tprime - d, self.tprime];
        for e in [self.a + d, self.a + 2.0 * d, self.b - 2.0 * d, self.b - d] {
            // Crossings solve x + mu s = e + 2 pi k with 0 < s < T'.
            let reach = self.mu.abs() * self.tprime;
            let kmin = ((x - e - reach) / (2.0 * PI)).floor() as i64;
            let kmax = ((x - e + reach) / (2.0 * PI)).ceil() as i64;
            for k in kmin..=kmax {
                let s = (e + 2.0 * PI * k as f64 - x) / self.mu;
                if s > 0.0 && s < self.tprime {
                    bp.push(s);
                }
            }
        }
        bp.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bp.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        bp
    }

    /// `Q_x = int_0^{T'} eta(s, x + mu s) ds`, by Gauss-Legendre panels
    /// between the ramp crossings.
    pub fn q(&self, x: f64) -> f64 {
        self.breakpoints(x)
            .windows(2)
            .map(|w| {
                Quadrature::gauss_panels(w[0], w[1], Q_PANELS, Q_ORDER).integrate(|s| self.eta(s, x + self.mu * s))
            })
            .sum()
    }

    pub fn in_support(&self, t: f64, x: f64) -> bool {
        let y = self.a + (x - self.a).rem_euclid(2.0 * PI);
        t > self.delta && t < self.tprime - self.delta && y > self.a + self.delta && y < self.b - self.delta
    }
}

/// Build the cut-off and certify `min |Q_x| > 0` on a grid of `grid` points.
pub fn cutoff_eta(omega: &TorusSubset, tprime: f64, mu: f64, delta: f64, grid: usize) -> Result<Cutoff> {
    let arcs = omega.arcs();
    if omega.is_full() || arcs.len() != 1 {
        return Err(Error::Precondition("the cut-off needs omega to be a single strict arc".into()));
    }
    let (a, b) = arcs[0];
    if mu == 0.0 || tprime <= (2.0 * PI - (b - a)) / mu.abs() {
        return Err(Error::Precondition(format!(
            "T' = {tprime:.4} must exceed (2 pi - |omega|) / |mu| = {:.4}",
            (2.0 * PI - (b - a)) / mu.abs()
        )));
    }
    if !(delta > 0.0) || 4.0 * delta >= (b - a).min(tprime) {
        return Err(Error::Precondition(format!("delta = {delta} leaves an empty box")));
    }
    let mut cut = Cutoff {
        a,
        b,
        tprime,
        mu,
        delta,
        q_table: Vec::new(),
        q_min: 0.0,
    };
    cut.q_table = (0..grid).map(|j| cut.q(2.0 * PI * j as f64 / grid as f64)).collect();
    cut.q_min = cut.q_table.iter().cloned().fold(f64::INFINITY, f64::min);
    if cut.q_min < Q_FLOOR {
        return Err(Error::Precondition(format!(
            "min Q_x = {:.3e} on the grid: some characteristics miss the cut-off box, use a smaller delta",
            cut.q_min
        )));
    }
    Ok(cut)
}

/// Control steering `f0` to `ft` in time `T'` (componentwise).
#[derive(Clone, Debug)]
pub struct TransportControl {
    pub cutoff: Cutoff,
    pub f0: FourierState,
    pub ft: FourierState,
}

impl TransportControl {
    /// `u(t, x) = eta(t, x) Q_{x - mu t}^{-1} (f_T(x + mu (T' - t)) - f_0(x - mu t))`.
    pub fn eval(&self, t: f64, x: f64) -> CVec {
        let e = self.cutoff.eta(t, x);
        if e == 0.0 {
            return CVec::zeros(self.f0.dim);
        }
        let mu = self.cutoff.mu;
        let x0 = x - mu * t;
        let diff = self.ft.eval(x + mu * (self.cutoff.tprime - t)) - self.f0.eval(x0);
        diff * crate::numerics::c(e / self.cutoff.q(x0), 0.0)
    }
}

pub fn transport_control(f0: &FourierState, ft: &FourierState, cutoff: &Cutoff) -> Result<TransportControl> {
    if cutoff.q_table.is_empty() {
        return Err(Error::Precondition("cut-off has no Q table".into()));
    }
    if f0.dim != ft.dim {
        return Err(Error::Structural("f0 and fT have different dimensions".into()));
    }
    Ok(TransportControl {
        cutoff: cutoff.clone(),
        f0: f0.clone(),
        ft: ft.clone(),
    })
}

/// Final state at `x` by integrating the source along the characteristic
/// through `(T', x)`: `f(T', x) = f0(x - mu T') + int_0^{T'} u(s, x - mu (T' - s)) ds`.
pub fn characteristic_final_state<F: Fn(f64, f64) -> CVec>(
    f0: &FourierState,
    u: F,
    mu: f64,
    tprime: f64,
    x: f64,
    panels: usize,
) -> CVec {
    let quad = Quadrature::gauss_panels(0.0, tprime, panels, 10);
    let mut acc = f0.eval(x - mu * tprime);
    for (&s, &w) in quad.nodes.iter().zip(&quad.weights) {
        acc += u(s, x - mu * (tprime - s)) * crate::numerics::c(w, 0.0);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::c;

    #[test]
    fn q_positive_on_the_reference_geometry() {
        let om = TorusSubset::arc(0.0, PI + 0.3).unwrap();
        let tp = 1.1 * (2.0 * PI - PI - 0.3);
        let cut = cutoff_eta(&om, tp, 1.0, 0.02, 256).unwrap();
        assert!(cut.q_min > 0.0);
        // Independent check of one entry with a plain midpoint rule.
        let x = 1.3;
        let m = 200_000;
        let h = tp / m as f64;
        let mid: f64 = (0..m).map(|i| cut.eta((i as f64 + 0.5) * h, x + (i as f64 + 0.5) * h)).sum::<f64>() * h;
        assert!((mid - cut.q(x)).abs() < 1e-7);
    }

    #[test]
    fn oversized_delta_is_refused() {
        let om = TorusSubset::arc(0.0, PI + 0.3).unwrap();
        let tp = 1.1 * (2.0 * PI - PI - 0.3);
        assert!(cutoff_eta(&om, tp, 1.0, 0.1, 128).is_err());
        assert!(cutoff_eta(&TorusSubset::full(), 10.0, 1.0, 0.1, 64).is_err());
        assert!(cutoff_eta(&om, 0.5 * tp, 1.0, 0.05, 64).is_err());
    }

    #[test]
    fn zero_data_gives_zero_control() {
        let om = TorusSubset::arc(0.0, 2.0).unwrap();
        let cut = cutoff_eta(&om, 6.0, 1.0, 0.1, 64).unwrap();
        let z = FourierState::zeros(4, 1);
        let u = transport_control(&z, &z, &cut).unwrap();
        for (t, x) in [(1.0, 0.5), (3.0, 1.0), (5.0, 1.7)] {
            assert_eq!(u.eval(t, x)[0], c(0.0, 0.0));
        }
    }

    #[test]
    fn cos3_is_steered_to_rest() {
        let om = TorusSubset::arc(0.0, 2.0).unwrap();
        let tp = 6.0;
        let cut = cutoff_eta(&om, tp, 1.0, 0.1, 128).unwrap();
        let mut f0 = FourierState::zeros(4, 1);
        f0.set(3, CVec::from_element(1, c(0.5, 0.0)));
        f0.set(-3, CVec::from_element(1, c(0.5, 0.0)));
        let ft = FourierState::zeros(4, 1);
        let u = transport_control(&f0, &ft, &cut).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..64 {
            let x = 2.0 * PI * j as f64 / 64.0;
            let v = characteristic_final_state(&f0, |t, y| u.eval(t, y), 1.0, tp, x, 400);
            err = err.max(v.norm());
        }
        assert!(err <= 1e-6, "{err}");
    }
}
