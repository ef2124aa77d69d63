//! Symbol `E(z) = B + zA - z^2 K`, contour projections onto the hyperbolic
//! (near 0) and parabolic (near Sp D) eigenvalue groups, Kato's reduction
//! into per-speed branches, and the parabolic graph map.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::algebra::SystemMatrices;
use crate::numerics::{self, block, c, expm, identity, norm2, CMat, IM};
use crate::{Error, Result, C};

/// `E(z) = B + zA - z^2 K`.
pub fn eval_symbol(sys: &SystemMatrices, z: C) -> CMat {
    sys.b() + &sys.a * z - &sys.k * (z * z)
}

/// Separation data: every `|z| <= r` keeps the spectrum of `E(z)` away from
/// the circle of radius `big_r`; branch data is used for `|n| > n0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separation {
    pub r: f64,
    pub n0: usize,
    pub big_r: f64,
}

impl Separation {
    /// Replace the cutoff, keeping `1/n0 < r`.
    pub fn with_n0(mut self, n0: usize) -> Result<Self> {
        if (n0 as f64) * self.r < 1.0 {
            return Err(Error::Precondition(format!(
                "n0 = {n0} violates 1/n0 < r = {:.4}",
                self.r
            )));
        }
        self.n0 = n0;
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchConstants {
    pub r: f64,
    pub n0: usize,
    pub big_r: f64,
    pub kp: f64,
    pub cp: f64,
    pub kh: f64,
    pub ch: f64,
}

const R_FLOOR: f64 = 1e-6;
const RINGS: usize = 8;
const ANGLES: usize = 24;

fn disk_samples(r: f64) -> Vec<C> {
    let mut zs = Vec::with_capacity(RINGS * ANGLES);
    for i in 1..=RINGS {
        let rad = r * i as f64 / RINGS as f64;
        for j in 0..ANGLES {
            // offset so the imaginary axis is hit on every ring
            let th = 2.0 * PI * j as f64 / ANGLES as f64 + PI / 2.0;
            zs.push(C::from_polar(rad, th));
        }
    }
    zs
}

/// Contour radius and shift used in the reduction step.
#[derive(Clone, Debug)]
pub(crate) struct KatoSetup {
    pub speeds: Vec<f64>,
    pub mult: Vec<usize>,
    pub shift: f64,
    pub rho: f64,
}

pub(crate) fn kato_setup(sys: &SystemMatrices) -> Result<KatoSetup> {
    let speeds = sys.transport_speeds()?;
    let ev = numerics::eigenvalues(&sys.a_prime())?;
    let scale = 1.0 + speeds.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mult = speeds
        .iter()
        .map(|&m| ev.iter().filter(|l| (l.re - m).abs() <= 1e-8 * scale).count())
        .collect();
    let has_zero = speeds.iter().any(|m| m.abs() <= 1e-12);
    let shift = if has_zero && speeds.len() > 1 {
        1.0 + speeds.iter().map(|x| x.abs()).fold(0.0, f64::max)
    } else {
        0.0
    };
    let mut rho = f64::INFINITY;
    for w in speeds.windows(2) {
        rho = rho.min(w[1] - w[0]);
    }
    if speeds.len() > 1 {
        for m in &speeds {
            rho = rho.min((m + shift).abs());
        }
    }
    Ok(KatoSetup {
        speeds,
        mult,
        shift,
        rho: rho / 3.0,
    })
}

fn sample_ok(sys: &SystemMatrices, z: C, big_r: f64, kato: &KatoSetup) -> Result<bool> {
    let ev = numerics::eigenvalues(&eval_symbol(sys, z))?;
    let mut inside = Vec::new();
    for l in ev {
        if (l.norm() - big_r).abs() < big_r / 10.0 {
            return Ok(false);
        }
        if l.norm() < big_r {
            inside.push(l);
        }
    }
    if inside.len() != sys.d1 {
        return Ok(false);
    }
    if kato.speeds.len() > 1 {
        let mut counts = vec![0usize; kato.speeds.len()];
        for l in inside {
            let s = l / z;
            match kato.speeds.iter().position(|&m| (s - m).norm() <= 0.5 * kato.rho) {
                Some(k) => counts[k] += 1,
                None => return Ok(false),
            }
        }
        if counts != kato.mult {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Contour radius `R = min|Sp D| / 2` and the largest grid radius `r` on
/// which the eigenvalue groups stay separated.
pub fn separation_radius(sys: &SystemMatrices) -> Result<Separation> {
    let dspec = numerics::eigenvalues(&sys.diff)?;
    if dspec.iter().any(|l| l.re <= 0.0) {
        return Err(Error::Precondition("diffusion spectrum not in the right half plane".into()));
    }
    let big_r = 0.5 * dspec.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
    let kato = kato_setup(sys)?;
    let mut k = 0;
    loop {
        let r = 2f64.powf(-(k as f64) / 2.0);
        if r < R_FLOOR {
            return Err(Error::Numerical(format!(
                "no separation radius above {R_FLOOR:e}; the eigenvalue groups of E(z) merge near z = 0"
            )));
        }
        let mut ok = true;
        let mut bad = C::new(0.0, 0.0);
        for z in disk_samples(r) {
            if !sample_ok(sys, z, big_r, &kato)? {
                ok = false;
                bad = z;
                break;
            }
        }
        if ok {
            let n0 = (1.0 / r).ceil() as usize;
            return Ok(Separation { r, n0, big_r });
        }
        let _ = bad;
        k += 1;
    }
}

const M_START: usize = 64;
const M_CAP: usize = 8192;

/// `(1/2 pi i) \oint (zeta - mat)^{-1} d zeta` over the circle
/// `|zeta - center| = radius` by the trapezoid rule with node doubling.
pub fn contour_projection(mat: &CMat, center: C, radius: f64) -> Result<CMat> {
    let d = mat.nrows();
    let ev = numerics::eigenvalues(mat)?;
    for l in &ev {
        if ((l - center).norm() - radius).abs() < 1e-8 * radius.max(1e-300) {
            return Err(Error::Precondition(format!(
                "eigenvalue {l} lies on the contour |zeta - {center}| = {radius}"
            )));
        }
    }
    let id = identity(d);
    let term = |theta: f64| -> Result<CMat> {
        let w = C::from_polar(radius, theta);
        let zeta = center + w;
        let inv = (&id * zeta - mat)
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular resolvent on the contour".into()))?;
        Ok(inv * w)
    };
    let mut m = M_START;
    let mut sum = CMat::zeros(d, d);
    for j in 0..m {
        sum += term(2.0 * PI * j as f64 / m as f64)?;
    }
    let mut prev = &sum / c(m as f64, 0.0);
    loop {
        for j in 0..m {
            sum += term(2.0 * PI * (j as f64 + 0.5) / m as f64)?;
        }
        m *= 2;
        let cur = &sum / c(m as f64, 0.0);
        let diff = (&cur - &prev).camax();
        if diff < 1e-11 * (1.0 + cur.camax()) {
            return Ok(cur);
        }
        if m >= M_CAP {
            if diff > 1e-9 * (1.0 + cur.camax()) {
                return Err(Error::Resolution(format!(
                    "contour quadrature changed by {diff:.2e} at {m} nodes"
                )));
            }
            return Ok(cur);
        }
        prev = cur;
    }
}

/// `(Ph, Pp)` with `Ph` the projection on the eigenvalues inside `|zeta| < R`.
pub fn projection_split(sys: &SystemMatrices, z: C, big_r: f64) -> Result<(CMat, CMat)> {
    let e = eval_symbol(sys, z);
    let ph = contour_projection(&e, C::new(0.0, 0.0), big_r)?;
    let pp = identity(sys.dim()) - &ph;
    Ok((ph, pp))
}

/// Branch of the hyperbolic group attached to a speed `mu`:
/// `E(z) P = mu z P + z^2 R`.
#[derive(Clone, Debug)]
pub struct HyperbolicBranch {
    pub mu: f64,
    pub p: CMat,
    pub r: CMat,
}

fn remainder(e: &CMat, p: &CMat, mu: f64, z: C) -> CMat {
    (e * p - p * (z * mu)) / (z * z)
}

/// Split `Ph(z)` into the projections attached to each speed of `A'`.
pub fn hyperbolic_branches(sys: &SystemMatrices, z: C, ph: &CMat) -> Result<Vec<HyperbolicBranch>> {
    let kato = kato_setup(sys)?;
    hyperbolic_branches_with(sys, z, ph, &kato)
}

pub(crate) fn hyperbolic_branches_with(
    sys: &SystemMatrices,
    z: C,
    ph: &CMat,
    kato: &KatoSetup,
) -> Result<Vec<HyperbolicBranch>> {
    if z.norm() == 0.0 {
        return Err(Error::Precondition("reduction needs z != 0".into()));
    }
    let e = eval_symbol(sys, z);
    if kato.speeds.len() == 1 {
        let mu = kato.speeds[0];
        return Ok(vec![HyperbolicBranch {
            mu,
            p: ph.clone(),
            r: remainder(&e, ph, mu, z),
        }]);
    }
    let mut e1 = &e * ph / z;
    if kato.shift != 0.0 {
        e1 += ph * c(kato.shift, 0.0);
    }
    let mut out = Vec::with_capacity(kato.speeds.len());
    for (k, &mu) in kato.speeds.iter().enumerate() {
        let center = c(mu + kato.shift, 0.0);
        let p = contour_projection(&e1, center, kato.rho).map_err(|err| match err {
            Error::Precondition(m) => Error::Precondition(format!(
                "speed groups not separated at |z| = {:.3e} ({m}); increase n0",
                z.norm()
            )),
            other => other,
        })?;
        let tr = p.trace().re;
        if (tr - kato.mult[k] as f64).abs() > 1e-6 {
            return Err(Error::Precondition(format!(
                "branch of speed {mu} has trace {tr:.6} instead of {} at |z| = {:.3e}; increase n0",
                kato.mult[k],
                z.norm()
            )));
        }
        let r = remainder(&e, &p, mu, z);
        out.push(HyperbolicBranch { mu, p, r });
    }
    Ok(out)
}

/// Limit `P_mu(0) = diag(Pi_mu(A'), 0)` for each speed.
pub fn branch_projections_at_zero(sys: &SystemMatrices) -> Result<Vec<(f64, CMat)>> {
    let kato = kato_setup(sys)?;
    let eg = numerics::eig(&sys.a_prime())?;
    let vinv = numerics::inverse(&eg.vectors)?;
    let scale = 1.0 + kato.speeds.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let d = sys.dim();
    let mut out = Vec::new();
    for &mu in &kato.speeds {
        let mut sel = CMat::zeros(sys.d1, sys.d1);
        for (j, l) in eg.values.iter().enumerate() {
            if (l.re - mu).abs() <= 1e-8 * scale {
                sel[(j, j)] = c(1.0, 0.0);
            }
        }
        let pi = &eg.vectors * sel * &vinv;
        let mut p = CMat::zeros(d, d);
        p.view_mut((0, 0), (sys.d1, sys.d1)).copy_from(&pi);
        out.push((mu, p));
    }
    Ok(out)
}

/// `R_mu(0)` as the mean of the holomorphic `R_mu` over a circle inside the
/// separation disk.
pub fn remainders_at_zero(sys: &SystemMatrices, sep: &Separation) -> Result<Vec<(f64, CMat)>> {
    let kato = kato_setup(sys)?;
    let rad = 0.5 / sep.n0 as f64;
    let mean = |m: usize| -> Result<Vec<CMat>> {
        let mut acc: Vec<CMat> = vec![CMat::zeros(sys.dim(), sys.dim()); kato.speeds.len()];
        for j in 0..m {
            let z = C::from_polar(rad, 2.0 * PI * (j as f64 + 0.25) / m as f64);
            let (ph, _) = projection_split(sys, z, sep.big_r)?;
            for (k, b) in hyperbolic_branches_with(sys, z, &ph, &kato)?.into_iter().enumerate() {
                acc[k] += b.r;
            }
        }
        Ok(acc.into_iter().map(|a| a / c(m as f64, 0.0)).collect())
    };
    let coarse = mean(32)?;
    let fine = mean(64)?;
    for (a, b) in coarse.iter().zip(&fine) {
        if (a - b).camax() > 1e-9 * (1.0 + b.camax()) {
            return Err(Error::Resolution("mean value for R_mu(0) not converged".into()));
        }
    }
    Ok(kato.speeds.iter().cloned().zip(fine).collect())
}

/// `G(z) = (I - p11)^{-1} p12` where `p = Pp(z)^*`; parabolic adjoint states
/// satisfy `phi_1 = G phi_2`.
pub fn graph_map(sys: &SystemMatrices, pp: &CMat) -> Result<CMat> {
    let p = pp.adjoint();
    let h = 0..sys.d1;
    let q = sys.d1..sys.dim();
    let p11 = block(&p, h.clone(), h);
    let p12 = block(&p, 0..sys.d1, q);
    let nrm = norm2(&p11);
    if nrm >= 1.0 {
        return Err(Error::Precondition(format!("|p11| = {nrm:.3} >= 1, graph map undefined")));
    }
    let lhs = identity(sys.d1) - p11;
    lhs.lu()
        .solve(&p12)
        .ok_or_else(|| Error::Numerical("I - p11 singular".into()))
}

/// Reduced adjoint symbol acting on `phi_2` for states in the range of
/// `Pp(z)^*`: `(E^*)_{22} + (E^*)_{21} G`.
pub fn reduced_parabolic_adjoint(sys: &SystemMatrices, z: C, g: &CMat) -> CMat {
    let es = eval_symbol(sys, z).adjoint();
    let d = sys.dim();
    block(&es, sys.d1..d, sys.d1..d) + block(&es, sys.d1..d, 0..sys.d1) * g
}

/// All branch data at `z = i/n`.
#[derive(Clone, Debug)]
pub struct SpectralBranch {
    pub n: i64,
    pub ph: CMat,
    pub pp: CMat,
    pub hyper: Vec<HyperbolicBranch>,
    pub g: CMat,
}

impl SpectralBranch {
    pub fn z(&self) -> C {
        IM / self.n as f64
    }

    pub fn branch(&self, mu: f64) -> Option<&HyperbolicBranch> {
        self.hyper.iter().find(|b| (b.mu - mu).abs() <= 1e-9 * (1.0 + mu.abs()))
    }
}

pub fn spectral_branch(sys: &SystemMatrices, sep: &Separation, n: i64) -> Result<SpectralBranch> {
    let kato = kato_setup(sys)?;
    spectral_branch_with(sys, sep, &kato, n)
}

fn spectral_branch_with(sys: &SystemMatrices, sep: &Separation, kato: &KatoSetup, n: i64) -> Result<SpectralBranch> {
    if n.unsigned_abs() as usize <= sep.n0 {
        return Err(Error::Precondition(format!("|n| = {} is not above n0 = {}", n.abs(), sep.n0)));
    }
    let z = IM / n as f64;
    let (ph, pp) = projection_split(sys, z, sep.big_r)?;
    let hyper = hyperbolic_branches_with(sys, z, &ph, kato)?;
    let g = graph_map(sys, &pp)?;
    Ok(SpectralBranch { n, ph, pp, hyper, g })
}

/// Branch data for every `n0 < |n| <= nmax`.
#[derive(Clone, Debug)]
pub struct BranchTable {
    pub sep: Separation,
    pub nmax: usize,
    entries: Vec<Option<SpectralBranch>>,
}

impl BranchTable {
    pub fn build(sys: &SystemMatrices, sep: Separation, nmax: usize) -> Result<Self> {
        let kato = kato_setup(sys)?;
        let ns: Vec<i64> = (-(nmax as i64)..=nmax as i64).collect();
        let entries = ns
            .par_iter()
            .map(|&n| {
                if n.unsigned_abs() as usize <= sep.n0 {
                    Ok(None)
                } else {
                    spectral_branch_with(sys, &sep, &kato, n).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BranchTable { sep, nmax, entries })
    }

    pub fn n0(&self) -> usize {
        self.sep.n0
    }

    pub fn get(&self, n: i64) -> Option<&SpectralBranch> {
        let idx = n + self.nmax as i64;
        if idx < 0 || idx as usize >= self.entries.len() {
            return None;
        }
        self.entries[idx as usize].as_ref()
    }

    pub fn require(&self, n: i64) -> Result<&SpectralBranch> {
        self.get(n)
            .ok_or_else(|| Error::Precondition(format!("no branch data for mode {n}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SpectralBranch> {
        self.entries.iter().flatten()
    }
}

/// Sample points for the branch constants: a disk grid plus the points
/// `i/n` actually used by the Fourier modes.
fn constant_samples(n0: usize) -> Vec<C> {
    let r = 1.0 / n0 as f64;
    let mut zs = disk_samples(r);
    for n in (n0 + 1)..=(n0 + 64) {
        zs.push(IM / n as f64);
        zs.push(-IM / n as f64);
    }
    zs
}

fn tau_grid(cp: f64) -> Vec<f64> {
    let mut t = vec![0.0, 0.1, 1.0, 10.0];
    let hi = (20.0 / cp).max(10.0);
    for j in 0..80 {
        t.push(1e-3 * (hi / 1e-3).powf(j as f64 / 79.0));
    }
    t
}

/// Sampled estimates of `(Kp, cp)` and `(Kh, ch)`.
pub fn branch_constants(sys: &SystemMatrices, sep: &Separation) -> Result<BranchConstants> {
    let kato = kato_setup(sys)?;
    let zs = constant_samples(sep.n0);
    let data: Vec<(C, CMat, CMat, Vec<HyperbolicBranch>)> = zs
        .par_iter()
        .map(|&z| {
            let (ph, pp) = projection_split(sys, z, sep.big_r)?;
            let hyper = hyperbolic_branches_with(sys, z, &ph, &kato)?;
            Ok((z, ph, pp, hyper))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut min_re = f64::INFINITY;
    for (z, _, _, _) in &data {
        for l in numerics::eigenvalues(&eval_symbol(sys, *z))? {
            if l.norm() > sep.big_r {
                min_re = min_re.min(l.re);
            }
        }
    }
    let cp = 0.5 * min_re;
    if !(cp > 0.0) {
        return Err(Error::Numerical(format!(
            "parabolic decay rate {cp:.3e} is not positive on the sample"
        )));
    }
    let taus = tau_grid(cp);
    let kp = data
        .par_iter()
        .map(|(z, _, pp, _)| {
            let e = eval_symbol(sys, *z);
            taus.iter()
                .map(|&t| (cp * t).exp() * norm2(&(expm(&(&e * c(-t, 0.0))) * pp)))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let ch = data
        .iter()
        .flat_map(|(_, _, _, h)| h.iter().map(|b| norm2(&b.r)))
        .fold(0.0, f64::max);
    let tmax = 10.0;
    let ts: Vec<f64> = (0..=80).map(|j| -tmax + 2.0 * tmax * j as f64 / 80.0).collect();
    let mut kh = 0.0;
    for k in 0..kato.speeds.len() {
        let best = data
            .par_iter()
            .map(|(_, _, _, h)| {
                let b = &h[k];
                ts.iter()
                    .map(|&t| (-ch * t.abs()).exp() * norm2(&(expm(&(&b.r * c(t, 0.0))) * &b.p)))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        kh += best;
    }
    Ok(BranchConstants {
        r: sep.r,
        n0: sep.n0,
        big_r: sep.big_r,
        kp,
        cp,
        kh,
        ch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::real_mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sys(d1: usize, d2: usize, a: &[f64], dd: &[f64], k: &[f64]) -> SystemMatrices {
        let d = d1 + d2;
        SystemMatrices::new(
            d1,
            d2,
            real_mat(d, d, a),
            real_mat(d2, d2, dd),
            real_mat(d, d, k),
            CMat::identity(d, d),
        )
        .unwrap()
    }

    fn damped_wave() -> SystemMatrices {
        let b = 0.5;
        sys(1, 1, &[0.0; 4], &[1.0], &[1.0, 1.0 - b, -1.0, b - 1.0])
    }

    fn nscl() -> SystemMatrices {
        sys(1, 1, &[1.0, 1.0, 1.0, 1.0], &[1.0], &[0.0; 4])
    }

    fn two_speed() -> SystemMatrices {
        sys(
            2,
            1,
            &[1.0, 0.0, 0.5, 0.0, -1.0, 0.3, 0.2, 0.4, 0.0],
            &[2.0],
            &[0.1, 0.0, 0.0, 0.0, 0.2, 0.1, 0.3, 0.0, 0.5],
        )
    }

    #[test]
    fn symbol_values() {
        let s = nscl();
        assert!((eval_symbol(&s, C::new(0.0, 0.0)) - s.b()).camax() < 1e-15);
        let e = eval_symbol(&s, IM);
        let expect = CMat::from_row_slice(2, 2, &[IM, IM, IM, c(1.0, 1.0)]);
        assert!((e - expect).camax() < 1e-15);
        let h = 1e-7;
        let d = (eval_symbol(&damped_wave(), c(h, 0.0)) - eval_symbol(&damped_wave(), c(0.0, 0.0))) / c(h, 0.0);
        assert!((d - &damped_wave().a).camax() < 1e-6);
    }

    #[test]
    fn separation_examples() {
        let dec = sys(1, 1, &[0.0; 4], &[1.0], &[0.0; 4]);
        let s = separation_radius(&dec).unwrap();
        assert_eq!(s.big_r, 0.5);
        assert_eq!(s.r, 1.0);
        let s = separation_radius(&damped_wave()).unwrap();
        assert!(s.r > 0.0 && s.n0 <= 100);
        let four = sys(1, 1, &[0.0; 4], &[4.0], &[0.0; 4]);
        assert_eq!(separation_radius(&four).unwrap().big_r, 2.0);
    }

    #[test]
    fn projection_at_zero_is_coordinate_split() {
        for s in [damped_wave(), nscl(), two_speed()] {
            let sep = separation_radius(&s).unwrap();
            let (ph, pp) = projection_split(&s, c(0.0, 0.0), sep.big_r).unwrap();
            let mut expect = CMat::zeros(s.dim(), s.dim());
            for i in 0..s.d1 {
                expect[(i, i)] = c(1.0, 0.0);
            }
            assert!((&ph - &expect).camax() < 1e-12);
            assert!((ph + pp - identity(s.dim())).camax() < 1e-15);
        }
    }

    #[test]
    fn projection_matches_eigendecomposition() {
        let s = damped_wave();
        let sep = separation_radius(&s).unwrap();
        let z = IM / 20.0;
        let (ph, _) = projection_split(&s, z, sep.big_r).unwrap();
        let e = numerics::eig(&eval_symbol(&s, z)).unwrap();
        let vinv = numerics::inverse(&e.vectors).unwrap();
        let mut sel = CMat::zeros(2, 2);
        for (j, l) in e.values.iter().enumerate() {
            if l.norm() < sep.big_r {
                sel[(j, j)] = c(1.0, 0.0);
            }
        }
        let oracle = &e.vectors * sel * vinv;
        assert!((ph - oracle).camax() < 1e-12);
    }

    #[test]
    fn eigenvalue_on_contour_is_rejected() {
        let s = sys(1, 1, &[0.0; 4], &[1.0], &[0.0; 4]);
        assert!(matches!(projection_split(&s, c(0.0, 0.0), 1.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn decoupled_two_speeds_give_coordinate_branches() {
        let s = sys(2, 1, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0], &[1.0], &[0.0; 9]);
        let sep = separation_radius(&s).unwrap();
        for n in [5i64, 40, -300] {
            let z = IM / n as f64;
            let (ph, _) = projection_split(&s, z, sep.big_r).unwrap();
            let br = hyperbolic_branches(&s, z, &ph).unwrap();
            assert_eq!(br.len(), 2);
            for b in &br {
                let idx = if b.mu < 0.0 { 1 } else { 0 };
                let mut e = CMat::zeros(3, 3);
                e[(idx, idx)] = c(1.0, 0.0);
                assert!((&b.p - e).camax() < 1e-12);
                assert!(b.r.camax() < 1e-8);
            }
        }
    }

    #[test]
    fn branches_converge_to_limit() {
        let s = two_speed();
        let sep = separation_radius(&s).unwrap();
        let lim = branch_projections_at_zero(&s).unwrap();
        let sum: CMat = lim.iter().fold(CMat::zeros(3, 3), |a, (_, p)| a + p);
        let mut e = CMat::zeros(3, 3);
        e[(0, 0)] = c(1.0, 0.0);
        e[(1, 1)] = c(1.0, 0.0);
        assert!((sum - e).camax() < 1e-12);
        let mut prev = f64::INFINITY;
        for n in [4 * sep.n0 as i64, 16 * sep.n0 as i64, 64 * sep.n0 as i64] {
            let b = spectral_branch(&s, &sep, n).unwrap();
            let err: f64 = lim
                .iter()
                .map(|(mu, p)| (&b.branch(*mu).unwrap().p - p).camax())
                .fold(0.0, f64::max);
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn nscl_remainder_identity() {
        let s = nscl();
        let sep = separation_radius(&s).unwrap();
        let b = spectral_branch(&s, &sep, 50).unwrap();
        let z = b.z();
        let e = eval_symbol(&s, z);
        for h in &b.hyper {
            let res = &e * &h.p - &h.p * (z * h.mu) - &h.r * (z * z);
            assert!(res.camax() < 1e-10 * e.camax());
        }
    }

    #[test]
    fn graph_map_properties() {
        let s = damped_wave();
        let sep = separation_radius(&s).unwrap();
        let (_, pp0) = projection_split(&s, c(0.0, 0.0), sep.big_r).unwrap();
        assert!(graph_map(&s, &pp0).unwrap().camax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [sep.n0 as i64 + 1, 30, -77] {
            let b = spectral_branch(&s, &sep, n).unwrap();
            let phi2 = CMat::from_fn(1, 1, |_, _| c(rng.gen(), rng.gen()));
            let mut phi = CMat::zeros(2, 1);
            phi.view_mut((0, 0), (1, 1)).copy_from(&(&b.g * &phi2));
            phi.view_mut((1, 0), (1, 1)).copy_from(&phi2);
            assert!((b.pp.adjoint() * &phi - &phi).camax() < 1e-10);
        }
        let dec = sys(1, 1, &[0.0; 4], &[1.0], &[0.0; 4]);
        let sd = separation_radius(&dec).unwrap();
        assert!(spectral_branch(&dec, &sd, 7).unwrap().g.camax() < 1e-14);
    }

    #[test]
    fn reduced_adjoint_generator_acts_on_graph() {
        let s = damped_wave();
        let sep = separation_radius(&s).unwrap();
        let b = spectral_branch(&s, &sep, 12).unwrap();
        let e2 = reduced_parabolic_adjoint(&s, b.z(), &b.g);
        let es = eval_symbol(&s, b.z()).adjoint();
        let phi2 = CMat::from_element(1, 1, c(0.3, -1.0));
        let mut phi = CMat::zeros(2, 1);
        phi.view_mut((0, 0), (1, 1)).copy_from(&(&b.g * &phi2));
        phi.view_mut((1, 0), (1, 1)).copy_from(&phi2);
        let lhs = block(&(es * phi), 1..2, 0..1);
        assert!((lhs - e2 * phi2).camax() < 1e-12);
    }

    #[test]
    fn constants_examples() {
        let dec = sys(1, 1, &[0.0; 4], &[1.0], &[0.0; 4]);
        let sep = separation_radius(&dec).unwrap();
        let k = branch_constants(&dec, &sep).unwrap();
        assert!((k.cp - 0.5).abs() < 1e-12);
        assert!((k.kp - 1.0).abs() < 1e-9);
        assert!(k.ch < 1e-12);
        assert!((k.kh - 1.0).abs() < 1e-9);
        let s = damped_wave();
        let sep = separation_radius(&s).unwrap();
        let k = branch_constants(&s, &sep).unwrap();
        assert!(k.cp > 0.0 && k.kp.is_finite() && k.kh.is_finite() && k.ch.is_finite());
    }

    #[test]
    fn identities_on_random_disk_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for s in [damped_wave(), nscl(), two_speed()] {
            let sep = separation_radius(&s).unwrap();
            for _ in 0..200 {
                let rad = rng.gen::<f64>().sqrt() / sep.n0 as f64;
                let z = C::from_polar(rad.max(1e-6), 2.0 * PI * rng.gen::<f64>());
                let (ph, _) = projection_split(&s, z, sep.big_r).unwrap();
                let e = eval_symbol(&s, z);
                assert!((&ph * &ph - &ph).camax() < 1e-10);
                assert!((&ph * &e - &e * &ph).camax() < 1e-10 * e.camax());
                assert!((ph.trace().re - s.d1 as f64).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn projection_is_lipschitz_in_z() {
        let s = damped_wave();
        let sep = separation_radius(&s).unwrap();
        let z0 = IM / (2.0 * sep.n0 as f64);
        let (p0, _) = projection_split(&s, z0, sep.big_r).unwrap();
        let hs = [1e-2 / sep.n0 as f64, 1e-3 / sep.n0 as f64, 1e-4 / sep.n0 as f64, 1e-5 / sep.n0 as f64];
        let diffs: Vec<f64> = hs
            .iter()
            .map(|&h| (projection_split(&s, z0 + h, sep.big_r).unwrap().0 - &p0).camax())
            .collect();
        assert!(numerics::loglog_slope(&hs, &diffs) >= 0.9);
    }

    #[test]
    fn parabolic_semigroup_bound_per_mode() {
        for s in [damped_wave(), nscl()] {
            let sep = separation_radius(&s).unwrap();
            let k = branch_constants(&s, &sep).unwrap();
            for n in (sep.n0 as i64 + 1)..=(sep.n0 as i64 + 32) {
                for nn in [n, -n] {
                    let b = spectral_branch(&s, &sep, nn).unwrap();
                    let e = eval_symbol(&s, b.z());
                    for tau in [0.1, 1.0, 10.0] {
                        let lhs = norm2(&(expm(&(&e * c(-tau, 0.0))) * &b.pp));
                        assert!(lhs <= k.kp * (-k.cp * tau).exp() + 1e-8);
                    }
                }
            }
        }
    }
}
