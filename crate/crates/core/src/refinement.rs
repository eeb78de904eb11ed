//! Off-grid refinement of the coarse estimate.
//!
//! Under the Fresnel model the effective channel has closed form
//! `z_i = sum_n a_pq(n)` with `i = qK + p`, where
//! `a_pq(n) = exp(j phi)` and
//! `phi = -(2 pi / lambda) (d_u^2 D / (2r) + d_u d (sin theta - y_n / r))`,
//! `D = q^2 - p^2`, `d = q - p`. Writing
//!
//! * `Z_r = c_r a / r^2`, `c_r = -j 2 pi d_u (d y_n - D d_u / 2) / lambda`
//! * `Z_t = c_t a`,       `c_t = -j 2 pi d d_u g_2 / lambda`
//!
//! the derivatives follow by the chain rule:
//!
//! * `dz/dr     = sum Z_r`
//! * `d2z/dr2   = sum Z_r (c_r / r^2 - 2 / r)`
//! * `dz/dt     = sum Z_t cos theta`
//! * `d2z/dt2   = sum Z_t (c_t cos^2 theta - sin theta)`
//!
//! Note `c_r / r^2 = Z_r / a`: the second-order factors carry `Z / a`, not
//! `Z` itself. The objective `beta = ||y~ - z||^2` is minimized by a damped
//! Newton step on each coordinate with its own scalar curvature
//! `2 ||dz||^2 - 2 Re{(y~ - z)^H d2z}`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{near_field_bounds, ris_positions, SystemConfig, UE_AXIS};
use crate::signaling::Observation;

/// `y` component of the UE array axis `g`.
pub const G2: f64 = 1.0;

/// Curvature below which the Newton step falls back to a fixed gradient step.
pub const MIN_CURVATURE: f64 = 1e-12;

/// Margin kept between the azimuth iterate and `+-pi/2`.
pub const THETA_MARGIN: f64 = 1e-3;

/// Step size, stopping tolerance and iteration cap for [`refine`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementSettings {
    /// Damping factor applied to every Newton step.
    pub gamma: f64,
    /// Stop once both `|dr|` and `|dtheta|` fall below this (same number
    /// for meters and radians).
    pub tau: f64,
    pub max_iter: usize,
    pub curvature: Curvature,
}

impl Default for RefinementSettings {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            tau: 1e-4,
            max_iter: 200,
            curvature: Curvature::GaussNewtonFloor,
        }
    }
}

/// Curvature used as the Newton denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Curvature {
    /// The exact second partial derivative of `beta`.
    Exact,
    /// `max(exact, 2 ||dz||^2)`: never below the Gauss-Newton term, so steps
    /// far from the optimum point downhill with a bounded length.
    #[default]
    GaussNewtonFloor,
}

impl std::fmt::Display for Curvature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Curvature::Exact => "exact",
            Curvature::GaussNewtonFloor => "gauss-newton-floor",
        })
    }
}

impl std::str::FromStr for Curvature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Curvature::Exact),
            "gauss-newton-floor" | "gn" => Ok(Curvature::GaussNewtonFloor),
            other => Err(Error::InvalidConfig(format!("unknown curvature rule '{other}'"))),
        }
    }
}

impl RefinementSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one refinement run.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementResult {
    pub r_hat: f64,
    pub theta_hat: f64,
    pub iterations: usize,
    /// `beta` at the start point and after every iteration.
    pub objective_trace: Vec<f64>,
    /// `(r, theta)` at the start point and after every iteration.
    pub iterates: Vec<(f64, f64)>,
    pub converged: bool,
}

/// The four model derivatives, each a `K^2` vector in `vec` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDerivatives {
    pub dr: Vec<Complex64>,
    pub drr: Vec<Complex64>,
    pub dtheta: Vec<Complex64>,
    pub dthetatheta: Vec<Complex64>,
}

/// First and second partial derivatives of `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveDerivatives {
    pub dr: f64,
    pub drr: f64,
    pub dtheta: f64,
    pub dthetatheta: f64,
    /// Gauss-Newton part `2 ||dz/dr||^2` of `drr`.
    pub gn_rr: f64,
    /// Gauss-Newton part `2 ||dz/dtheta||^2` of `dthetatheta`.
    pub gn_thetatheta: f64,
}

impl ObjectiveDerivatives {
    fn curvatures(&self, rule: Curvature) -> (f64, f64) {
        match rule {
            Curvature::Exact => (self.drr, self.dthetatheta),
            Curvature::GaussNewtonFloor => {
                (self.drr.max(self.gn_rr), self.dthetatheta.max(self.gn_thetatheta))
            }
        }
    }
}

/// Precomputed per-configuration constants of the Fresnel pair model.
///
/// Elements sharing a `y` coordinate contribute identical `a_pq` terms, so
/// the sum over elements runs over distinct `y` values with multiplicities.
#[derive(Debug, Clone)]
pub struct PairModel {
    k: usize,
    d_u: f64,
    wavenumber: f64,
    rows: Vec<(f64, f64)>,
}

impl PairModel {
    pub fn new(cfg: &SystemConfig) -> Self {
        let mut ys: Vec<f64> = ris_positions(cfg).iter().map(|s| UE_AXIS.dot(s)).collect();
        ys.sort_by(f64::total_cmp);
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for y in ys {
            match rows.last_mut() {
                Some((last, count)) if *last == y => *count += 1.0,
                _ => rows.push((y, 1.0)),
            }
        }
        Self {
            k: cfg.k_ue,
            d_u: cfg.d_u,
            wavenumber: 2.0 * PI / cfg.lambda,
            rows,
        }
    }

    pub fn antennas(&self) -> usize {
        self.k
    }

    fn check_range(r: f64) -> Result<()> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!("model range must be positive, got {r}")));
        }
        Ok(())
    }

    /// `z(r, theta)`.
    pub fn model_vector(&self, r: f64, theta: f64) -> Result<Vec<Complex64>> {
        Self::check_range(r)?;
        Ok(self.evaluate(r, theta, false).0)
    }

    /// `z` together with its four partial derivatives.
    pub fn model_with_derivatives(&self, r: f64, theta: f64) -> Result<(Vec<Complex64>, ModelDerivatives)> {
        Self::check_range(r)?;
        let (z, d) = self.evaluate(r, theta, true);
        Ok((z, d.expect("derivatives requested")))
    }

    fn evaluate(&self, r: f64, theta: f64, with_derivs: bool) -> (Vec<Complex64>, Option<ModelDerivatives>) {
        let k = self.k;
        let (sin_t, cos_t) = theta.sin_cos();
        let du = self.d_u;
        let kw = self.wavenumber;
        let zero = Complex64::new(0.0, 0.0);
        let mut z = vec![zero; k * k];
        let mut derivs = with_derivs.then(|| ModelDerivatives {
            dr: vec![zero; k * k],
            drr: vec![zero; k * k],
            dtheta: vec![zero; k * k],
            dthetatheta: vec![zero; k * k],
        });
        for q in 0..k {
            for p in 0..k {
                let i = q * k + p;
                if p == q {
                    z[i] = Complex64::new(self.rows.iter().map(|(_, w)| w).sum(), 0.0);
                    continue;
                }
                let big_delta = (q * q) as f64 - (p * p) as f64;
                let delta = q as f64 - p as f64;
                let common = du * du * big_delta / (2.0 * r) + du * delta * sin_t;
                // c_t is the same for every element
                let c_t = Complex64::new(0.0, -kw * delta * du * G2);
                let mut acc = zero;
                let (mut acc_r, mut acc_rr, mut acc_t, mut acc_tt) = (zero, zero, zero, zero);
                for &(y_n, weight) in &self.rows {
                    let phi = -kw * (common - du * delta * y_n / r);
                    let a = Complex64::from_polar(weight, phi);
                    acc += a;
                    if with_derivs {
                        let c_r = Complex64::new(0.0, -kw * du * (delta * y_n - big_delta * du / 2.0));
                        let z_r = c_r * a / (r * r);
                        acc_r += z_r;
                        acc_rr += z_r * (c_r / (r * r) - 2.0 / r);
                        let z_t = c_t * a;
                        acc_t += z_t * cos_t;
                        acc_tt += z_t * (c_t * cos_t * cos_t - sin_t);
                    }
                }
                z[i] = acc;
                if let Some(d) = derivs.as_mut() {
                    d.dr[i] = acc_r;
                    d.drr[i] = acc_rr;
                    d.dtheta[i] = acc_t;
                    d.dthetatheta[i] = acc_tt;
                }
            }
        }
        (z, derivs)
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.y_tilde.len() != self.k * self.k {
            return Err(Error::dims("observation length", self.k * self.k, obs.y_tilde.len()));
        }
        Ok(())
    }

    /// `beta = ||y~ - z(r, theta)||^2`.
    pub fn objective(&self, obs: &Observation, r: f64, theta: f64) -> Result<f64> {
        self.check_obs(obs)?;
        let z = self.model_vector(r, theta)?;
        Ok(residual_norm_sqr(&obs.y_tilde, &z))
    }

    /// `beta` and its derivatives at `(r, theta)`.
    pub fn objective_with_derivatives(
        &self,
        obs: &Observation,
        r: f64,
        theta: f64,
    ) -> Result<(f64, ObjectiveDerivatives)> {
        self.check_obs(obs)?;
        let (z, d) = self.model_with_derivatives(r, theta)?;
        let resid: Vec<Complex64> = obs.y_tilde.iter().zip(&z).map(|(y, z)| y - z).collect();
        let beta = resid.iter().map(|e| e.norm_sqr()).sum();
        let first = |dz: &[Complex64]| -2.0 * inner(&resid, dz).re;
        let gn = |dz: &[Complex64]| 2.0 * dz.iter().map(|v| v.norm_sqr()).sum::<f64>();
        let second = |dz: &[Complex64], d2z: &[Complex64]| gn(dz) - 2.0 * inner(&resid, d2z).re;
        Ok((
            beta,
            ObjectiveDerivatives {
                dr: first(&d.dr),
                drr: second(&d.dr, &d.drr),
                dtheta: first(&d.dtheta),
                dthetatheta: second(&d.dtheta, &d.dthetatheta),
                gn_rr: gn(&d.dr),
                gn_thetatheta: gn(&d.dtheta),
            },
        ))
    }
}

/// `x^H y`.
fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn residual_norm_sqr(y: &[Complex64], z: &[Complex64]) -> f64 {
    y.iter().zip(z).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// `z(r, theta)` for the given configuration.
pub fn model_vector(cfg: &SystemConfig, r: f64, theta: f64) -> Result<Vec<Complex64>> {
    PairModel::new(cfg).model_vector(r, theta)
}

/// Analytic `dz/dr`, `d2z/dr2`, `dz/dtheta`, `d2z/dtheta2`.
pub fn model_derivatives(cfg: &SystemConfig, r: f64, theta: f64) -> Result<ModelDerivatives> {
    Ok(PairModel::new(cfg).model_with_derivatives(r, theta)?.1)
}

/// `beta = ||y~ - z||^2`.
pub fn objective(obs: &Observation, cfg: &SystemConfig, r: f64, theta: f64) -> Result<f64> {
    PairModel::new(cfg).objective(obs, r, theta)
}

/// Partial derivatives of `beta`.
pub fn objective_derivatives(obs: &Observation, cfg: &SystemConfig, r: f64, theta: f64) -> Result<ObjectiveDerivatives> {
    Ok(PairModel::new(cfg).objective_with_derivatives(obs, r, theta)?.1)
}

fn coordinate_step(grad: f64, curvature: f64, settings: &RefinementSettings) -> f64 {
    if curvature > MIN_CURVATURE {
        settings.gamma * grad / curvature
    } else if grad == 0.0 {
        0.0
    } else {
        settings.gamma * settings.tau * 100.0 * grad.signum()
    }
}

/// Box the iterates are confined to: `r` in `[fresnel / 2, 2 rayleigh]`,
/// `|theta| <= pi/2 - THETA_MARGIN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub r_min: f64,
    pub r_max: f64,
    pub theta_max: f64,
}

impl SearchBox {
    pub fn for_config(cfg: &SystemConfig) -> Self {
        let b = near_field_bounds(cfg);
        Self {
            r_min: b.fresnel / 2.0,
            r_max: 2.0 * b.rayleigh,
            theta_max: FRAC_PI_2 - THETA_MARGIN,
        }
    }

    pub fn clamp(&self, r: f64, theta: f64) -> (f64, f64) {
        (r.clamp(self.r_min, self.r_max), theta.clamp(-self.theta_max, self.theta_max))
    }

    pub fn contains(&self, r: f64, theta: f64) -> bool {
        r >= self.r_min && r <= self.r_max && theta.abs() <= self.theta_max
    }
}

/// Damped per-coordinate Newton iteration from `start = (r, theta)`.
pub fn refine(
    obs: &Observation,
    cfg: &SystemConfig,
    start: (f64, f64),
    settings: &RefinementSettings,
) -> Result<RefinementResult> {
    refine_with(&PairModel::new(cfg), &SearchBox::for_config(cfg), obs, start, settings)
}

/// [`refine`] with a prebuilt model and search box.
pub fn refine_with(
    model: &PairModel,
    bounds: &SearchBox,
    obs: &Observation,
    start: (f64, f64),
    settings: &RefinementSettings,
) -> Result<RefinementResult> {
    settings.validate()?;
    let (r0, t0) = start;
    if !(r0 > 0.0 && r0.is_finite() && t0.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid refinement start ({r0}, {t0})")));
    }
    let (mut r, mut theta) = bounds.clamp(r0, t0);
    let (beta, mut d) = model.objective_with_derivatives(obs, r, theta)?;
    let mut trace = vec![beta];
    let mut iterates = vec![(r, theta)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iter {
        let (c_r, c_t) = d.curvatures(settings.curvature);
        let step_r = coordinate_step(d.dr, c_r, settings);
        let step_t = coordinate_step(d.dtheta, c_t, settings);
        let (next_r, next_t) = bounds.clamp(r - step_r, theta - step_t);
        if !(next_r.is_finite() && next_t.is_finite()) {
            return Err(Error::Numeric(format!("non-finite iterate at ({r}, {theta})")));
        }
        let (dr, dt) = (next_r - r, next_t - theta);
        r = next_r;
        theta = next_t;
        iterations += 1;
        let (beta, next_d) = model.objective_with_derivatives(obs, r, theta)?;
        trace.push(beta);
        iterates.push((r, theta));
        d = next_d;
        if dr.abs() < settings.tau && dt.abs() < settings.tau {
            converged = true;
            break;
        }
    }
    Ok(RefinementResult {
        r_hat: r,
        theta_hat: theta,
        iterations,
        objective_trace: trace,
        iterates,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{effective_channel, fresnel_channel, ChannelModel};
    use crate::geometry::UePosition;
    use crate::signaling::noiseless_observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, cfg: &SystemConfig) -> (f64, f64) {
        let b = near_field_bounds(cfg);
        (rng.random_range(b.fresnel..b.rayleigh), rng.random_range(-1.3..1.3))
    }

    // Central differences of z in each coordinate, computed from model_vector only.
    fn fd_first(cfg: &SystemConfig, r: f64, t: f64, in_r: bool, h: f64) -> Vec<Complex64> {
        let (plus, minus) = if in_r {
            (model_vector(cfg, r + h, t).unwrap(), model_vector(cfg, r - h, t).unwrap())
        } else {
            (model_vector(cfg, r, t + h).unwrap(), model_vector(cfg, r, t - h).unwrap())
        };
        plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    fn fd_second(cfg: &SystemConfig, r: f64, t: f64, in_r: bool, h: f64) -> Vec<Complex64> {
        let mid = model_vector(cfg, r, t).unwrap();
        let (plus, minus) = if in_r {
            (model_vector(cfg, r + h, t).unwrap(), model_vector(cfg, r - h, t).unwrap())
        } else {
            (model_vector(cfg, r, t + h).unwrap(), model_vector(cfg, r, t - h).unwrap())
        };
        (0..mid.len()).map(|i| (plus[i] - 2.0 * mid[i] + minus[i]) / (h * h)).collect()
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let scale: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
        diff / scale
    }

    #[test]
    fn single_antenna_model_is_element_count() {
        let cfg = SystemConfig::default().with_ue_antennas(1);
        assert_eq!(model_vector(&cfg, 2.0, 0.1).unwrap(), vec![Complex64::new(64.0, 0.0)]);
    }

    #[test]
    fn model_rejects_nonpositive_range() {
        let cfg = SystemConfig::default();
        assert!(model_vector(&cfg, 0.0, 0.0).is_err());
        assert!(model_derivatives(&cfg, -1.0, 0.0).is_err());
    }

    #[test]
    fn model_diagonal_and_conjugate_symmetry() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = cfg.k_ue;
        for _ in 0..20 {
            let (r, t) = random_point(&mut rng, &cfg);
            let z = model_vector(&cfg, r, t).unwrap();
            for p in 0..k {
                assert_eq!(z[p * k + p], Complex64::new(64.0, 0.0));
                for q in 0..k {
                    assert!((z[q * k + p] - z[p * k + q].conj()).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn model_matches_fresnel_gram() {
        let cfg = SystemConfig {
            ris_origin: nalgebra::Vector3::new(0.0, 0.2, -0.1),
            ..SystemConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (r, t) = random_point(&mut rng, &cfg);
            let z = model_vector(&cfg, r, t).unwrap();
            let g = effective_channel(&fresnel_channel(&cfg, &UePosition::new(r, t).unwrap()));
            for (a, b) in z.iter().zip(g.as_slice()) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn diagonal_derivatives_vanish() {
        let cfg = SystemConfig::default();
        let d = model_derivatives(&cfg, 2.3, 0.4).unwrap();
        for p in 0..cfg.k_ue {
            let i = p * cfg.k_ue + p;
            for v in [&d.dr, &d.drr, &d.dtheta, &d.dthetatheta] {
                assert_eq!(v[i], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn model_derivatives_match_finite_differences() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let (r, t) = random_point(&mut rng, &cfg);
            let d = model_derivatives(&cfg, r, t).unwrap();
            assert!(rel_err(&d.dr, &fd_first(&cfg, r, t, true, 1e-5 * r)) < 1e-4);
            assert!(rel_err(&d.dtheta, &fd_first(&cfg, r, t, false, 1e-6)) < 1e-4);
            assert!(rel_err(&d.drr, &fd_second(&cfg, r, t, true, 1e-4 * r)) < 1e-3);
            assert!(rel_err(&d.dthetatheta, &fd_second(&cfg, r, t, false, 1e-4)) < 1e-3);
        }
    }

    #[test]
    fn objective_zero_at_perfect_fit() {
        let cfg = SystemConfig::default();
        let z = model_vector(&cfg, 2.0, 0.3).unwrap();
        let obs = Observation::from_vector(z, f64::INFINITY, 0.0).unwrap();
        assert_eq!(objective(&obs, &cfg, 2.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn objective_positive_on_ring() {
        let cfg = SystemConfig::default();
        let truth = UePosition::new(2.4, -0.35).unwrap();
        let obs = noiseless_observation(&cfg, &truth, ChannelModel::Fresnel);
        assert!(objective(&obs, &cfg, truth.r, truth.theta).unwrap() < 1e-18);
        for j in 0..16 {
            let ang = j as f64 * PI / 8.0;
            let (r, t) = (truth.r + 0.05 * ang.cos(), truth.theta + 0.02 * ang.sin());
            assert!(objective(&obs, &cfg, r, t).unwrap() > 1e-6);
        }
    }

    #[test]
    fn objective_dimension_check() {
        let cfg = SystemConfig::default();
        let obs = Observation::from_vector(vec![Complex64::new(1.0, 0.0); 4], 0.0, 1.0).unwrap();
        assert!(objective(&obs, &cfg, 1.0, 0.0).is_err());
    }

    #[test]
    fn stationary_at_noiseless_minimum() {
        let cfg = SystemConfig::default();
        let truth = UePosition::new(3.1, 0.7).unwrap();
        let obs = noiseless_observation(&cfg, &truth, ChannelModel::Fresnel);
        let d = objective_derivatives(&obs, &cfg, truth.r, truth.theta).unwrap();
        assert!(d.dr.abs() < 1e-8 && d.dtheta.abs() < 1e-8, "{d:?}");
        assert!(d.drr > 0.0 && d.dthetatheta > 0.0);
    }

    #[test]
    fn objective_derivatives_match_finite_differences() {
        let cfg = SystemConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let truth = UePosition::new(2.0, 0.2).unwrap();
            let obs = noiseless_observation(&cfg, &truth, ChannelModel::Exact);
            let (r, t) = random_point(&mut rng, &cfg);
            let b = |r: f64, t: f64| objective(&obs, &cfg, r, t).unwrap();
            let d = objective_derivatives(&obs, &cfg, r, t).unwrap();
            let (hr, ht) = (1e-5 * r, 1e-6);
            let fd_r = (b(r + hr, t) - b(r - hr, t)) / (2.0 * hr);
            let fd_t = (b(r, t + ht) - b(r, t - ht)) / (2.0 * ht);
            assert!((d.dr - fd_r).abs() < 1e-4 * fd_r.abs().max(1.0), "{} vs {fd_r}", d.dr);
            assert!((d.dtheta - fd_t).abs() < 1e-4 * fd_t.abs().max(1.0), "{} vs {fd_t}", d.dtheta);
            let (hr, ht) = (1e-4 * r, 1e-4);
            let fd_rr = (b(r + hr, t) - 2.0 * b(r, t) + b(r - hr, t)) / (hr * hr);
            let fd_tt = (b(r, t + ht) - 2.0 * b(r, t) + b(r, t - ht)) / (ht * ht);
            assert!((d.drr - fd_rr).abs() < 1e-3 * fd_rr.abs().max(1.0), "{} vs {fd_rr}", d.drr);
            assert!((d.dthetatheta - fd_tt).abs() < 1e-3 * fd_tt.abs().max(1.0), "{} vs {fd_tt}", d.dthetatheta);
        }
    }

    #[test]
    fn start_at_truth_converges_immediately() {
        let cfg = SystemConfig::default();
        let truth = UePosition::new(2.6, -0.2).unwrap();
        let obs = noiseless_observation(&cfg, &truth, ChannelModel::Fresnel);
        let res = refine(&obs, &cfg, (truth.r, truth.theta), &RefinementSettings::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.objective_trace.len(), 2);
    }

    #[test]
    fn refines_from_nearby_start() {
        let cfg = SystemConfig::default();
        let truth = UePosition::new(2.6, -0.2).unwrap();
        let obs = noiseless_observation(&cfg, &truth, ChannelModel::Fresnel);
        let res = refine(&obs, &cfg, (2.8, -0.15), &RefinementSettings::default()).unwrap();
        assert!(res.converged, "{res:?}");
        assert!((res.r_hat - truth.r).abs() < 1e-3);
        assert!((res.theta_hat - truth.theta).abs() < 1e-4);
        assert_eq!(res.objective_trace.len(), res.iterations + 1);
        assert_eq!(res.iterates.len(), res.iterations + 1);
    }

    #[test]
    fn iterates_stay_in_box() {
        let cfg = SystemConfig::default();
        let bounds = SearchBox::for_config(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (r, t) = random_point(&mut rng, &cfg);
            let obs = noiseless_observation(&cfg, &UePosition::new(r, t).unwrap(), ChannelModel::Exact);
            // deliberately poor starts, including outside the box
            let start = (rng.random_range(0.05..15.0), rng.random_range(-1.57..1.57));
            let res = refine(&obs, &cfg, start, &RefinementSettings { max_iter: 40, ..Default::default() }).unwrap();
            assert!(res.iterates.iter().all(|&(r, t)| bounds.contains(r, t)));
            let max = res.objective_trace.iter().cloned().fold(f64::MIN, f64::max);
            assert!(*res.objective_trace.last().unwrap() <= max);
            assert!(res.iterations <= 40);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let cfg = SystemConfig::default();
        let obs = noiseless_observation(&cfg, &UePosition::new(2.0, 0.0).unwrap(), ChannelModel::Exact);
        let s = RefinementSettings::default();
        assert!(refine(&obs, &cfg, (0.0, 0.0), &s).is_err());
        assert!(refine(&obs, &cfg, (f64::NAN, 0.0), &s).is_err());
        for bad in [
            RefinementSettings { gamma: 0.0, ..s },
            RefinementSettings { gamma: 1.5, ..s },
            RefinementSettings { tau: 0.0, ..s },
            RefinementSettings { max_iter: 0, ..s },
        ] {
            assert!(refine(&obs, &cfg, (2.0, 0.0), &bad).is_err());
        }
    }

    #[test]
    fn flat_curvature_takes_bounded_gradient_step() {
        let s = RefinementSettings::default();
        assert_eq!(coordinate_step(3.0, -1.0, &s), 0.5 * 1e-4 * 100.0);
        assert_eq!(coordinate_step(-3.0, 0.0, &s), -0.5 * 1e-4 * 100.0);
        assert_eq!(coordinate_step(0.0, 0.0, &s), 0.0);
        assert_eq!(coordinate_step(4.0, 2.0, &s), 1.0);
    }
}
