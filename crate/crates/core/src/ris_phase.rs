//! RIS phase configuration and the received-SNR objective.
//!
//! With `Omega = diag(exp(j omega))` the phase-dependent SNR factor is
//! `||A^H Omega A||_F^2`. Vectorizing gives `H exp(j omega)` with the
//! Khatri-Rao matrix `H = [alpha_n (x) conj(alpha_n)]`, where `alpha_n` is
//! row `n` of `A`, so the objective is the quadratic form
//! `exp(j omega)^H C exp(j omega)` with `C = H^H H`,
//! `C[p][q] = |alpha_p^H alpha_q|^2 >= 0`. Every term is maximized when all
//! phase differences vanish, so the all-zero (identity) configuration is
//! optimal for any channel.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};

/// Diagonal RIS phase shifts, radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub omega: Vec<f64>,
}

impl PhaseConfig {
    pub fn new(omega: Vec<f64>) -> Self {
        Self { omega }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    /// Diagonal of `Omega`.
    pub fn coefficients(&self) -> Vec<Complex64> {
        self.omega.iter().map(|&w| Complex64::from_polar(1.0, w)).collect()
    }

    /// Draws each phase uniformly from `[0, 2 pi)`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self::new((0..n).map(|_| rng.random_range(0.0..TAU)).collect())
    }
}

/// `Omega* = I`: every element applies the same (zero) phase shift.
pub fn optimal_phase(n: usize) -> PhaseConfig {
    PhaseConfig::new(vec![0.0; n])
}

fn check_dims(a: &ChannelMatrix, phase: &PhaseConfig) -> Result<()> {
    if phase.len() != a.n_elements() {
        return Err(Error::dims("RIS phase vector", a.n_elements(), phase.len()));
    }
    Ok(())
}

/// `||A^H Omega A||_F^2`.
pub fn snr_channel_term(a: &ChannelMatrix, phase: &PhaseConfig) -> Result<f64> {
    check_dims(a, phase)?;
    Ok(snr_term_unchecked(a, &phase.coefficients()))
}

fn snr_term_unchecked(a: &ChannelMatrix, coeffs: &[Complex64]) -> f64 {
    let m = &a.entries;
    let k = m.ncols();
    let mut total = 0.0;
    for p in 0..k {
        for q in 0..k {
            let s: Complex64 = m
                .column(p)
                .iter()
                .zip(m.column(q).iter())
                .zip(coeffs)
                .map(|((x, y), w)| x.conj() * w * y)
                .sum();
            total += s.norm_sqr();
        }
    }
    total
}

/// Khatri-Rao matrix `H = A^T (.) A^H` of size `K^2 x N`.
///
/// Column `n` is `alpha_n (x) conj(alpha_n)`, so `H exp(j omega)` equals the
/// column-major vectorization of `A^H Omega A`.
pub fn khatri_rao_matrix(a: &ChannelMatrix) -> DMatrix<Complex64> {
    let k = a.n_antennas();
    DMatrix::from_fn(k * k, a.n_elements(), |i, n| {
        // Kronecker ordering: outer index from alpha_n, inner from conj(alpha_n)
        let (outer, inner) = (i / k, i % k);
        a.entries[(n, outer)] * a.entries[(n, inner)].conj()
    })
}

/// Gram matrix `C = H^H H`, entries `|alpha_p^H alpha_q|^2`.
pub fn khatri_rao_gram(a: &ChannelMatrix) -> DMatrix<f64> {
    let h = khatri_rao_matrix(a);
    h.ad_mul(&h).map(|z| z.re)
}

/// `exp(j omega)^H C exp(j omega)` as a complex number; the imaginary part
/// is rounding residue since `C` is real symmetric.
pub fn phase_quadratic_form(gram: &DMatrix<f64>, phase: &PhaseConfig) -> Complex64 {
    let c = phase.coefficients();
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..c.len() {
        for q in 0..c.len() {
            acc += c[p].conj() * gram[(p, q)] * c[q];
        }
    }
    acc
}

/// Result of comparing the identity configuration against random phases.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    pub trials: usize,
    pub optimum: f64,
    pub max_competitor: f64,
    pub margin: f64,
}

impl OptimalityReport {
    /// Margin relative to the optimum.
    pub fn relative_margin(&self) -> f64 {
        self.margin / self.optimum
    }

    /// True when no competitor beats the optimum beyond `1e-9` relative.
    pub fn holds(&self) -> bool {
        self.margin >= -1e-9 * self.optimum
    }
}

/// Evaluates the identity configuration against `trials` uniformly random
/// phase vectors. Competitor `t` draws from its own seeded stream, so the
/// report does not depend on how the work is scheduled.
pub fn verify_optimality(a: &ChannelMatrix, trials: usize, rng_seed: u64) -> Result<OptimalityReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("verification needs at least one competitor".into()));
    }
    let n = a.n_elements();
    let optimum = snr_term_unchecked(a, &vec![Complex64::new(1.0, 0.0); n]);
    let max_competitor = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::substream(rng_seed, &[t as u64]));
            snr_term_unchecked(a, &PhaseConfig::random(n, &mut rng).coefficients())
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(OptimalityReport {
        trials,
        optimum,
        max_competitor,
        margin: optimum - max_competitor,
    })
}
