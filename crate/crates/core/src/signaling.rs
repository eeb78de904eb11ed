//! Reference signalling, noisy reception and pseudo-inverse equalization.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{channel, effective_channel, ChannelMatrix, ChannelModel};
use crate::error::{Error, Result};
use crate::geometry::{SystemConfig, UePosition};
use crate::ris_phase::{optimal_phase, PhaseConfig};

/// `K x L` pilot block with `S S^H = (P_T / K) I_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSequence {
    pub entries: DMatrix<Complex64>,
    /// Total transmit power `P_T`, watts.
    pub p_t: f64,
}

impl ReferenceSequence {
    pub fn antennas(&self) -> usize {
        self.entries.nrows()
    }

    pub fn slots(&self) -> usize {
        self.entries.ncols()
    }

    /// Right inverse `S^+ = S^H (S S^H)^-1 = (K / P_T) S^H`.
    pub fn pseudo_inverse(&self) -> DMatrix<Complex64> {
        let scale = self.antennas() as f64 / self.p_t;
        self.entries.adjoint() * Complex64::new(scale, 0.0)
    }
}

/// Rows of an `L`-point DFT scaled to per-antenna power `P_T / K`.
pub fn make_reference_sequence(cfg: &SystemConfig) -> Result<ReferenceSequence> {
    let (k, l) = (cfg.k_ue, cfg.l_slots);
    if l < k {
        return Err(Error::InvalidConfig(format!(
            "reference sequence needs at least as many slots as antennas (L={l}, K={k})"
        )));
    }
    if !(cfg.p_t > 0.0) {
        return Err(Error::InvalidConfig(format!("p_t must be positive, got {}", cfg.p_t)));
    }
    let amp = (cfg.p_t / (k as f64 * l as f64)).sqrt();
    let entries = DMatrix::from_fn(k, l, |row, col| {
        // reduce the product first so large K*L keeps the phase accurate
        let idx = (row * col) % l;
        Complex64::from_polar(amp, -2.0 * PI * idx as f64 / l as f64)
    });
    Ok(ReferenceSequence { entries, p_t: cfg.p_t })
}

/// Noise variance for a given `P_T / sigma^2` in dB.
pub fn sigma2_from_snr_db(p_t: f64, snr_db: f64) -> f64 {
    p_t * 10f64.powf(-snr_db / 10.0)
}

/// Simulates `Y = A^H Omega A S + W` with circularly symmetric Gaussian
/// noise of variance `sigma2` per complex entry.
pub fn simulate_received(
    a: &ChannelMatrix,
    phase: &PhaseConfig,
    s: &ReferenceSequence,
    sigma2: f64,
    rng_seed: u64,
) -> Result<DMatrix<Complex64>> {
    if phase.len() != a.n_elements() {
        return Err(Error::dims("RIS phase vector", a.n_elements(), phase.len()));
    }
    if s.antennas() != a.n_antennas() {
        return Err(Error::dims("reference sequence rows", a.n_antennas(), s.antennas()));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be finite and non-negative, got {sigma2}"
        )));
    }
    let coeffs = phase.coefficients();
    let mut scaled = a.entries.clone();
    for (n, mut row) in scaled.row_iter_mut().enumerate() {
        row *= coeffs[n];
    }
    let mut y = a.entries.ad_mul(&scaled) * &s.entries;
    if sigma2 > 0.0 {
        let std = (sigma2 / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for v in y.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(std * re, std * im);
        }
    }
    Ok(y)
}

/// Equalized observation `y~ = vec(Y S^+)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Column-major `vec(Y S^+)`, length `K^2`.
    pub y_tilde: Vec<Complex64>,
    /// `P_T / sigma^2` in dB (`+inf` when noiseless).
    pub snr_db: f64,
    pub sigma2: f64,
}

impl Observation {
    /// Wraps a raw `K^2` vector; fails if the length is not a perfect square.
    pub fn from_vector(y_tilde: Vec<Complex64>, snr_db: f64, sigma2: f64) -> Result<Self> {
        let k = (y_tilde.len() as f64).sqrt().round() as usize;
        if k * k != y_tilde.len() || k == 0 {
            return Err(Error::dims("observation length", "a nonzero perfect square", y_tilde.len()));
        }
        Ok(Self { y_tilde, snr_db, sigma2 })
    }

    /// Number of UE antennas `K`.
    pub fn antennas(&self) -> usize {
        (self.y_tilde.len() as f64).sqrt().round() as usize
    }
}

/// Applies the right inverse of the pilot block and vectorizes column-major,
/// so entry `(p, q)` of `Y S^+` sits at index `q K + p`.
pub fn equalize(y: &DMatrix<Complex64>, s: &ReferenceSequence, sigma2: f64) -> Result<Observation> {
    if y.shape() != s.entries.shape() {
        return Err(Error::dims(
            "received block",
            format!("{:?}", s.entries.shape()),
            format!("{:?}", y.shape()),
        ));
    }
    let y_tilde = y * s.pseudo_inverse();
    Ok(Observation {
        y_tilde: y_tilde.as_slice().to_vec(),
        snr_db: 10.0 * (s.p_t / sigma2).log10(),
        sigma2,
    })
}

/// Full forward path for one UE: channel, identity RIS, pilots, noise, equalizer.
pub fn observe(
    cfg: &SystemConfig,
    pos: &UePosition,
    model: ChannelModel,
    sigma2: f64,
    rng_seed: u64,
) -> Result<Observation> {
    let a = channel(cfg, pos, model);
    let s = make_reference_sequence(cfg)?;
    let y = simulate_received(&a, &optimal_phase(a.n_elements()), &s, sigma2, rng_seed)?;
    equalize(&y, &s, sigma2)
}

/// Noiseless observation `vec(A^H A)`.
pub fn noiseless_observation(cfg: &SystemConfig, pos: &UePosition, model: ChannelModel) -> Observation {
    let g = effective_channel(&channel(cfg, pos, model));
    Observation {
        y_tilde: g.as_slice().to_vec(),
        snr_db: f64::INFINITY,
        sigma2: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::exact_channel;
    use approx::assert_abs_diff_eq;

    fn cfg_k(k: usize) -> SystemConfig {
        SystemConfig::default().with_ue_antennas(k)
    }

    fn assert_scaled_identity(m: &DMatrix<Complex64>, scale: f64, tol: f64) {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let expected = if i == j { scale } else { 0.0 };
                assert!((m[(i, j)] - Complex64::new(expected, 0.0)).norm() < tol, "({i},{j}) = {}", m[(i, j)]);
            }
        }
    }

    #[test]
    fn scalar_sequence() {
        let s = make_reference_sequence(&SystemConfig { p_t: 1.0, ..cfg_k(1) }).unwrap();
        assert_eq!(s.entries.shape(), (1, 1));
        assert_abs_diff_eq!(s.entries[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.entries[(0, 0)].im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sequence_gram_and_inverse() {
        let s = make_reference_sequence(&cfg_k(4)).unwrap();
        assert_scaled_identity(&(&s.entries * s.entries.adjoint()), 0.25, 1e-12);
        assert_scaled_identity(&(&s.entries * s.pseudo_inverse()), 1.0, 1e-10);

        // more slots than antennas, non-unit power
        let cfg = SystemConfig { l_slots: 11, p_t: 2.5, ..cfg_k(6) };
        let s = make_reference_sequence(&cfg).unwrap();
        assert_scaled_identity(&(&s.entries * s.entries.adjoint()), 2.5 / 6.0, 1e-12);
        assert_scaled_identity(&(&s.entries * s.pseudo_inverse()), 1.0, 1e-10);
    }

    #[test]
    fn too_few_slots() {
        let cfg = SystemConfig { l_slots: 3, ..cfg_k(4) };
        assert!(make_reference_sequence(&cfg).is_err());
    }

    #[test]
    fn noiseless_reception() {
        let cfg = cfg_k(4);
        let a = exact_channel(&cfg, &UePosition::new(2.0, 0.3).unwrap());
        let s = make_reference_sequence(&cfg).unwrap();
        let y = simulate_received(&a, &optimal_phase(64), &s, 0.0, 1).unwrap();
        let expected = a.entries.ad_mul(&a.entries) * &s.entries;
        assert!((y - expected).iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn reception_is_seed_deterministic() {
        let cfg = cfg_k(3);
        let a = exact_channel(&cfg, &UePosition::new(2.0, 0.3).unwrap());
        let s = make_reference_sequence(&cfg).unwrap();
        let phase = optimal_phase(64);
        let y1 = simulate_received(&a, &phase, &s, 0.3, 77).unwrap();
        let y2 = simulate_received(&a, &phase, &s, 0.3, 77).unwrap();
        let y3 = simulate_received(&a, &phase, &s, 0.3, 78).unwrap();
        assert_eq!(y1, y2);
        assert_ne!(y1, y3);
    }

    #[test]
    fn reception_argument_errors() {
        let cfg = cfg_k(2);
        let a = exact_channel(&cfg, &UePosition::new(2.0, 0.3).unwrap());
        let s = make_reference_sequence(&cfg).unwrap();
        assert!(simulate_received(&a, &optimal_phase(64), &s, -1.0, 0).is_err());
        assert!(simulate_received(&a, &optimal_phase(63), &s, 0.0, 0).is_err());
        let s3 = make_reference_sequence(&cfg_k(3)).unwrap();
        assert!(simulate_received(&a, &optimal_phase(64), &s3, 0.0, 0).is_err());
    }

    #[test]
    fn noise_power_per_entry() {
        // 1e5 complex draws: 250 trials of a 20 x 20 block
        let cfg = SystemConfig { n_y: 1, n_z: 1, ..cfg_k(20) };
        let zero = ChannelMatrix {
            entries: DMatrix::zeros(1, 20),
            model: ChannelModel::Exact,
        };
        let s = make_reference_sequence(&cfg).unwrap();
        let sigma2 = 0.37;
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..250 {
            let w = simulate_received(&zero, &optimal_phase(1), &s, sigma2, seed).unwrap();
            total += w.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += w.len();
        }
        assert_eq!(count, 100_000);
        assert!((total / count as f64 - sigma2).abs() < 0.01 * sigma2);
    }

    #[test]
    fn equalized_noise_variance() {
        let k = 4;
        let cfg = SystemConfig { n_y: 1, n_z: 1, p_t: 2.0, ..cfg_k(k) };
        let zero = ChannelMatrix {
            entries: DMatrix::zeros(1, k),
            model: ChannelModel::Exact,
        };
        let s = make_reference_sequence(&cfg).unwrap();
        let sigma2 = 0.5;
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..5000 {
            let y = simulate_received(&zero, &optimal_phase(1), &s, sigma2, seed).unwrap();
            let obs = equalize(&y, &s, sigma2).unwrap();
            total += obs.y_tilde.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += obs.y_tilde.len();
        }
        let expected = sigma2 * k as f64 / cfg.p_t;
        assert!((total / count as f64 - expected).abs() < 0.02 * expected);
    }

    #[test]
    fn noiseless_equalization_recovers_gram() {
        let cfg = SystemConfig::default();
        let pos = UePosition::new(1.9, -0.6).unwrap();
        let obs = observe(&cfg, &pos, ChannelModel::Exact, 0.0, 0).unwrap();
        let reference = noiseless_observation(&cfg, &pos, ChannelModel::Exact);
        assert_eq!(obs.y_tilde.len(), 64);
        assert!(obs.snr_db.is_infinite());
        for (x, y) in obs.y_tilde.iter().zip(&reference.y_tilde) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn single_antenna_observation() {
        let cfg = cfg_k(1);
        let pos = UePosition::new(1.9, -0.6).unwrap();
        let obs = observe(&cfg, &pos, ChannelModel::Exact, 0.0, 0).unwrap();
        assert_eq!(obs.y_tilde.len(), 1);
        assert_abs_diff_eq!(obs.y_tilde[0].re, 64.0, epsilon = 1e-10);
    }

    #[test]
    fn equalize_shape_mismatch() {
        let s = make_reference_sequence(&cfg_k(3)).unwrap();
        assert!(equalize(&DMatrix::zeros(2, 3), &s, 0.1).is_err());
    }

    #[test]
    fn sigma_from_snr() {
        assert_abs_diff_eq!(sigma2_from_snr_db(1.0, 10.0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(sigma2_from_snr_db(1.0, 30.0), 1e-3, epsilon = 1e-15);
        assert_eq!(sigma2_from_snr_db(1.0, f64::INFINITY), 0.0);
    }
}
