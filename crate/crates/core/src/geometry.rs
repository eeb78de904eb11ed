//! Physical layout of the RIS and the UE array.
//!
//! The RIS is a uniform planar array in the `yz` plane whose first element
//! sits at `ris_origin`. The UE carries a uniform linear array on the `z = 0`
//! plane, oriented along `+y`, with its reference element at polar location
//! `(r, theta)` measured from the coordinate origin.
//!
//! Element indices are zero-based throughout the crate. RIS element `n`
//! decodes to `(n_y, n_z) = (n / n_z_count, n % n_z_count)`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Direction of the UE array axis.
pub const UE_AXIS: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// Geometry and physics constants shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Carrier wavelength in meters.
    pub lambda: f64,
    /// RIS elements along `y`.
    pub n_y: usize,
    /// RIS elements along `z`.
    pub n_z: usize,
    /// RIS spacing along `y`, meters.
    pub d_y: f64,
    /// RIS spacing along `z`, meters.
    pub d_z: f64,
    /// Number of UE antennas.
    pub k_ue: usize,
    /// UE antenna spacing, meters.
    pub d_u: f64,
    /// Position of RIS element `(0, 0)`.
    pub ris_origin: Vector3<f64>,
    /// Transmit power, watts.
    pub p_t: f64,
    /// Number of reference slots.
    pub l_slots: usize,
}

impl Default for SystemConfig {
    /// 8x8 RIS, 8-antenna UE, half-wavelength spacing at 3 GHz, 1 W.
    fn default() -> Self {
        Self {
            lambda: 0.1,
            n_y: 8,
            n_z: 8,
            d_y: 0.05,
            d_z: 0.05,
            k_ue: 8,
            d_u: 0.05,
            ris_origin: Vector3::zeros(),
            p_t: 1.0,
            l_slots: 8,
        }
    }
}

impl SystemConfig {
    /// Total number of RIS elements.
    pub fn n_elements(&self) -> usize {
        self.n_y * self.n_z
    }

    /// Returns a copy with a square `side x side` RIS.
    pub fn with_square_ris(&self, side: usize) -> Self {
        Self {
            n_y: side,
            n_z: side,
            ..self.clone()
        }
    }

    /// Returns a copy with `k` UE antennas and `k` reference slots.
    pub fn with_ue_antennas(&self, k: usize) -> Self {
        Self {
            k_ue: k,
            l_slots: k,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("d_y", self.d_y),
            ("d_z", self.d_z),
            ("d_u", self.d_u),
            ("p_t", self.p_t),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if self.n_y == 0 || self.n_z == 0 {
            return Err(Error::InvalidConfig(format!(
                "RIS must have at least one element (n_y={}, n_z={})",
                self.n_y, self.n_z
            )));
        }
        if self.k_ue == 0 {
            return Err(Error::InvalidConfig("k_ue must be at least 1".into()));
        }
        if self.l_slots < self.k_ue {
            return Err(Error::InvalidConfig(format!(
                "l_slots ({}) must be at least k_ue ({})",
                self.l_slots, self.k_ue
            )));
        }
        if !self.ris_origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidConfig("ris_origin must be finite".into()));
        }
        Ok(())
    }
}

/// Polar location of the UE reference element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UePosition {
    pub r: f64,
    pub theta: f64,
}

impl UePosition {
    /// Validated constructor: `r > 0`, `theta` strictly inside the front half-plane.
    pub fn new(r: f64, theta: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidArgument(format!("range must be positive, got {r}")));
        }
        if !(theta.is_finite() && theta.abs() < FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!(
                "azimuth must lie in (-pi/2, pi/2), got {theta}"
            )));
        }
        Ok(Self { r, theta })
    }

    /// Cartesian position `r * e(theta)`.
    pub fn cartesian(&self) -> Vector3<f64> {
        self.r * direction(self.theta)
    }
}

/// Unit vector `e(theta) = [cos theta, sin theta, 0]`.
pub fn direction(theta: f64) -> Vector3<f64> {
    let (s, c) = theta.sin_cos();
    Vector3::new(c, s, 0.0)
}

/// Position of UE element `k` (zero-based).
pub fn ue_element_position(cfg: &SystemConfig, pos: &UePosition, k: usize) -> Result<Vector3<f64>> {
    if k >= cfg.k_ue {
        return Err(Error::IndexOutOfRange {
            what: "UE element",
            index: k,
            len: cfg.k_ue,
        });
    }
    Ok(pos.cartesian() + k as f64 * cfg.d_u * UE_AXIS)
}

/// Linear RIS index from the `(n_y, n_z)` pair.
pub fn ris_linear_index(cfg: &SystemConfig, n_y: usize, n_z: usize) -> usize {
    n_y * cfg.n_z + n_z
}

/// Splits a linear RIS index into `(n_y, n_z)`.
pub fn ris_grid_index(cfg: &SystemConfig, n: usize) -> (usize, usize) {
    (n / cfg.n_z, n % cfg.n_z)
}

/// Position of RIS element `n` (zero-based).
pub fn ris_element_position(cfg: &SystemConfig, n: usize) -> Result<Vector3<f64>> {
    if n >= cfg.n_elements() {
        return Err(Error::IndexOutOfRange {
            what: "RIS element",
            index: n,
            len: cfg.n_elements(),
        });
    }
    let (iy, iz) = ris_grid_index(cfg, n);
    Ok(cfg.ris_origin + Vector3::new(0.0, iy as f64 * cfg.d_y, iz as f64 * cfg.d_z))
}

/// All RIS element positions in linear-index order.
pub fn ris_positions(cfg: &SystemConfig) -> Vec<Vector3<f64>> {
    (0..cfg.n_elements())
        .map(|n| {
            let (iy, iz) = ris_grid_index(cfg, n);
            cfg.ris_origin + Vector3::new(0.0, iy as f64 * cfg.d_y, iz as f64 * cfg.d_z)
        })
        .collect()
}

/// Inner and outer radius of the radiating near-field region of the RIS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearFieldBounds {
    pub fresnel: f64,
    pub rayleigh: f64,
}

impl NearFieldBounds {
    pub fn contains(&self, r: f64) -> bool {
        r >= self.fresnel && r <= self.rayleigh
    }
}

/// Fresnel distance `0.62 sqrt(D^3 / lambda)` and Rayleigh distance
/// `2 D^2 / lambda`, where `D^2 = a_R^2 + b_R^2` is the squared RIS diagonal.
pub fn near_field_bounds(cfg: &SystemConfig) -> NearFieldBounds {
    let a = (cfg.n_y as f64 - 1.0) * cfg.d_y;
    let b = (cfg.n_z as f64 - 1.0) * cfg.d_z;
    let aperture_sq = a * a + b * b;
    NearFieldBounds {
        fresnel: 0.62 * aperture_sq.powf(0.75) / cfg.lambda.sqrt(),
        rayleigh: 2.0 * aperture_sq / cfg.lambda,
    }
}
