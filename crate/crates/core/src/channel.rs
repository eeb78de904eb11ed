//! Line-of-sight UE <-> RIS channel synthesis.
//!
//! Entry `(n, k)` of the channel matrix is `exp(-j 2 pi d_{n,k} / lambda)`
//! where `d_{n,k}` is the distance between RIS element `n` and UE antenna
//! `k`. The exact model uses Euclidean distances; the Fresnel model replaces
//! them with the second-order expansion around the reference range `r`, which
//! is the model the refinement stage differentiates.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{direction, ris_positions, SystemConfig, UePosition, UE_AXIS};

/// Which distance model generated a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelModel {
    Exact,
    Fresnel,
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelModel::Exact => "exact",
            ChannelModel::Fresnel => "fresnel",
        })
    }
}

impl FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(ChannelModel::Exact),
            "fresnel" => Ok(ChannelModel::Fresnel),
            other => Err(Error::InvalidConfig(format!(
                "unknown channel model `{other}` (expected `exact` or `fresnel`)"
            ))),
        }
    }
}

/// Complex `N x K` UE-to-RIS response.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub entries: DMatrix<Complex64>,
    pub model: ChannelModel,
}

impl ChannelMatrix {
    pub fn n_elements(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.entries.ncols()
    }
}

#[inline]
fn phase_term(distance: f64, lambda: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * distance / lambda)
}

/// Channel with exact spherical-wavefront distances.
pub fn exact_channel(cfg: &SystemConfig, pos: &UePosition) -> ChannelMatrix {
    let ris = ris_positions(cfg);
    let u = pos.cartesian();
    let ue: Vec<Vector3<f64>> = (0..cfg.k_ue)
        .map(|k| u + k as f64 * cfg.d_u * UE_AXIS)
        .collect();
    let entries = DMatrix::from_fn(ris.len(), cfg.k_ue, |n, k| {
        phase_term((ue[k] - ris[n]).norm(), cfg.lambda)
    });
    ChannelMatrix {
        entries,
        model: ChannelModel::Exact,
    }
}

/// Fresnel-approximated distance between UE antenna `p` at polar
/// reference `(r, theta)` and a RIS element at `s_n`.
pub(crate) fn fresnel_distance(cfg: &SystemConfig, r: f64, theta: f64, p: usize, s_n: &Vector3<f64>) -> f64 {
    let e = direction(theta);
    let offset = p as f64 * cfg.d_u;
    r + (offset * offset + s_n.norm_squared()) / (2.0 * r)
        + offset * (e.dot(&UE_AXIS) - UE_AXIS.dot(s_n) / r)
        - e.dot(s_n)
}

/// Fresnel-approximated distance `||u_p - s_n||` (zero-based `p`, `n`).
pub fn fresnel_phase_distance(cfg: &SystemConfig, pos: &UePosition, p: usize, n: usize) -> Result<f64> {
    if !(pos.r > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Fresnel expansion needs a positive range, got {}",
            pos.r
        )));
    }
    if p >= cfg.k_ue {
        return Err(Error::IndexOutOfRange {
            what: "UE element",
            index: p,
            len: cfg.k_ue,
        });
    }
    let s_n = crate::geometry::ris_element_position(cfg, n)?;
    Ok(fresnel_distance(cfg, pos.r, pos.theta, p, &s_n))
}

/// Channel built from Fresnel-approximated distances.
pub fn fresnel_channel(cfg: &SystemConfig, pos: &UePosition) -> ChannelMatrix {
    let ris = ris_positions(cfg);
    let entries = DMatrix::from_fn(ris.len(), cfg.k_ue, |n, k| {
        phase_term(fresnel_distance(cfg, pos.r, pos.theta, k, &ris[n]), cfg.lambda)
    });
    ChannelMatrix {
        entries,
        model: ChannelModel::Fresnel,
    }
}

/// Channel under the requested model.
pub fn channel(cfg: &SystemConfig, pos: &UePosition, model: ChannelModel) -> ChannelMatrix {
    match model {
        ChannelModel::Exact => exact_channel(cfg, pos),
        ChannelModel::Fresnel => fresnel_channel(cfg, pos),
    }
}

/// Phase of `conj(a_{n,p}) a_{n,q}` under the Fresnel model, in radians.
///
/// The range-only and element-only terms cancel, leaving
/// `-(2 pi / lambda) (d_u^2 D / (2r) + d_u d (sin theta - y_n / r))` with
/// `D = q^2 - p^2` and `d = q - p`, where `y_n` is the `y` coordinate of the
/// RIS element.
#[inline]
pub(crate) fn pair_phase(cfg: &SystemConfig, r: f64, sin_theta: f64, p: usize, q: usize, y_n: f64) -> f64 {
    let big_delta = (q * q) as f64 - (p * p) as f64;
    let delta = q as f64 - p as f64;
    -2.0 * PI / cfg.lambda
        * (cfg.d_u * cfg.d_u * big_delta / (2.0 * r) + cfg.d_u * delta * (sin_theta - y_n / r))
}

/// `a_pq(n) = conj(a_{n,p}) a_{n,q}` under the Fresnel model (zero-based indices).
pub fn a_pq(cfg: &SystemConfig, pos: &UePosition, p: usize, q: usize, n: usize) -> Result<Complex64> {
    for idx in [p, q] {
        if idx >= cfg.k_ue {
            return Err(Error::IndexOutOfRange {
                what: "UE element",
                index: idx,
                len: cfg.k_ue,
            });
        }
    }
    let s_n = crate::geometry::ris_element_position(cfg, n)?;
    Ok(Complex64::from_polar(
        1.0,
        pair_phase(cfg, pos.r, pos.theta.sin(), p, q, UE_AXIS.dot(&s_n)),
    ))
}

/// Round-trip Gram matrix `A^H A` (`K x K`, Hermitian, diagonal `N`).
pub fn effective_channel(a: &ChannelMatrix) -> DMatrix<Complex64> {
    a.entries.ad_mul(&a.entries)
}

/// Column-major vectorization: entry `(p, q)` lands at index `q K + p`.
pub fn vectorize(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    m.as_slice().to_vec()
}
