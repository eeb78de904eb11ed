//! Near-field grid, normalized channel dictionary and coarse estimation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{channel, effective_channel, ChannelModel};
use crate::error::{Error, Result};
use crate::geometry::{near_field_bounds, SystemConfig, UePosition};
use crate::signaling::Observation;

/// One reference location, in both polar and Cartesian form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub r: f64,
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

/// Cartesian lattice restricted to the near-field annulus.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub points: Vec<GridPoint>,
    pub epsilon: f64,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Samples `x in {eps, 2 eps, ..}` and `y in {.., -eps, 0, eps, ..}` up to the
/// Rayleigh distance and keeps the points whose range falls inside
/// `[fresnel, rayleigh]`. Points are ordered by `y`, then `x`.
pub fn build_grid(cfg: &SystemConfig, epsilon: f64) -> Result<Grid> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid resolution must be positive, got {epsilon}")));
    }
    let bounds = near_field_bounds(cfg);
    let steps = (bounds.rayleigh / epsilon).floor() as i64;
    let mut points = Vec::new();
    for iy in -steps..=steps {
        let y = iy as f64 * epsilon;
        for ix in 1..=steps {
            let x = ix as f64 * epsilon;
            let r = x.hypot(y);
            if bounds.contains(r) {
                points.push(GridPoint {
                    r,
                    theta: y.atan2(x),
                    x,
                    y,
                });
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyGrid { epsilon });
    }
    Ok(Grid { points, epsilon })
}

/// Unit-norm columns `vec(A_m^H A_m) / ||.||`, one per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// `K^2 x M`.
    pub columns: DMatrix<Complex64>,
    pub grid: Grid,
    pub model: ChannelModel,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.columns.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.ncols() == 0
    }

    pub fn antennas(&self) -> usize {
        (self.columns.nrows() as f64).sqrt().round() as usize
    }
}

pub fn build_dictionary(cfg: &SystemConfig, grid: &Grid, model: ChannelModel) -> Result<Dictionary> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid { epsilon: grid.epsilon });
    }
    let rows = cfg.k_ue * cfg.k_ue;
    let cols: Vec<Vec<Complex64>> = grid
        .points
        .par_iter()
        .map(|pt| {
            let pos = UePosition { r: pt.r, theta: pt.theta };
            let g = effective_channel(&channel(cfg, &pos, model));
            let norm = g.norm();
            g.as_slice().iter().map(|z| z / norm).collect()
        })
        .collect();
    let mut data = Vec::with_capacity(rows * cols.len());
    for c in &cols {
        data.extend_from_slice(c);
    }
    Ok(Dictionary {
        columns: DMatrix::from_vec(rows, cols.len(), data),
        grid: grid.clone(),
        model,
    })
}

/// Winning dictionary column for an observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseEstimate {
    pub index: usize,
    pub r: f64,
    pub theta: f64,
    /// `|y~^H Phi_m|` at the winning column.
    pub score: f64,
}

/// `|y~^H Phi_m|` for every column, in column order.
pub fn correlation_scores(obs: &Observation, dict: &Dictionary) -> Result<Vec<f64>> {
    if obs.y_tilde.len() != dict.columns.nrows() {
        return Err(Error::dims("observation length", dict.columns.nrows(), obs.y_tilde.len()));
    }
    let rows = dict.columns.nrows();
    Ok(dict
        .columns
        .as_slice()
        .par_chunks(rows)
        .map(|col| {
            obs.y_tilde
                .iter()
                .zip(col)
                .map(|(y, phi)| y.conj() * phi)
                .sum::<Complex64>()
                .norm()
        })
        .collect())
}

/// Column with maximum correlation magnitude; ties go to the lowest index.
pub fn coarse_estimate(obs: &Observation, dict: &Dictionary) -> Result<CoarseEstimate> {
    let scores = correlation_scores(obs, dict)?;
    let (index, score) = scores
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (m, &s)| if s > best.1 { (m, s) } else { best });
    let pt = dict.grid.points[index];
    Ok(CoarseEstimate {
        index,
        r: pt.r,
        theta: pt.theta,
        score,
    })
}

const CACHE_MAGIC: &[u8; 4] = b"RISD";
const CACHE_VERSION: u8 = 1;

/// Stable key for a `(config, epsilon, model)` dictionary.
pub fn config_hash(cfg: &SystemConfig, epsilon: f64, model: ChannelModel) -> u64 {
    let mut h = Sha256::new();
    for v in [cfg.lambda, cfg.d_y, cfg.d_z, cfg.d_u, epsilon] {
        h.update(v.to_le_bytes());
    }
    for v in cfg.ris_origin.iter() {
        h.update(v.to_le_bytes());
    }
    for v in [cfg.n_y, cfg.n_z, cfg.k_ue] {
        h.update((v as u64).to_le_bytes());
    }
    h.update([model_byte(model)]);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn model_byte(model: ChannelModel) -> u8 {
    match model {
        ChannelModel::Exact => 0,
        ChannelModel::Fresnel => 1,
    }
}

/// Writes the dictionary as: magic, version byte, config hash, epsilon,
/// `M`, `K`, model byte, then `M` grid rows `(r, theta, x, y)`, then the
/// `K^2 M` column-major complex entries as `(re, im)` pairs. All numbers
/// are little-endian.
pub fn write_cache(path: &Path, dict: &Dictionary, hash: u64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(CACHE_MAGIC)?;
    put(&[CACHE_VERSION])?;
    put(&hash.to_le_bytes())?;
    put(&dict.grid.epsilon.to_le_bytes())?;
    put(&(dict.len() as u64).to_le_bytes())?;
    put(&(dict.antennas() as u64).to_le_bytes())?;
    put(&[model_byte(dict.model)])?;
    for p in &dict.grid.points {
        for v in [p.r, p.theta, p.x, p.y] {
            put(&v.to_le_bytes())?;
        }
    }
    for z in dict.columns.iter() {
        put(&z.re.to_le_bytes())?;
        put(&z.im.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct CacheReader<R> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> CacheReader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.malformed("truncated file"),
            _ => Error::io(&self.path, e),
        })?;
        Ok(buf)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn malformed(&self, reason: &str) -> Error {
        Error::Cache {
            path: self.path.clone(),
            reason: reason.to_string(),
        }
    }
}

/// Reads a cache file, returning its stored config hash and the dictionary.
pub fn read_cache(path: &Path) -> Result<(u64, Dictionary)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = CacheReader {
        inner: BufReader::new(file),
        path: path.to_path_buf(),
    };
    if &r.bytes::<4>()? != CACHE_MAGIC {
        return Err(r.malformed("bad magic"));
    }
    let [version] = r.bytes::<1>()?;
    if version != CACHE_VERSION {
        return Err(r.malformed(&format!("unsupported version {version}")));
    }
    let hash = r.u64()?;
    let epsilon = r.f64()?;
    let m = r.u64()? as usize;
    let k = r.u64()? as usize;
    let model = match r.bytes::<1>()? {
        [0] => ChannelModel::Exact,
        [1] => ChannelModel::Fresnel,
        [b] => return Err(r.malformed(&format!("unknown model byte {b}"))),
    };
    if m == 0 || k == 0 || m.checked_mul(k * k).is_none() {
        return Err(r.malformed("invalid dimensions"));
    }
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        points.push(GridPoint {
            r: r.f64()?,
            theta: r.f64()?,
            x: r.f64()?,
            y: r.f64()?,
        });
    }
    let mut data = Vec::with_capacity(m * k * k);
    for _ in 0..m * k * k {
        data.push(Complex64::new(r.f64()?, r.f64()?));
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(r.malformed("trailing bytes"));
    }
    Ok((
        hash,
        Dictionary {
            columns: DMatrix::from_vec(k * k, m, data),
            grid: Grid { points, epsilon },
            model,
        },
    ))
}

/// Loads the dictionary from `cache_dir` when a file with a matching key
/// exists, otherwise builds it and stores it there.
pub fn load_or_build(cfg: &SystemConfig, epsilon: f64, model: ChannelModel, cache_dir: Option<&Path>) -> Result<Dictionary> {
    let hash = config_hash(cfg, epsilon, model);
    let path = cache_dir.map(|d| d.join(format!("dict-{hash:016x}.bin")));
    if let Some(path) = path.as_deref().filter(|p| p.exists()) {
        if let Ok((stored, dict)) = read_cache(path) {
            if stored == hash {
                return Ok(dict);
            }
        }
    }
    let dict = build_dictionary(cfg, &build_grid(cfg, epsilon)?, model)?;
    if let Some(path) = path {
        std::fs::create_dir_all(path.parent().expect("joined path has a parent"))
            .map_err(|e| Error::io(path.parent().unwrap(), e))?;
        write_cache(&path, &dict, hash)?;
    }
    Ok(dict)
}
