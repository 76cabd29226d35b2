//! The snooping AP: joint angle/distance MUSIC over smoothed CSI, earliest-peak
//! selection, and position estimates from one or several APs.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec2};
use crate::phy::{ArrayConfig, EffectiveCsi, OfdmConfig, SPEED_OF_LIGHT};

#[derive(Debug, Error)]
pub enum AttackerError {
    #[error("invalid smoothing: {0}")]
    InsufficientSmoothing(String),
    #[error("invalid profile grid: {0}")]
    InvalidGrid(String),
    #[error("invalid path count: {0}")]
    InvalidPathCount(String),
    #[error("covariance matrix is not finite")]
    NonFiniteCovariance,
    #[error("profile has no retained peaks")]
    NoPath,
    #[error("range estimate must be positive, got {0}")]
    BadRange(f64),
    #[error("triangulation needs at least 2 APs, got {0}")]
    TooFewAps(usize),
    #[error("bearing lines are parallel; triangulation is degenerate")]
    DegenerateBearings,
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Angle and distance axes of the pseudo-spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileGrid {
    pub angles: Vec<f64>,
    pub distances: Vec<f64>,
}

impl Default for ProfileGrid {
    fn default() -> Self {
        Self::uniform(-90.0, 90.0, 1.0, 0.0, 60.0, 0.25)
    }
}

impl ProfileGrid {
    /// Inclusive uniform axes; angles in degrees, distances in meters.
    pub fn uniform(
        angle_min_deg: f64,
        angle_max_deg: f64,
        angle_step_deg: f64,
        dist_min: f64,
        dist_max: f64,
        dist_step: f64,
    ) -> Self {
        let axis = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| lo + i as f64 * step).collect()
        };
        Self {
            angles: axis(angle_min_deg, angle_max_deg, angle_step_deg)
                .into_iter()
                .map(f64::to_radians)
                .collect(),
            distances: axis(dist_min, dist_max, dist_step),
        }
    }

    pub fn validate(&self, ofdm: &OfdmConfig) -> Result<(), AttackerError> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&self.angles) || !increasing(&self.distances) {
            return Err(AttackerError::InvalidGrid(
                "axes need at least two strictly increasing points".into(),
            ));
        }
        if self.angles[0] < -PI / 2.0 - 1e-9 || *self.angles.last().unwrap() > PI / 2.0 + 1e-9 {
            return Err(AttackerError::InvalidGrid("angles must lie in [-90°, 90°]".into()));
        }
        let span = self.distances.last().unwrap() - self.distances[0];
        if span > ofdm.alias_window() {
            return Err(AttackerError::InvalidGrid(format!(
                "distance span {span} m exceeds the alias window {} m",
                ofdm.alias_window()
            )));
        }
        Ok(())
    }
}

/// Snapshot matrix built from contiguous antenna × subcarrier sub-blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCsi {
    pub snapshots: DMatrix<Complex64>,
    pub sub_antennas: usize,
    pub sub_subcarriers: usize,
}

/// Row `k·ss + i` of each column holds antenna `a+k`, tone `b+i` of the
/// shift `(a, b)`; columns run antenna shift major, subcarrier shift minor.
pub fn smooth_csi(
    h: &EffectiveCsi,
    sub_antennas: usize,
    sub_subcarriers: usize,
) -> Result<SmoothedCsi, AttackerError> {
    let (k_rx, l) = (h.num_antennas(), h.num_subcarriers());
    if sub_antennas == 0 || sub_antennas > k_rx || sub_subcarriers == 0 || sub_subcarriers > l {
        return Err(AttackerError::InsufficientSmoothing(format!(
            "sub-block {sub_antennas}x{sub_subcarriers} does not fit CSI {k_rx}x{l}"
        )));
    }
    let shifts_a = k_rx - sub_antennas + 1;
    let shifts_s = l - sub_subcarriers + 1;
    if shifts_a * shifts_s < 2 {
        return Err(AttackerError::InsufficientSmoothing(format!(
            "only {} snapshot(s)",
            shifts_a * shifts_s
        )));
    }
    let rows = sub_antennas * sub_subcarriers;
    let snapshots = DMatrix::from_fn(rows, shifts_a * shifts_s, |r, c| {
        let (a, b) = (c / shifts_s, c % shifts_s);
        let (k, i) = (r / sub_subcarriers, r % sub_subcarriers);
        h.data[(a + k, b + i)]
    });
    Ok(SmoothedCsi {
        snapshots,
        sub_antennas,
        sub_subcarriers,
    })
}

/// How many eigenvectors span the signal subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathCount {
    Fixed(usize),
    /// Keep eigenvalues at or above this fraction of the largest.
    EigenRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MusicConfig {
    pub sub_antennas: usize,
    /// `None` means `⌈L/2⌉`.
    pub sub_subcarriers: Option<usize>,
    pub peak_threshold_db: f64,
    /// Regularization ε in `1 / (‖E_nᴴv‖² + ε‖v‖²)`; 0 gives plain MUSIC.
    pub spectrum_floor: f64,
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            sub_antennas: 2,
            sub_subcarriers: None,
            peak_threshold_db: -10.0,
            spectrum_floor: 1e-3,
        }
    }
}

impl MusicConfig {
    pub fn sub_subcarriers_for(&self, num_subcarriers: usize) -> usize {
        self.sub_subcarriers.unwrap_or(num_subcarriers.div_ceil(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    /// Radians.
    pub angle: f64,
    pub distance: f64,
    /// dB relative to the spectrum's global maximum.
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleDistanceProfile {
    pub grid: ProfileGrid,
    /// Row per angle, column per distance; linear scale.
    pub spectrum: DMatrix<f64>,
    /// Ascending distance.
    pub peaks: Vec<Peak>,
    /// Covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub num_paths: usize,
}

impl AngleDistanceProfile {
    pub fn argmax(&self) -> (usize, usize) {
        self.spectrum.iamax_full()
    }

    pub fn max_value(&self) -> f64 {
        self.spectrum.max()
    }

    /// Spectrum value at the grid cell nearest `(angle, distance)`, in dB
    /// relative to the global maximum.
    pub fn level_db_near(&self, angle: f64, distance: f64) -> f64 {
        let ai = nearest(&self.grid.angles, angle);
        let di = nearest(&self.grid.distances, distance);
        10.0 * (self.spectrum[(ai, di)] / self.max_value()).log10()
    }

    /// Highest level, in dB relative to the global maximum, within a window
    /// of `± angle_tol`, `± dist_tol` around `(angle, distance)`.
    pub fn window_max_db(&self, angle: f64, distance: f64, angle_tol: f64, dist_tol: f64) -> f64 {
        let mut best = 0.0f64;
        for (ai, &a) in self.grid.angles.iter().enumerate() {
            if (a - angle).abs() > angle_tol + 1e-12 {
                continue;
            }
            for (di, &d) in self.grid.distances.iter().enumerate() {
                if (d - distance).abs() <= dist_tol + 1e-12 {
                    best = best.max(self.spectrum[(ai, di)]);
                }
            }
        }
        10.0 * (best / self.max_value()).log10()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AttackerError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["angle_deg", "distance_m", "power_db"])?;
        let max = self.max_value();
        for (ai, a) in self.grid.angles.iter().enumerate() {
            for (di, d) in self.grid.distances.iter().enumerate() {
                let p = 10.0 * (self.spectrum[(ai, di)] / max).log10();
                w.write_record([
                    format!("{}", a.to_degrees()),
                    format!("{d}"),
                    format!("{p}"),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn nearest(axis: &[f64], x: f64) -> usize {
    axis.iter()
        .enumerate()
        .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Angle–distance MUSIC pseudo-spectrum and its retained peaks.
pub fn music_profile(
    smoothed: &SmoothedCsi,
    grid: &ProfileGrid,
    path_count: PathCount,
    config: &MusicConfig,
    ofdm: &OfdmConfig,
    rx_array: &ArrayConfig,
) -> Result<AngleDistanceProfile, AttackerError> {
    let x = &smoothed.snapshots;
    let (rows, n) = x.shape();
    let r = (x * x.adjoint()) / Complex64::new(n as f64, 0.0);
    if r.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(AttackerError::NonFiniteCovariance);
    }
    let eig = r.symmetric_eigen();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let num_paths = match path_count {
        PathCount::Fixed(p) => p,
        PathCount::EigenRatio(ratio) => eigenvalues
            .iter()
            .filter(|&&v| v >= ratio * eigenvalues[0])
            .count()
            .min(rows - 1),
    };
    if num_paths == 0 || num_paths >= rows {
        return Err(AttackerError::InvalidPathCount(format!(
            "{num_paths} paths with {rows}-dimensional snapshots"
        )));
    }

    // ‖E_nᴴv‖² = ‖v‖² − ‖E_sᴴv‖², so the smaller basis is enough when a
    // floor keeps the denominator away from cancellation.
    let floor = config.spectrum_floor;
    let use_signal = floor > 0.0;
    let basis: Vec<DVector<Complex64>> = if use_signal {
        order[..num_paths].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect()
    } else {
        order[num_paths..].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect()
    };

    let (sa, ss) = (smoothed.sub_antennas, smoothed.sub_subcarriers);
    let f0 = ofdm.frequency(0);
    let df = ofdm.subcarrier_spacing();
    let nd = grid.distances.len();

    // proj[e][k][d] = Σ_i conj(e[k·ss+i]) · exp(−j2π(f₀+iΔf)d/c)
    let proj: Vec<Vec<Vec<Complex64>>> = basis
        .iter()
        .map(|e| {
            (0..sa)
                .map(|k| {
                    grid.distances
                        .iter()
                        .map(|&d| {
                            (0..ss)
                                .map(|i| {
                                    let ph = -2.0 * PI * (f0 + i as f64 * df) * d / SPEED_OF_LIGHT;
                                    e[k * ss + i].conj() * Complex64::from_polar(1.0, ph)
                                })
                                .sum()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let v_norm2 = (sa * ss) as f64;
    let fc = ofdm.center_frequency;
    let rows_out: Vec<Vec<f64>> = grid
        .angles
        .par_iter()
        .map(|&theta| {
            let a: Vec<Complex64> = (0..sa)
                .map(|k| {
                    let ph = -2.0 * PI * fc * k as f64 * rx_array.spacing * theta.sin()
                        / SPEED_OF_LIGHT;
                    Complex64::from_polar(1.0, ph)
                })
                .collect();
            (0..nd)
                .map(|di| {
                    let energy: f64 = proj
                        .iter()
                        .map(|pe| {
                            (0..sa)
                                .map(|k| a[k] * pe[k][di])
                                .sum::<Complex64>()
                                .norm_sqr()
                        })
                        .sum();
                    let noise = if use_signal {
                        (v_norm2 - energy).max(0.0)
                    } else {
                        energy
                    };
                    1.0 / (noise + floor * v_norm2)
                })
                .collect()
        })
        .collect();

    let spectrum = DMatrix::from_fn(grid.angles.len(), nd, |ai, di| rows_out[ai][di]);
    let peaks = find_peaks(&spectrum, grid, config.peak_threshold_db);
    Ok(AngleDistanceProfile {
        grid: grid.clone(),
        spectrum,
        peaks,
        eigenvalues,
        num_paths,
    })
}

/// Strict 8-neighbour maxima within `threshold_db` of the global maximum.
pub fn find_peaks(s: &DMatrix<f64>, grid: &ProfileGrid, threshold_db: f64) -> Vec<Peak> {
    let max = s.max();
    let (na, nd) = s.shape();
    let mut peaks = Vec::new();
    for ai in 0..na {
        for di in 0..nd {
            let v = s[(ai, di)];
            let level = 10.0 * (v / max).log10();
            if level < threshold_db {
                continue;
            }
            let mut is_peak = true;
            'n: for da in -1i64..=1 {
                for dd in -1i64..=1 {
                    if da == 0 && dd == 0 {
                        continue;
                    }
                    let (a2, d2) = (ai as i64 + da, di as i64 + dd);
                    if a2 < 0 || d2 < 0 || a2 >= na as i64 || d2 >= nd as i64 {
                        continue;
                    }
                    if s[(a2 as usize, d2 as usize)] >= v {
                        is_peak = false;
                        break 'n;
                    }
                }
            }
            if is_peak {
                peaks.push(Peak {
                    angle: grid.angles[ai],
                    distance: grid.distances[di],
                    power_db: level,
                });
            }
        }
    }
    peaks.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    peaks
}

/// Earliest retained peak; ties go to higher power, then smaller |angle|.
pub fn select_direct(profile: &AngleDistanceProfile) -> Result<Peak, AttackerError> {
    profile
        .peaks
        .iter()
        .copied()
        .min_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(b.power_db.total_cmp(&a.power_db))
                .then(a.angle.abs().total_cmp(&b.angle.abs()))
        })
        .ok_or(AttackerError::NoPath)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationMethod {
    SingleAp,
    Triangulation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationEstimate {
    pub position: Vec2,
    pub method: LocalizationMethod,
    pub aoas: Vec<f64>,
}

/// AoA plus range from one AP.
pub fn localize_single_ap(
    ap: &Pose,
    aoa: f64,
    range: f64,
) -> Result<LocalizationEstimate, AttackerError> {
    if !(range > 0.0) {
        return Err(AttackerError::BadRange(range));
    }
    let dir = Vec2::from_bearing(ap.orientation + aoa);
    Ok(LocalizationEstimate {
        position: ap.position + dir.scale(range),
        method: LocalizationMethod::SingleAp,
        aoas: vec![aoa],
    })
}

/// Least-squares intersection of bearing lines.
pub fn triangulate(aps: &[Pose], aoas: &[f64]) -> Result<LocalizationEstimate, AttackerError> {
    if aps.len() != aoas.len() {
        return Err(AttackerError::TooFewAps(aps.len().min(aoas.len())));
    }
    if aps.len() < 2 {
        return Err(AttackerError::TooFewAps(aps.len()));
    }
    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (ap, &aoa) in aps.iter().zip(aoas) {
        let u = Vec2::from_bearing(ap.orientation + aoa);
        let (nx, ny) = (u.y, -u.x);
        let c = nx * ap.position.x + ny * ap.position.y;
        a11 += nx * nx;
        a12 += nx * ny;
        a22 += ny * ny;
        b1 += nx * c;
        b2 += ny * c;
    }
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-9 {
        return Err(AttackerError::DegenerateBearings);
    }
    let x = (a22 * b1 - a12 * b2) / det;
    let y = (a11 * b2 - a12 * b1) / det;
    Ok(LocalizationEstimate {
        position: Vec2::new(x, y),
        method: LocalizationMethod::Triangulation,
        aoas: aoas.to_vec(),
    })
}
