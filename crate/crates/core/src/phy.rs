//! Arrays, OFDM tone grid, CSI synthesis, impairments and RSSI.
//!
//! The MIMO channel on tone `f` is `Σ_p g_p e^{-j2πf(d_p+Δd)/c} a_rx(φ_p) a_tx(θ_p)ᴴ`,
//! so a precoder `w = a_tx(θ)` is the matched beam toward departure angle `θ`
//! and "nulling θ" means `a_tx(θ)ᴴ w = 0`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PathComponent;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("cannot synthesize CSI from an empty path list")]
    NoPaths,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub num_antennas: usize,
    /// Element spacing, meters.
    pub spacing: f64,
    /// World bearing of broadside, radians. Carried for bookkeeping; the
    /// steering model only needs local angles.
    pub orientation: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            num_antennas: 4,
            spacing: 0.026,
            orientation: 0.0,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.num_antennas < 2 {
            return Err(PhyError::InvalidConfig(format!(
                "array needs at least 2 antennas, got {}",
                self.num_antennas
            )));
        }
        if !(self.spacing > 0.0) {
            return Err(PhyError::InvalidConfig(format!(
                "antenna spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }
}

/// OFDM tone layout: `L` tones spaced `B/L` apart, symmetric about `f_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfdmConfig {
    pub center_frequency: f64,
    pub bandwidth: f64,
    pub num_subcarriers: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            center_frequency: 5.18e9,
            bandwidth: 20e6,
            num_subcarriers: 52,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.num_subcarriers < 2 {
            return Err(PhyError::InvalidConfig(
                "need at least 2 subcarriers".into(),
            ));
        }
        if !(self.center_frequency > 0.0 && self.bandwidth > 0.0) {
            return Err(PhyError::InvalidConfig(
                "frequencies must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth / self.num_subcarriers as f64
    }

    pub fn frequency(&self, i: usize) -> f64 {
        let offset = i as f64 - (self.num_subcarriers as f64 - 1.0) / 2.0;
        self.center_frequency + offset * self.subcarrier_spacing()
    }

    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        (0..self.num_subcarriers).map(|i| self.frequency(i)).collect()
    }

    /// Delay-alias period expressed as distance, `c/Δf`.
    pub fn alias_window(&self) -> f64 {
        SPEED_OF_LIGHT / self.subcarrier_spacing()
    }
}

/// Phase factor `e^{-j2π f d / c}` of a path of length `d` on tone `f`.
pub fn delay_phase(freq: f64, distance: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * freq * distance / SPEED_OF_LIGHT)
}

/// ULA response toward local angle `theta` on frequency `freq`.
///
/// Element `k` is `e^{-j2π f k s sinθ / c}`; broadside gives all ones.
pub fn steering_vector(array: &ArrayConfig, theta: f64, freq: f64) -> DVector<Complex64> {
    debug_assert!(theta.abs() <= PI / 2.0 + 1e-9, "angle outside half-plane");
    let step = -2.0 * PI * freq * array.spacing * theta.sin() / SPEED_OF_LIGHT;
    DVector::from_iterator(
        array.num_antennas,
        (0..array.num_antennas).map(|k| Complex64::from_polar(1.0, step * k as f64)),
    )
}

/// Per-tone `K_rx × K_tx` MIMO channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub per_subcarrier: Vec<DMatrix<Complex64>>,
    pub ofdm: OfdmConfig,
    pub tx: ArrayConfig,
    pub rx: ArrayConfig,
    /// Common distance offset from sampling-frequency offset, meters.
    pub sfo_offset: f64,
}

impl ChannelMatrix {
    pub fn num_rx(&self) -> usize {
        self.rx.num_antennas
    }

    pub fn num_tx(&self) -> usize {
        self.tx.num_antennas
    }
}

/// Builds the channel from a set of paths sharing one SFO offset `sfo_offset`.
pub fn synthesize_csi(
    paths: &[PathComponent],
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    ofdm: &OfdmConfig,
    sfo_offset: f64,
) -> Result<ChannelMatrix, PhyError> {
    if paths.is_empty() {
        return Err(PhyError::NoPaths);
    }
    let per_subcarrier = ofdm
        .subcarrier_frequencies()
        .into_iter()
        .map(|f| {
            let mut h = DMatrix::<Complex64>::zeros(rx.num_antennas, tx.num_antennas);
            for p in paths {
                let a_rx = steering_vector(rx, p.aoa, f);
                let a_tx = steering_vector(tx, p.aod, f);
                let coeff = delay_phase(f, p.length + sfo_offset) * p.gain;
                h += (a_rx * a_tx.adjoint()) * coeff;
            }
            h
        })
        .collect();
    Ok(ChannelMatrix {
        per_subcarrier,
        ofdm: *ofdm,
        tx: *tx,
        rx: *rx,
        sfo_offset,
    })
}

/// Per-tone transmit weights, each of unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    weights: Vec<DVector<Complex64>>,
}

impl Precoder {
    /// Normalizes every tone's weights to unit norm.
    ///
    /// Returns an error if any tone's weight vector is (numerically) zero.
    pub fn normalized(weights: Vec<DVector<Complex64>>) -> Result<Self, PhyError> {
        let Some(first) = weights.first() else {
            return Err(PhyError::ShapeMismatch("precoder has no subcarriers".into()));
        };
        let k = first.len();
        let mut out = Vec::with_capacity(weights.len());
        for (i, w) in weights.into_iter().enumerate() {
            if w.len() != k {
                return Err(PhyError::ShapeMismatch(format!(
                    "subcarrier {i} has {} weights, expected {k}",
                    w.len()
                )));
            }
            let n = w.norm();
            if !(n > 1e-300) || !n.is_finite() {
                return Err(PhyError::InvalidConfig(format!(
                    "subcarrier {i} weight vector has zero or non-finite norm"
                )));
            }
            out.push(w / Complex64::new(n, 0.0));
        }
        Ok(Self { weights: out })
    }

    pub fn weights(&self) -> &[DVector<Complex64>] {
        &self.weights
    }

    pub fn num_subcarriers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.weights[0].len()
    }

    /// Same weight vector on every tone.
    pub fn constant(w: DVector<Complex64>, num_subcarriers: usize) -> Result<Self, PhyError> {
        Self::normalized(vec![w; num_subcarriers])
    }

    /// Multiplies every weight by the same unit-modulus phase.
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        Self {
            weights: self.weights.iter().map(|w| w * r).collect(),
        }
    }
}

/// Effective uplink CSI `h_eff(f_i) = H(f_i) w(f_i)`, stored `K_rx × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCsi {
    pub data: DMatrix<Complex64>,
}

impl EffectiveCsi {
    pub fn new(data: DMatrix<Complex64>) -> Self {
        Self { data }
    }

    pub fn num_antennas(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.data.ncols()
    }

    pub fn scaled(&self, k: Complex64) -> Self {
        Self::new(&self.data * k)
    }
}

pub fn apply_precoder(h: &ChannelMatrix, w: &Precoder) -> Result<EffectiveCsi, PhyError> {
    if h.per_subcarrier.len() != w.num_subcarriers() {
        return Err(PhyError::ShapeMismatch(format!(
            "channel has {} subcarriers, precoder {}",
            h.per_subcarrier.len(),
            w.num_subcarriers()
        )));
    }
    if h.num_tx() != w.num_antennas() {
        return Err(PhyError::ShapeMismatch(format!(
            "channel has {} tx antennas, precoder {}",
            h.num_tx(),
            w.num_antennas()
        )));
    }
    let mut data = DMatrix::<Complex64>::zeros(h.num_rx(), h.per_subcarrier.len());
    for (i, (hm, wv)) in h.per_subcarrier.iter().zip(w.weights()).enumerate() {
        data.set_column(i, &(hm * wv));
    }
    Ok(EffectiveCsi::new(data))
}

/// Adds circularly-symmetric complex Gaussian noise at the given per-entry SNR.
///
/// `snr_db = +∞` returns the input untouched.
pub fn add_noise<R: Rng + ?Sized>(h: &EffectiveCsi, snr_db: f64, rng: &mut R) -> EffectiveCsi {
    if snr_db == f64::INFINITY {
        return h.clone();
    }
    let signal = mean_power(&h.data);
    let sigma = (signal / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut out = h.data.clone();
    for z in out.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(re, im) * sigma;
    }
    EffectiveCsi::new(out)
}

/// Mean of `|z|²` over all entries.
pub fn mean_power(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>() / m.len() as f64
}

/// `10 log10(mean_i ‖h_eff(f_i)‖²) + offset`; an all-zero channel gives −∞.
pub fn rssi_db(h: &EffectiveCsi, calibration_offset: f64) -> f64 {
    let total: f64 = h.data.iter().map(|z| z.norm_sqr()).sum();
    let per_tone = total / h.num_subcarriers() as f64;
    if per_tone == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * per_tone.log10() + calibration_offset
}

/// RSSI predicted from per-path powers alone, ignoring cross terms between
/// paths: `10 log10(mean_i Σ_p g_p² K_rx |a_tx(θ_p, f_i)ᴴ w(f_i)|²)`.
pub fn incoherent_rssi_db(
    paths: &[PathComponent],
    w: &Precoder,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    ofdm: &OfdmConfig,
    calibration_offset: f64,
) -> f64 {
    let freqs = ofdm.subcarrier_frequencies();
    let total: f64 = freqs
        .iter()
        .zip(w.weights())
        .map(|(&f, wi)| {
            paths
                .iter()
                .map(|p| {
                    p.gain * p.gain
                        * rx.num_antennas as f64
                        * steering_vector(tx, p.aod, f).dotc(wi).norm_sqr()
                })
                .sum::<f64>()
        })
        .sum();
    let mean = total / freqs.len() as f64;
    if mean == 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * mean.log10() + calibration_offset
}
