//! Transmit precoders that hide the direct path from a snooping AP.
//!
//! All builders work in departure-angle space at the user's own array and
//! evaluate steering vectors per tone, so nulls hold on every subcarrier.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PathComponent;
use crate::phy::{delay_phase, steering_vector, ArrayConfig, OfdmConfig, PhyError, Precoder};

#[derive(Debug, Error)]
pub enum DefenderError {
    #[error("direct and reflected departure angles coincide")]
    DegenerateAngles,
    #[error("cannot build a null space for a zero vector")]
    ZeroVector,
    #[error("obfuscation delay {d_obf} m does not exceed the path gap {gap} m")]
    DelayTooShort { d_obf: f64, gap: f64 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("mode needs at least {needed} transmit antennas, array has {have}")]
    Capability { needed: usize, have: usize },
    #[error("defense not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// What the user learned about its own paths from the downlink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathKnowledge {
    pub theta_d: f64,
    pub theta_r: f64,
    pub d_d: f64,
    pub d_r: f64,
    pub angle_error_std: f64,
}

impl PathKnowledge {
    pub fn gap(&self) -> f64 {
        self.d_r - self.d_d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObfuscationMode {
    None,
    Nulling,
    BeamDelay,
    Mirage,
}

impl ObfuscationMode {
    pub const ALL: [ObfuscationMode; 4] = [
        ObfuscationMode::None,
        ObfuscationMode::Nulling,
        ObfuscationMode::BeamDelay,
        ObfuscationMode::Mirage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObfuscationMode::None => "none",
            ObfuscationMode::Nulling => "nulling",
            ObfuscationMode::BeamDelay => "beam_delay",
            ObfuscationMode::Mirage => "mirage",
        }
    }
}

impl std::str::FromStr for ObfuscationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown policy mode '{s}' (expected none, nulling, beam_delay or mirage)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayPolicy {
    /// Fixed extra distance, meters.
    Fixed(f64),
    /// `d_r − d_d + margin`.
    Adaptive { margin: f64 },
}

impl Default for DelayPolicy {
    fn default() -> Self {
        DelayPolicy::Adaptive { margin: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    /// Null-space vectors weighted by their raw similarity to the target beam.
    SimilarityWeighted,
    /// Orthogonal projection of the target beam onto the null space.
    #[default]
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObfuscationPolicy {
    pub mode: ObfuscationMode,
    pub delay: DelayPolicy,
    pub combine_rule: CombineRule,
}

impl Default for ObfuscationPolicy {
    fn default() -> Self {
        Self {
            mode: ObfuscationMode::Mirage,
            delay: DelayPolicy::default(),
            combine_rule: CombineRule::default(),
        }
    }
}

impl ObfuscationPolicy {
    pub fn new(mode: ObfuscationMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn with_delay(mut self, delay: DelayPolicy) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_combine_rule(mut self, rule: CombineRule) -> Self {
        self.combine_rule = rule;
        self
    }
}

/// Extra distance applied to the direct beam.
///
/// Must exceed `d_r − d_d`; capped so `d_d + d_obf` stays below the
/// delay-alias window.
pub fn resolve_delay(
    k: &PathKnowledge,
    policy: &ObfuscationPolicy,
    ofdm: &OfdmConfig,
) -> Result<f64, DefenderError> {
    let gap = k.gap();
    let d_obf = match policy.delay {
        DelayPolicy::Fixed(d) => d,
        DelayPolicy::Adaptive { margin } => {
            if !(margin > 0.0) {
                return Err(DefenderError::InvalidPolicy(format!(
                    "adaptive margin must be positive, got {margin}"
                )));
            }
            gap + margin
        }
    };
    if !(d_obf > gap) {
        return Err(DefenderError::DelayTooShort { d_obf, gap });
    }
    let cap = ofdm.alias_window() - k.d_d;
    if d_obf >= cap {
        log::warn!("d_obf {d_obf} m capped at {cap} m to stay inside the alias window");
        let capped = cap * (1.0 - 1e-9);
        if !(capped > gap) {
            return Err(DefenderError::DelayTooShort { d_obf: capped, gap });
        }
        return Ok(capped);
    }
    Ok(d_obf)
}

fn per_tone<F>(ofdm: &OfdmConfig, f: F) -> Result<Precoder, DefenderError>
where
    F: Fn(f64) -> Result<DVector<Complex64>, DefenderError>,
{
    let w = ofdm
        .subcarrier_frequencies()
        .into_iter()
        .map(&f)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Precoder::normalized(w)?)
}

/// `v − u (uᴴv)/(uᴴu)`.
fn project_out(v: &DVector<Complex64>, u: &DVector<Complex64>) -> DVector<Complex64> {
    let coef = u.dotc(v) / u.dotc(u);
    v - u * coef
}

fn normalize(v: DVector<Complex64>) -> DVector<Complex64> {
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

/// Matched beam toward `theta`: `a_tx(θ)/√K` on every tone.
pub fn matched_precoder(
    theta: f64,
    tx: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Precoder, DefenderError> {
    per_tone(ofdm, |f| Ok(steering_vector(tx, theta, f)))
}

/// Residual of the reflected beam after removing the direct direction.
pub fn nulling_precoder(
    k: &PathKnowledge,
    tx: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Precoder, DefenderError> {
    if tx.num_antennas < 2 {
        return Err(DefenderError::Capability {
            needed: 2,
            have: tx.num_antennas,
        });
    }
    per_tone(ofdm, |f| {
        let ad = steering_vector(tx, k.theta_d, f);
        let ar = steering_vector(tx, k.theta_r, f);
        let w = project_out(&ar, &ad);
        if w.norm() < 1e-9 * ar.norm() {
            return Err(DefenderError::DegenerateAngles);
        }
        // A second pass removes the rounding left by the first.
        Ok(project_out(&normalize(w), &ad))
    })
}

/// `a_tx(θ_d)·e^{−j2πf d_obf/c} + a_tx(θ_r)` with no check on `d_obf`.
pub fn two_beam_precoder(
    theta_d: f64,
    theta_r: f64,
    d_obf: f64,
    tx: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Precoder, DefenderError> {
    per_tone(ofdm, |f| {
        let w = steering_vector(tx, theta_d, f) * delay_phase(f, d_obf)
            + steering_vector(tx, theta_r, f);
        if w.norm() < 1e-12 {
            return Err(DefenderError::DegenerateAngles);
        }
        Ok(w)
    })
}

pub fn beamform_delay_precoder(
    k: &PathKnowledge,
    policy: &ObfuscationPolicy,
    tx: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Precoder, DefenderError> {
    let d_obf = resolve_delay(k, policy, ofdm)?;
    two_beam_precoder(k.theta_d, k.theta_r, d_obf, tx, ofdm)
}

/// Orthonormal basis of `{w : vᴴw = 0}`.
///
/// Built from the Householder reflector `H` that sends `v/‖v‖` to a
/// unit-modulus multiple of `e₀`; columns `1..K` of `H` are the basis.
pub fn null_space_basis(v: &DVector<Complex64>) -> Result<Vec<DVector<Complex64>>, DefenderError> {
    let n = v.norm();
    if !(n > 0.0) {
        return Err(DefenderError::ZeroVector);
    }
    let k = v.len();
    let u = v / Complex64::new(n, 0.0);
    let alpha = if u[0].norm() > 0.0 {
        u[0] / u[0].norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let mut w = u.clone();
    w[0] -= alpha;
    let ww = w.norm_squared();
    let h = if ww < 1e-30 {
        DMatrix::identity(k, k)
    } else {
        DMatrix::identity(k, k) - (&w * w.adjoint()) * Complex64::new(2.0 / ww, 0.0)
    };
    Ok((1..k).map(|j| h.column(j).into_owned()).collect())
}

/// Component of `target` that radiates nothing toward `avoid`.
fn null_branch(
    target: &DVector<Complex64>,
    avoid: &DVector<Complex64>,
    rule: CombineRule,
) -> Result<DVector<Complex64>, DefenderError> {
    let basis = null_space_basis(avoid)?;
    let projection = |basis: &[DVector<Complex64>]| -> Result<DVector<Complex64>, DefenderError> {
        let mut acc = DVector::zeros(target.len());
        for b in basis {
            acc += b * b.dotc(target);
        }
        if acc.norm() < 1e-9 * target.norm() {
            return Err(DefenderError::DegenerateAngles);
        }
        Ok(normalize(acc))
    };
    match rule {
        CombineRule::Projection => projection(&basis),
        CombineRule::SimilarityWeighted => {
            let weights: Vec<Complex64> = basis.iter().map(|b| target.dotc(b)).collect();
            let total: Complex64 = weights.iter().sum();
            if total.norm() < 1e-9 {
                log::warn!("weighted null-space combination cancels; using projection");
                return projection(&basis);
            }
            let mut acc = DVector::zeros(target.len());
            for (b, wj) in basis.iter().zip(&weights) {
                acc += b * *wj;
            }
            let out = acc / total;
            if out.norm() < 1e-9 {
                log::warn!("weighted null-space combination vanishes; using projection");
                return projection(&basis);
            }
            Ok(out)
        }
    }
}

/// Direct-toward-`θ_d`-but-null-at-`θ_r` and the mirror branch on one tone.
pub fn mirage_branches(
    theta_d: f64,
    theta_r: f64,
    rule: CombineRule,
    tx: &ArrayConfig,
    freq: f64,
) -> Result<(DVector<Complex64>, DVector<Complex64>), DefenderError> {
    let ad = steering_vector(tx, theta_d, freq);
    let ar = steering_vector(tx, theta_r, freq);
    let bdnr = null_branch(&ad, &ar, rule)?;
    let brnd = null_branch(&ar, &ad, rule)?;
    Ok((bdnr, brnd))
}

/// MIRAGE combination for an explicit `d_obf`, with no check on its value.
pub fn mirage_two_beam(
    theta_d: f64,
    theta_r: f64,
    d_obf: f64,
    rule: CombineRule,
    tx: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Precoder, DefenderError> {
    if tx.num_antennas < 3 {
        return Err(DefenderError::Capability {
            needed: 3,
            have: tx.num_antennas,
        });
    }
    per_tone(ofdm, |f| {
        let (bdnr, brnd) = mirage_branches(theta_d, theta_r, rule, tx, f)?;
        Ok(bdnr * delay_phase(f, d_obf) + brnd)
    })
}

pub fn mirage_precoder(
    k: &PathKnowledge,
    policy: &ObfuscationPolicy,
    tx: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Precoder, DefenderError> {
    if tx.num_antennas < 3 {
        return Err(DefenderError::Capability {
            needed: 3,
            have: tx.num_antennas,
        });
    }
    let d_obf = resolve_delay(k, policy, ofdm)?;
    mirage_two_beam(k.theta_d, k.theta_r, d_obf, policy.combine_rule, tx, ofdm)
}

/// Precoder for `policy.mode`.
pub fn build_precoder(
    k: &PathKnowledge,
    policy: &ObfuscationPolicy,
    tx: &ArrayConfig,
    ofdm: &OfdmConfig,
) -> Result<Precoder, DefenderError> {
    match policy.mode {
        ObfuscationMode::None => matched_precoder(k.theta_d, tx, ofdm),
        ObfuscationMode::Nulling => nulling_precoder(k, tx, ofdm),
        ObfuscationMode::BeamDelay => beamform_delay_precoder(k, policy, tx, ofdm),
        ObfuscationMode::Mirage => mirage_precoder(k, policy, tx, ofdm),
    }
}

/// Direct path plus the strongest reflection, angles perturbed by
/// `N(0, angle_error_std)`.
pub fn make_path_knowledge<R: Rng + ?Sized>(
    paths: &[PathComponent],
    rng: &mut R,
    angle_error_std: f64,
) -> Result<PathKnowledge, DefenderError> {
    let direct = paths
        .iter()
        .find(|p| p.order == 0)
        .ok_or_else(|| DefenderError::NotApplicable("no direct path".into()))?;
    let reflected = paths
        .iter()
        .filter(|p| p.order > 0)
        .max_by(|a, b| a.gain.total_cmp(&b.gain))
        .ok_or_else(|| DefenderError::NotApplicable("no reflected path".into()))?;
    let (ed, er) = if angle_error_std > 0.0 {
        let n = Normal::new(0.0, angle_error_std)
            .map_err(|e| DefenderError::InvalidPolicy(e.to_string()))?;
        (n.sample(rng), n.sample(rng))
    } else {
        (0.0, 0.0)
    };
    Ok(PathKnowledge {
        theta_d: direct.aod + ed,
        theta_r: reflected.aod + er,
        d_d: direct.length,
        d_r: reflected.length,
        angle_error_std,
    })
}

/// Header `subcarrier_index,antenna_index,real,imag`.
pub fn write_precoder_csv<W: Write>(p: &Precoder, out: W) -> Result<(), DefenderError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subcarrier_index", "antenna_index", "real", "imag"])?;
    for (i, v) in p.weights().iter().enumerate() {
        for (a, z) in v.iter().enumerate() {
            w.write_record([i.to_string(), a.to_string(), z.re.to_string(), z.im.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn knowledge(theta_d_deg: f64, theta_r_deg: f64) -> PathKnowledge {
        PathKnowledge {
            theta_d: theta_d_deg.to_radians(),
            theta_r: theta_r_deg.to_radians(),
            d_d: 10.0,
            d_r: 200f64.sqrt(),
            angle_error_std: 0.0,
        }
    }

    fn gain(p: &Precoder, tx: &ArrayConfig, ofdm: &OfdmConfig, theta: f64) -> f64 {
        p.weights()
            .iter()
            .zip(ofdm.subcarrier_frequencies())
            .map(|(w, f)| steering_vector(tx, theta, f).dotc(w).norm())
            .fold(0.0, f64::max)
    }

    fn unit_norm(p: &Precoder) -> bool {
        p.weights().iter().all(|w| (w.norm() - 1.0).abs() < 1e-12)
    }

    #[test]
    fn nulling_two_antennas() {
        let tx = ArrayConfig {
            num_antennas: 2,
            ..ArrayConfig::default()
        };
        let ofdm = OfdmConfig::default();
        let p = nulling_precoder(&knowledge(0.0, -30.0), &tx, &ofdm).unwrap();
        for w in p.weights() {
            let ratio = w[1] / w[0];
            assert_abs_diff_eq!(ratio.re, -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ratio.im, 0.0, epsilon = 1e-12);
        }
        assert!(gain(&p, &tx, &ofdm, 0.0) < 1e-10);
    }

    #[test]
    fn nulling_four_antennas_and_degenerate() {
        let tx = ArrayConfig::default();
        let ofdm = OfdmConfig::default();
        let k = knowledge(12.0, -41.0);
        let p = nulling_precoder(&k, &tx, &ofdm).unwrap();
        assert!(gain(&p, &tx, &ofdm, k.theta_d) < 1e-10);
        assert!(unit_norm(&p));
        assert!(matches!(
            nulling_precoder(&knowledge(10.0, 10.0), &tx, &ofdm),
            Err(DefenderError::DegenerateAngles)
        ));
    }

    #[test]
    fn null_space_k2() {
        let v = DVector::from_element(2, Complex64::new(1.0, 0.0));
        let b = null_space_basis(&v).unwrap();
        assert_eq!(b.len(), 1);
        let r = b[0][1] / b[0][0];
        assert_abs_diff_eq!(r.re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn null_space_k4_orthonormal_and_spanning() {
        let v = steering_vector(&ArrayConfig::default(), 0.7, 5.19e9);
        let b = null_space_basis(&v).unwrap();
        assert_eq!(b.len(), 3);
        for (i, x) in b.iter().enumerate() {
            assert!(v.dotc(x).norm() < 1e-12);
            for (j, y) in b.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((x.dotc(y) - Complex64::new(expect, 0.0)).norm() < 1e-12);
            }
        }
        let mut cols = vec![v.clone()];
        cols.extend(b);
        let m = DMatrix::from_columns(&cols);
        assert!(m.determinant().norm() > 1e-6);
        assert!(matches!(null_space_basis(&DVector::zeros(4)), Err(DefenderError::ZeroVector)));
    }

    #[test]
    fn null_space_of_basis_vector() {
        let mut v = DVector::zeros(3);
        v[0] = Complex64::new(0.0, 2.0);
        let b = null_space_basis(&v).unwrap();
        for x in &b {
            assert!(v.dotc(x).norm() < 1e-15);
        }
        let mut e1 = DVector::zeros(3);
        e1[1] = Complex64::new(1.0, 0.0);
        let b = null_space_basis(&e1).unwrap();
        for x in &b {
            assert!(e1.dotc(x).norm() < 1e-15);
        }
    }

    #[test]
    fn mirage_cross_terms_both_rules() {
        let tx = ArrayConfig::default();
        let ofdm = OfdmConfig::default();
        for rule in [CombineRule::Projection, CombineRule::SimilarityWeighted] {
            for f in ofdm.subcarrier_frequencies() {
                let (bdnr, brnd) =
                    mirage_branches(0.0, (-30f64).to_radians(), rule, &tx, f).unwrap();
                let ad = steering_vector(&tx, 0.0, f);
                let ar = steering_vector(&tx, (-30f64).to_radians(), f);
                assert!(ar.dotc(&bdnr).norm() < 1e-10);
                assert!(ad.dotc(&brnd).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn projection_branch_maximizes_gain() {
        // The projected branch keeps |a_dᴴ bdnr|² = ‖a_d‖² − |a_rᴴa_d|²/‖a_r‖².
        let tx = ArrayConfig::default();
        let f = 5.18e9;
        let (td, tr) = (0.2, -0.6);
        let (bdnr, _) = mirage_branches(td, tr, CombineRule::Projection, &tx, f).unwrap();
        let ad = steering_vector(&tx, td, f);
        let ar = steering_vector(&tx, tr, f);
        let expect = 4.0 - ar.dotc(&ad).norm_sqr() / 4.0;
        assert_abs_diff_eq!(ad.dotc(&bdnr).norm_sqr(), expect, epsilon = 1e-10);
    }

    #[test]
    fn mirage_capability() {
        let tx = ArrayConfig {
            num_antennas: 2,
            ..ArrayConfig::default()
        };
        let r = mirage_precoder(
            &knowledge(0.0, -30.0),
            &ObfuscationPolicy::new(ObfuscationMode::Mirage),
            &tx,
            &OfdmConfig::default(),
        );
        assert!(matches!(r, Err(DefenderError::Capability { needed: 3, have: 2 })));
    }

    #[test]
    fn delay_resolution() {
        let ofdm = OfdmConfig::default();
        let k = knowledge(0.0, -30.0);
        let adaptive = ObfuscationPolicy::new(ObfuscationMode::Mirage);
        assert_abs_diff_eq!(
            resolve_delay(&k, &adaptive, &ofdm).unwrap(),
            200f64.sqrt() - 10.0 + 5.0,
            epsilon = 1e-12
        );
        let fixed = adaptive.with_delay(DelayPolicy::Fixed(15.0));
        assert_eq!(resolve_delay(&k, &fixed, &ofdm).unwrap(), 15.0);
        let short = adaptive.with_delay(DelayPolicy::Fixed(4.0));
        assert!(matches!(
            resolve_delay(&k, &short, &ofdm),
            Err(DefenderError::DelayTooShort { .. })
        ));
        let zero_margin = adaptive.with_delay(DelayPolicy::Adaptive { margin: 0.0 });
        assert!(resolve_delay(&k, &zero_margin, &ofdm).is_err());
        let huge = adaptive.with_delay(DelayPolicy::Fixed(5000.0));
        let capped = resolve_delay(&k, &huge, &ofdm).unwrap();
        assert!(capped < ofdm.alias_window() - k.d_d && capped > 700.0);
        assert!(matches!(
            beamform_delay_precoder(&k, &short.with_delay(DelayPolicy::Fixed(0.0)), &ArrayConfig::default(), &ofdm),
            Err(DefenderError::DelayTooShort { .. })
        ));
    }

    #[test]
    fn beam_delay_zero_matches_two_beam() {
        let tx = ArrayConfig::default();
        let ofdm = OfdmConfig::default();
        let p = two_beam_precoder(0.0, -0.5, 0.0, &tx, &ofdm).unwrap();
        for (w, f) in p.weights().iter().zip(ofdm.subcarrier_frequencies()) {
            let raw = steering_vector(&tx, 0.0, f) + steering_vector(&tx, -0.5, f);
            let expect = &raw / Complex64::new(raw.norm(), 0.0);
            assert!((w - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn dispatch_modes() {
        let tx = ArrayConfig::default();
        let ofdm = OfdmConfig::default();
        let k = knowledge(0.0, -30.0);
        for mode in ObfuscationMode::ALL {
            let p = build_precoder(&k, &ObfuscationPolicy::new(mode), &tx, &ofdm).unwrap();
            assert!(unit_norm(&p));
            assert_eq!(p.num_subcarriers(), 52);
        }
        let none = build_precoder(&k, &ObfuscationPolicy::new(ObfuscationMode::None), &tx, &ofdm)
            .unwrap();
        assert_abs_diff_eq!(gain(&none, &tx, &ofdm, 0.0), 2.0, epsilon = 1e-12);
        assert_eq!("beam_delay".parse::<ObfuscationMode>().unwrap(), ObfuscationMode::BeamDelay);
        assert!("bogus".parse::<ObfuscationMode>().is_err());
    }

    fn reflected(length: f64, aod: f64, gain: f64) -> PathComponent {
        PathComponent {
            length,
            aod,
            aoa: 0.0,
            gain,
            order: 1,
            bounces: vec![],
        }
    }

    #[test]
    fn knowledge_from_paths() {
        let direct = PathComponent {
            length: 10.0,
            aod: 0.1,
            aoa: -0.1,
            gain: 0.1,
            order: 0,
            bounces: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let paths = vec![
            direct.clone(),
            reflected(12.0, 0.3, 0.02),
            reflected(15.0, -0.4, 0.05),
            reflected(18.0, 0.9, 0.01),
        ];
        let k = make_path_knowledge(&paths, &mut rng, 0.0).unwrap();
        assert_eq!((k.theta_d, k.d_d), (0.1, 10.0));
        assert_eq!((k.theta_r, k.d_r), (-0.4, 15.0));
        assert!(matches!(
            make_path_knowledge(&[direct], &mut rng, 0.0),
            Err(DefenderError::NotApplicable(_))
        ));
        let noisy = make_path_knowledge(&paths, &mut rng, 2f64.to_radians()).unwrap();
        assert_ne!(noisy.theta_d, 0.1);
    }

    #[test]
    fn angle_error_degrades_null() {
        let tx = ArrayConfig::default();
        let ofdm = OfdmConfig::default();
        let direct = PathComponent {
            length: 10.0,
            aod: 0.0,
            aoa: 0.0,
            gain: 0.1,
            order: 0,
            bounces: vec![],
        };
        let paths = vec![direct, reflected(200f64.sqrt(), (-30f64).to_radians(), 0.04)];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut depth = Vec::new();
        for std_deg in [0.0, 2.0] {
            let k = make_path_knowledge(&paths, &mut rng, f64::to_radians(std_deg)).unwrap();
            let p = nulling_precoder(&k, &tx, &ofdm).unwrap();
            depth.push(gain(&p, &tx, &ofdm, 0.0));
        }
        assert!(depth[0] < 1e-10);
        assert!(depth[1] > 1e-4);
    }

    #[test]
    fn precoder_csv_rows() {
        let p = matched_precoder(0.0, &ArrayConfig::default(), &OfdmConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_precoder_csv(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("subcarrier_index,antenna_index,real,imag"));
        let first: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(&first[..2], &[0.0, 0.0]);
        assert_abs_diff_eq!(first[2], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(first[3], 0.0, epsilon = 1e-15);
        assert_eq!(lines.count(), 52 * 4 - 1);
    }

    proptest! {
        #[test]
        fn precoders_unit_norm_and_nulls(
            td in -80.0f64..80.0,
            gap in 3.0f64..60.0,
            sign in prop::bool::ANY,
            d_obf in 0.0f64..60.0,
            k_tx in 3usize..7,
        ) {
            let tr = if sign { td - gap } else { td + gap };
            prop_assume!(tr.abs() <= 89.0);
            let tx = ArrayConfig { num_antennas: k_tx, ..ArrayConfig::default() };
            let ofdm = OfdmConfig { num_subcarriers: 8, ..OfdmConfig::default() };
            let k = knowledge(td, tr);
            let null = nulling_precoder(&k, &tx, &ofdm).unwrap();
            prop_assert!(unit_norm(&null));
            prop_assert!(gain(&null, &tx, &ofdm, k.theta_d) < 1e-10);
            for rule in [CombineRule::Projection, CombineRule::SimilarityWeighted] {
                let m = mirage_two_beam(k.theta_d, k.theta_r, d_obf, rule, &tx, &ofdm).unwrap();
                prop_assert!(unit_norm(&m));
            }
            let b = two_beam_precoder(k.theta_d, k.theta_r, d_obf, &tx, &ofdm).unwrap();
            prop_assert!(unit_norm(&b));
        }
    }
}
