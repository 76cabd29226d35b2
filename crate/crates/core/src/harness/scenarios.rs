//! The fixed two-path scenario: a direct path straight ahead at 10 m and one
//! reflection leaving and arriving at −30°, length √200 m.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacker::{
    music_profile, select_direct, smooth_csi, AngleDistanceProfile, MusicConfig, Peak, PathCount,
    ProfileGrid,
};
use crate::defender::{
    build_precoder, make_path_knowledge, matched_precoder, mirage_two_beam, nulling_precoder,
    two_beam_precoder, CombineRule, DelayPolicy, ObfuscationMode, ObfuscationPolicy, PathKnowledge,
};
use crate::geometry::PathComponent;
use crate::phy::{
    apply_precoder, incoherent_rssi_db, rssi_db, synthesize_csi, ArrayConfig, OfdmConfig, Precoder,
};

use super::HarnessError;

pub const DIRECT_LENGTH: f64 = 10.0;
pub const REFLECTED_ANGLE_DEG: f64 = -30.0;
/// Reflection coefficient of the default scenario.
pub const GAMMA: f64 = 0.6;
/// Reflection coefficient of the strong-reflector variant.
pub const STRONG_GAMMA: f64 = 0.9;

pub fn reflected_length() -> f64 {
    200f64.sqrt()
}

pub fn two_path(gamma: f64) -> Vec<PathComponent> {
    let theta = REFLECTED_ANGLE_DEG.to_radians();
    vec![
        PathComponent {
            length: DIRECT_LENGTH,
            aod: 0.0,
            aoa: 0.0,
            gain: 1.0 / DIRECT_LENGTH,
            order: 0,
            bounces: vec![],
        },
        PathComponent {
            length: reflected_length(),
            aod: theta,
            aoa: theta,
            gain: gamma / reflected_length(),
            order: 1,
            bounces: vec![],
        },
    ]
}

pub fn knowledge(gamma: f64) -> PathKnowledge {
    make_path_knowledge(&two_path(gamma), &mut ChaCha8Rng::seed_from_u64(0), 0.0)
        .expect("two-path scenario has a reflection")
}

/// Precoder for `mode`; an explicit `d_obf` bypasses the delay precondition.
pub fn precoder(
    mode: ObfuscationMode,
    d_obf: Option<f64>,
    rule: CombineRule,
    gamma: f64,
) -> Result<Precoder, HarnessError> {
    let k = knowledge(gamma);
    let tx = ArrayConfig::default();
    let ofdm = OfdmConfig::default();
    let p = match (mode, d_obf) {
        (ObfuscationMode::None, _) => matched_precoder(k.theta_d, &tx, &ofdm)?,
        (ObfuscationMode::Nulling, _) => nulling_precoder(&k, &tx, &ofdm)?,
        (ObfuscationMode::BeamDelay, Some(d)) => {
            two_beam_precoder(k.theta_d, k.theta_r, d, &tx, &ofdm)?
        }
        (ObfuscationMode::Mirage, Some(d)) => {
            mirage_two_beam(k.theta_d, k.theta_r, d, rule, &tx, &ofdm)?
        }
        (m, None) => build_precoder(
            &k,
            &ObfuscationPolicy::new(m)
                .with_delay(DelayPolicy::default())
                .with_combine_rule(rule),
            &tx,
            &ofdm,
        )?,
    };
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub profile: AngleDistanceProfile,
    pub direct: Result<Peak, String>,
    pub rssi_db: f64,
    /// Per-path power prediction for the same precoder.
    pub closed_form_rssi_db: f64,
}

/// Noise-free attacker view of the scenario under `w`.
pub fn observe(
    gamma: f64,
    w: &Precoder,
    sfo_offset: f64,
    grid: &ProfileGrid,
    music: &MusicConfig,
) -> Result<Observation, HarnessError> {
    let arr = ArrayConfig::default();
    let ofdm = OfdmConfig::default();
    let paths = two_path(gamma);
    let h = synthesize_csi(&paths, &arr, &arr, &ofdm, sfo_offset)?;
    let eff = apply_precoder(&h, w)?;
    let smoothed = smooth_csi(
        &eff,
        music.sub_antennas,
        music.sub_subcarriers_for(ofdm.num_subcarriers),
    )?;
    let profile = music_profile(&smoothed, grid, PathCount::Fixed(paths.len()), music, &ofdm, &arr)?;
    let direct = select_direct(&profile).map_err(|e| e.to_string());
    Ok(Observation {
        direct,
        rssi_db: rssi_db(&eff, 0.0),
        closed_form_rssi_db: incoherent_rssi_db(&paths, w, &arr, &arr, &ofdm, 0.0),
        profile,
    })
}
