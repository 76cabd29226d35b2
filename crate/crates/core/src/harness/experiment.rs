//! Monte-Carlo driver: one trial per random user position.
//!
//! Each trial owns a ChaCha8 stream derived from `(rng_seed, trial index)`,
//! so records do not depend on thread count or scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::attacker::{
    localize_single_ap, music_profile, select_direct, smooth_csi, triangulate, PathCount, Peak,
    ProfileGrid,
};
use crate::defender::{
    build_precoder, make_path_knowledge, matched_precoder, resolve_delay, DefenderError,
    ObfuscationMode, ObfuscationPolicy, PathKnowledge,
};
use crate::geometry::{bearing_to, enumerate_paths, wrap_angle, Environment, PathComponent, Pose, Vec2};
use crate::phy::{add_noise, apply_precoder, rssi_db, synthesize_csi, Precoder};

use super::config::{PathCountSpec, ScenarioConfig, UserOrientation};
use super::HarnessError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write every attacker profile as CSV under this directory.
    pub profile_dir: Option<PathBuf>,
}

/// What one AP's attacker saw under one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ApObservation {
    pub ap: usize,
    /// Bearing of the user in the AP's frame.
    pub true_aoa: f64,
    pub true_range: f64,
    /// Whether the direct path survived the half-plane filter.
    pub direct_visible: bool,
    pub num_paths: usize,
    pub sfo_offset: f64,
    /// Noise-free RSSI of the effective channel at this AP.
    pub rssi_db: f64,
    pub estimate: Result<Peak, String>,
    pub aoa_error_deg: Option<f64>,
    pub single_ap: Option<Vec2>,
    pub single_ap_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub label: String,
    pub policy: ObfuscationPolicy,
    /// Mode actually applied; `none` when the defense was not applicable.
    pub applied: ObfuscationMode,
    pub d_obf: Option<f64>,
    pub aps: Vec<ApObservation>,
    pub triangulation: Option<Vec2>,
    pub triangulation_error: Option<f64>,
    pub error: Option<String>,
}

impl PolicyOutcome {
    fn failed(label: &str, policy: &ObfuscationPolicy, reason: String) -> Self {
        Self {
            label: label.to_string(),
            policy: *policy,
            applied: policy.mode,
            d_obf: None,
            aps: Vec::new(),
            triangulation: None,
            triangulation_error: None,
            error: Some(reason),
        }
    }

    pub fn serving<'a>(&'a self, record: &TrialRecord) -> Option<&'a ApObservation> {
        let s = record.serving_ap?;
        self.aps.iter().find(|o| o.ap == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    pub user: Pose,
    pub serving_ap: Option<usize>,
    pub knowledge: Option<PathKnowledge>,
    pub outcomes: Vec<PolicyOutcome>,
    pub failure: Option<String>,
}

/// Stream `trial` of the run's seeded generator.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

/// Labels that stay unique when a mode is listed more than once.
pub fn policy_labels(policies: &[ObfuscationPolicy]) -> Vec<String> {
    policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let dup = policies.iter().filter(|q| q.mode == p.mode).count() > 1;
            if dup {
                format!("{}_{i}", p.mode.name())
            } else {
                p.mode.name().to_string()
            }
        })
        .collect()
}

pub fn run_experiment(
    config: &ScenarioConfig,
    options: &RunOptions,
) -> Result<Vec<TrialRecord>, HarnessError> {
    let env = config.validate()?;
    if let Some(dir) = &options.profile_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    let ctx = Context::new(config, env, options.profile_dir.clone());
    (0..config.num_positions)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(config.rng_seed, t);
            let user = random_position(&ctx.env, config.position_margin_m, &mut rng);
            ctx.trial(t, user, &mut rng)
        })
        .collect()
}

/// One trial at a fixed user position, using stream `trial` of the seed.
pub fn run_single(
    config: &ScenarioConfig,
    position: Vec2,
    trial: usize,
    profile_dir: Option<PathBuf>,
) -> Result<TrialRecord, HarnessError> {
    let env = config.validate()?;
    if !env.contains(position) {
        return Err(crate::geometry::GeometryError::OutsideRoom {
            x: position.x,
            y: position.y,
        }
        .into());
    }
    if let Some(dir) = &profile_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    let ctx = Context::new(config, env, profile_dir);
    let mut rng = trial_rng(config.rng_seed, trial);
    // Consume the position draw so the rest of the stream matches a full run.
    let _ = random_position(&ctx.env, config.position_margin_m, &mut rng);
    ctx.trial(trial, position, &mut rng)
}

/// Precoder the user would apply at `position` under `mode`, with the
/// downlink knowledge it was built from.
pub fn precoder_at(
    config: &ScenarioConfig,
    position: Vec2,
    mode: ObfuscationMode,
) -> Result<(Precoder, Option<PathKnowledge>, ObfuscationMode, Option<f64>), HarnessError> {
    let env = config.validate()?;
    let ctx = Context::new(config, env, None);
    let serving = ctx.serving_ap(position);
    let user = ctx.user_pose(position, serving);
    let paths = enumerate_paths(&ctx.env, &user, serving, config.max_order)?;
    let mut rng = trial_rng(config.rng_seed, 0);
    let _ = random_position(&ctx.env, config.position_margin_m, &mut rng);
    let std = config.angle_error_std_deg.to_radians();
    let knowledge = match make_path_knowledge(&paths, &mut rng, std) {
        Ok(k) => Some(k),
        Err(DefenderError::NotApplicable(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let policy = config
        .effective_policies()
        .into_iter()
        .find(|p| p.mode == mode)
        .unwrap_or_else(|| ObfuscationPolicy::new(mode));
    let (w, applied, d_obf) = ctx.precoder_for(&user, serving, knowledge, &policy)?;
    Ok((w, knowledge, applied, d_obf))
}

fn random_position<R: Rng + ?Sized>(env: &Environment, margin: f64, rng: &mut R) -> Vec2 {
    let x = rng.random_range(margin..env.width - margin);
    let y = rng.random_range(margin..env.height - margin);
    Vec2::new(x, y)
}

fn aoa_error_deg(est: f64, truth: f64) -> f64 {
    wrap_angle(est - truth).abs().to_degrees()
}

struct Context<'a> {
    config: &'a ScenarioConfig,
    env: Environment,
    grid: ProfileGrid,
    policies: Vec<ObfuscationPolicy>,
    labels: Vec<String>,
    profile_dir: Option<PathBuf>,
}

impl<'a> Context<'a> {
    fn new(config: &'a ScenarioConfig, env: Environment, profile_dir: Option<PathBuf>) -> Self {
        let policies = config.effective_policies();
        Self {
            labels: policy_labels(&policies),
            policies,
            grid: config.grid.build(),
            env,
            config,
            profile_dir,
        }
    }

    fn trial(
        &self,
        index: usize,
        position: Vec2,
        rng: &mut ChaCha8Rng,
    ) -> Result<TrialRecord, HarnessError> {
        let mut record = TrialRecord {
            index,
            user: Pose::new(position, 0.0),
            serving_ap: None,
            knowledge: None,
            outcomes: Vec::new(),
            failure: None,
        };
        let serving = self.serving_ap(position);
        let user = self.user_pose(position, serving);
        record.user = user;
        record.serving_ap = Some(serving);

        let paths: Vec<Vec<PathComponent>> = match (0..self.env.aps.len())
            .map(|k| enumerate_paths(&self.env, &user, k, self.config.max_order))
            .collect::<Result<_, _>>()
        {
            Ok(p) => p,
            Err(e) => {
                record.failure = Some(e.to_string());
                return Ok(record);
            }
        };

        let std = self.config.angle_error_std_deg.to_radians();
        let knowledge = match make_path_knowledge(&paths[serving], rng, std) {
            Ok(k) => Some(k),
            Err(DefenderError::NotApplicable(reason)) => {
                log::warn!("trial {index}: defense not applicable ({reason}); using mode none");
                None
            }
            Err(e) => {
                record.failure = Some(e.to_string());
                return Ok(record);
            }
        };
        record.knowledge = knowledge;

        for (policy, label) in self.policies.iter().zip(&self.labels) {
            let outcome =
                match self.run_policy(index, &user, serving, &paths, knowledge, policy, label, rng) {
                    Ok(o) => o,
                    Err(e) => PolicyOutcome::failed(label, policy, e.to_string()),
                };
            record.outcomes.push(outcome);
        }
        Ok(record)
    }

    /// Nearest AP.
    fn serving_ap(&self, position: Vec2) -> usize {
        self.env
            .aps
            .iter()
            .enumerate()
            .min_by(|a, b| {
                position
                    .distance(a.1.position)
                    .total_cmp(&position.distance(b.1.position))
            })
            .map(|(i, _)| i)
            .expect("validated environment has APs")
    }

    fn user_pose(&self, position: Vec2, serving: usize) -> Pose {
        let toward = |p: Vec2| Pose::facing(position, p).orientation;
        let to_serving = toward(self.env.aps[serving].position);
        match self.config.user_orientation {
            UserOrientation::Serving => Pose::new(position, to_serving),
            UserOrientation::Center => {
                let c = Vec2::new(self.env.width / 2.0, self.env.height / 2.0);
                if c.distance(position) < 1e-9 {
                    Pose::new(position, to_serving)
                } else {
                    Pose::new(position, toward(c))
                }
            }
            UserOrientation::Coverage => {
                let bearings: Vec<f64> = self.env.aps.iter().map(|a| toward(a.position)).collect();
                // 5° inside the half-plane edge; candidates on a 1° grid
                // around the serving bearing, nearest first.
                let limit = 85f64.to_radians();
                let mut best = (0usize, to_serving);
                for step in 0..=170 {
                    let off = ((step + 1) / 2) as f64 * if step % 2 == 0 { 1.0 } else { -1.0 };
                    let o = to_serving + off.to_radians();
                    let seen = bearings
                        .iter()
                        .filter(|&&b| wrap_angle(b - o).abs() < limit)
                        .count();
                    if seen > best.0 {
                        best = (seen, o);
                    }
                }
                Pose::new(position, wrap_angle(best.1))
            }
        }
    }

    fn precoder_for(
        &self,
        user: &Pose,
        serving: usize,
        knowledge: Option<PathKnowledge>,
        policy: &ObfuscationPolicy,
    ) -> Result<(Precoder, ObfuscationMode, Option<f64>), DefenderError> {
        let cfg = self.config;
        match knowledge {
            Some(k) => {
                let d_obf = match policy.mode {
                    ObfuscationMode::BeamDelay | ObfuscationMode::Mirage => {
                        Some(resolve_delay(&k, policy, &cfg.ofdm)?)
                    }
                    _ => None,
                };
                let w = build_precoder(&k, policy, &cfg.tx_array, &cfg.ofdm)?;
                Ok((w, policy.mode, d_obf))
            }
            None => {
                let theta_d = bearing_to(user, self.env.aps[serving].position)
                    .map_err(|e| DefenderError::NotApplicable(e.to_string()))?;
                let w = matched_precoder(theta_d, &cfg.tx_array, &cfg.ofdm)?;
                Ok((w, ObfuscationMode::None, None))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_policy(
        &self,
        index: usize,
        user: &Pose,
        serving: usize,
        paths: &[Vec<PathComponent>],
        knowledge: Option<PathKnowledge>,
        policy: &ObfuscationPolicy,
        label: &str,
        rng: &mut ChaCha8Rng,
    ) -> Result<PolicyOutcome, HarnessError> {
        let cfg = self.config;
        let (w, applied, d_obf) = match self.precoder_for(user, serving, knowledge, policy) {
            Ok(v) => v,
            Err(e) => return Ok(PolicyOutcome::failed(label, policy, e.to_string())),
        };
        let mut outcome = PolicyOutcome {
            applied,
            d_obf,
            error: None,
            ..PolicyOutcome::failed(label, policy, String::new())
        };

        let range_noise = if cfg.attacker.range_noise_std_m > 0.0 {
            Some(Normal::new(0.0, cfg.attacker.range_noise_std_m).expect("validated std"))
        } else {
            None
        };

        for (k, ap_paths) in paths.iter().enumerate() {
            let ap = &self.env.aps[k];
            let true_aoa = bearing_to(ap, user.position)?;
            let true_range = ap.position.distance(user.position);
            let sfo = if cfg.sfo_max_m > 0.0 {
                rng.random_range(0.0..cfg.sfo_max_m)
            } else {
                0.0
            };
            let mut obs = ApObservation {
                ap: k,
                true_aoa,
                true_range,
                direct_visible: ap_paths.iter().any(|p| p.order == 0),
                num_paths: ap_paths.len(),
                sfo_offset: sfo,
                rssi_db: f64::NEG_INFINITY,
                estimate: Err("no paths".into()),
                aoa_error_deg: None,
                single_ap: None,
                single_ap_error: None,
            };
            if ap_paths.is_empty() {
                outcome.aps.push(obs);
                continue;
            }
            let h = synthesize_csi(ap_paths, &cfg.tx_array, &cfg.rx_array, &cfg.ofdm, sfo)?;
            let eff = apply_precoder(&h, &w)?;
            obs.rssi_db = rssi_db(&eff, cfg.calibration_offset_db);
            let noisy = add_noise(&eff, cfg.snr_db, rng);
            let range = match &range_noise {
                Some(n) => (true_range + n.sample(rng)).max(1e-3),
                None => true_range,
            };
            obs.estimate = self.attack(&noisy, ap_paths.len(), index, label, k);
            if let Ok(peak) = &obs.estimate {
                obs.aoa_error_deg = Some(aoa_error_deg(peak.angle, true_aoa));
                let est = localize_single_ap(ap, peak.angle, range)?;
                obs.single_ap_error = Some(est.position.distance(user.position));
                obs.single_ap = Some(est.position);
            }
            outcome.aps.push(obs);
        }

        let (poses, aoas): (Vec<Pose>, Vec<f64>) = outcome
            .aps
            .iter()
            .filter_map(|o| o.estimate.as_ref().ok().map(|p| (self.env.aps[o.ap], p.angle)))
            .unzip();
        match triangulate(&poses, &aoas) {
            Ok(est) => {
                outcome.triangulation_error = Some(est.position.distance(user.position));
                outcome.triangulation = Some(est.position);
            }
            Err(e) => log::debug!("trial {index} {label}: triangulation skipped ({e})"),
        }
        Ok(outcome)
    }

    fn attack(
        &self,
        h: &crate::phy::EffectiveCsi,
        true_paths: usize,
        index: usize,
        label: &str,
        ap: usize,
    ) -> Result<Peak, String> {
        let cfg = self.config;
        let music = &cfg.attacker.music;
        let sub_s = music.sub_subcarriers_for(cfg.ofdm.num_subcarriers);
        let smoothed = smooth_csi(h, music.sub_antennas, sub_s).map_err(|e| e.to_string())?;
        let rows = smoothed.snapshots.nrows();
        let count = match cfg.attacker.path_count {
            PathCountSpec::TruePaths => PathCount::Fixed(true_paths.min(rows - 1)),
            PathCountSpec::Fixed(n) => PathCount::Fixed(n),
            PathCountSpec::EigenRatio(r) => PathCount::EigenRatio(r),
        };
        let profile = music_profile(&smoothed, &self.grid, count, music, &cfg.ofdm, &cfg.rx_array)
            .map_err(|e| e.to_string())?;
        if let Some(dir) = &self.profile_dir {
            let path = profile_path(dir, index, label, ap);
            if let Err(e) = write_profile(&path, &profile) {
                log::error!("{}: {e}", path.display());
            }
        }
        select_direct(&profile).map_err(|e| e.to_string())
    }
}

pub fn profile_path(dir: &Path, trial: usize, label: &str, ap: usize) -> PathBuf {
    dir.join(format!("trial{trial:05}_{label}_ap{ap}.csv"))
}

fn write_profile(
    path: &Path,
    profile: &crate::attacker::AngleDistanceProfile,
) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    profile.write_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::EnvironmentSpec;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            num_positions: 3,
            grid: super::super::config::GridSpec {
                distance_max_m: 80.0,
                distance_step_m: 0.5,
                angle_step_deg: 2.0,
                ..Default::default()
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn no_reflectors_policy_none_is_exact() {
        let cfg = ScenarioConfig {
            num_positions: 1,
            snr_db: f64::INFINITY,
            environment: EnvironmentSpec {
                walls: false,
                reflectors: vec![],
                ..EnvironmentSpec::default()
            },
            policies: vec![ObfuscationPolicy::new(ObfuscationMode::None)],
            ..ScenarioConfig::default()
        };
        let records = run_experiment(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(records.len(), 1);
        let r = &records[0];
        assert!(r.knowledge.is_none());
        assert_eq!(r.outcomes.len(), 1);
        let out = &r.outcomes[0];
        let serving = out.serving(r).unwrap();
        assert!(serving.aoa_error_deg.unwrap() <= 1.0);
        assert!(serving.direct_visible);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let cfg = small_config();
        let a = run_experiment(&cfg, &RunOptions::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_experiment(&cfg, &RunOptions::default()).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for r in &a {
            assert!(r.failure.is_none());
            assert_eq!(r.outcomes.len(), 4);
            assert_eq!(r.outcomes[0].policy.mode, ObfuscationMode::None);
        }
    }

    #[test]
    fn single_matches_experiment_stream() {
        let cfg = small_config();
        let all = run_experiment(&cfg, &RunOptions::default()).unwrap();
        let one = run_single(&cfg, all[1].user.position, 1, None).unwrap();
        assert_eq!(one, all[1]);
        assert!(run_single(&cfg, Vec2::new(-1.0, 2.0), 0, None).is_err());
    }

    #[test]
    fn labels_unique() {
        let p = [
            ObfuscationPolicy::new(ObfuscationMode::None),
            ObfuscationPolicy::new(ObfuscationMode::Mirage),
            ObfuscationPolicy::new(ObfuscationMode::Mirage),
        ];
        assert_eq!(policy_labels(&p), ["none", "mirage_1", "mirage_2"]);
    }

    #[test]
    fn aoa_error_wraps() {
        assert!((aoa_error_deg(179f64.to_radians(), (-179f64).to_radians()) - 2.0).abs() < 1e-9);
        assert_eq!(aoa_error_deg(0.3, 0.3), 0.0);
    }
}
