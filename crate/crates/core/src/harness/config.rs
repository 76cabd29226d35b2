//! Scenario configuration, loaded from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacker::{MusicConfig, ProfileGrid};
use crate::defender::{ObfuscationMode, ObfuscationPolicy};
use crate::geometry::{Environment, Pose, Reflector, Vec2};
use crate::phy::{ArrayConfig, OfdmConfig};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    pub x: f64,
    pub y: f64,
    /// Broadside bearing in degrees; omitted means facing the room center.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentSpec {
    pub width: f64,
    pub height: f64,
    /// Whether the four boundary walls reflect.
    pub walls: bool,
    pub wall_gamma: f64,
    pub reflectors: Vec<ReflectorSpec>,
    /// Empty means one AP at the middle of each wall.
    pub aps: Vec<ApSpec>,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        let r = |x0: f64, y0: f64, x1: f64, y1: f64| ReflectorSpec {
            start: [x0, y0],
            end: [x1, y1],
            gamma: 0.5,
        };
        Self {
            width: 40.0,
            height: 30.0,
            walls: true,
            wall_gamma: 1.0,
            reflectors: vec![
                r(10.0, 8.0, 16.0, 8.0),
                r(24.0, 22.0, 30.0, 22.0),
                r(8.0, 18.0, 8.0, 24.0),
                r(32.0, 6.0, 32.0, 12.0),
            ],
            aps: Vec::new(),
        }
    }
}

impl EnvironmentSpec {
    pub fn build(&self, rng_seed: u64) -> Result<Environment, HarnessError> {
        let mut reflectors = if self.walls {
            Environment::wall_reflectors(self.width, self.height, self.wall_gamma)
        } else {
            Vec::new()
        };
        reflectors.extend(self.reflectors.iter().map(|r| {
            Reflector::new(
                Vec2::new(r.start[0], r.start[1]),
                Vec2::new(r.end[0], r.end[1]),
                r.gamma,
            )
        }));
        let center = Vec2::new(self.width / 2.0, self.height / 2.0);
        let aps = if self.aps.is_empty() {
            Environment::wall_center_aps(self.width, self.height)
        } else {
            self.aps
                .iter()
                .map(|a| {
                    let p = Vec2::new(a.x, a.y);
                    match a.orientation_deg {
                        Some(o) => Pose::new(p, o.to_radians()),
                        None => Pose::facing(p, center),
                    }
                })
                .collect()
        };
        Ok(Environment::new(self.width, self.height, reflectors, aps, rng_seed)?)
    }

    /// Copy with the AP list written out explicitly.
    fn resolved(&self, env: &Environment) -> Self {
        Self {
            aps: env
                .aps
                .iter()
                .map(|p| ApSpec {
                    x: p.position.x,
                    y: p.position.y,
                    orientation_deg: Some(p.orientation.to_degrees()),
                })
                .collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    pub angle_step_deg: f64,
    pub distance_min_m: f64,
    pub distance_max_m: f64,
    pub distance_step_m: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            angle_min_deg: -90.0,
            angle_max_deg: 90.0,
            angle_step_deg: 1.0,
            distance_min_m: 0.0,
            distance_max_m: 60.0,
            distance_step_m: 0.25,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> ProfileGrid {
        ProfileGrid::uniform(
            self.angle_min_deg,
            self.angle_max_deg,
            self.angle_step_deg,
            self.distance_min_m,
            self.distance_max_m,
            self.distance_step_m,
        )
    }
}

/// How the user's array is turned at each position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserOrientation {
    /// Broadside at the serving AP.
    Serving,
    /// Broadside at the room center.
    Center,
    /// Keeps the serving AP in front and as many other APs as possible
    /// inside the front half-plane.
    Coverage,
}

/// Signal-subspace dimension handed to MUSIC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathCountSpec {
    /// Number of enumerated paths between the user and that AP.
    TruePaths,
    Fixed(usize),
    EigenRatio(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerSpec {
    pub path_count: PathCountSpec,
    pub music: MusicConfig,
    /// Standard deviation of the range oracle, meters.
    pub range_noise_std_m: f64,
}

impl Default for AttackerSpec {
    fn default() -> Self {
        Self {
            path_count: PathCountSpec::TruePaths,
            music: MusicConfig::default(),
            range_noise_std_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub rng_seed: u64,
    pub num_positions: usize,
    /// Per-entry CSI SNR; `inf` disables noise.
    pub snr_db: f64,
    /// Downlink departure-angle estimation error, degrees.
    pub angle_error_std_deg: f64,
    /// Upper end of the uniform per-packet SFO distance offset, meters.
    pub sfo_max_m: f64,
    /// Minimum distance between a random user position and the walls.
    pub position_margin_m: f64,
    pub max_order: usize,
    pub user_orientation: UserOrientation,
    pub calibration_offset_db: f64,
    pub output_dir: PathBuf,
    pub environment: EnvironmentSpec,
    pub tx_array: ArrayConfig,
    pub rx_array: ArrayConfig,
    pub ofdm: OfdmConfig,
    pub grid: GridSpec,
    pub attacker: AttackerSpec,
    /// Policies to compare; `none` is added if missing.
    pub policies: Vec<ObfuscationPolicy>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            rng_seed: 1,
            num_positions: 100,
            snr_db: 20.0,
            angle_error_std_deg: 0.0,
            sfo_max_m: 10.0,
            position_margin_m: 0.5,
            max_order: 1,
            user_orientation: UserOrientation::Coverage,
            calibration_offset_db: 0.0,
            output_dir: PathBuf::from("out"),
            environment: EnvironmentSpec::default(),
            tx_array: ArrayConfig::default(),
            rx_array: ArrayConfig::default(),
            ofdm: OfdmConfig::default(),
            grid: GridSpec {
                distance_max_m: 120.0,
                ..GridSpec::default()
            },
            attacker: AttackerSpec::default(),
            policies: ObfuscationMode::ALL
                .into_iter()
                .map(ObfuscationPolicy::new)
                .collect(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml_str(&text)
    }

    /// Policies with `none` guaranteed first.
    pub fn effective_policies(&self) -> Vec<ObfuscationPolicy> {
        let mut out = vec![self
            .policies
            .iter()
            .find(|p| p.mode == ObfuscationMode::None)
            .copied()
            .unwrap_or_else(|| ObfuscationPolicy::new(ObfuscationMode::None))];
        out.extend(self.policies.iter().filter(|p| p.mode != ObfuscationMode::None));
        out
    }

    pub fn validate(&self) -> Result<Environment, HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.num_positions == 0 {
            return bad("num_positions must be at least 1".into());
        }
        if self.snr_db.is_nan() {
            return bad("snr_db must be a number or inf".into());
        }
        if !(self.angle_error_std_deg >= 0.0) || !(self.attacker.range_noise_std_m >= 0.0) {
            return bad("noise standard deviations must be non-negative".into());
        }
        if !(self.sfo_max_m >= 0.0) || self.sfo_max_m > self.ofdm.alias_window() {
            return bad(format!(
                "sfo_max_m must lie in [0, {}]",
                self.ofdm.alias_window()
            ));
        }
        let e = &self.environment;
        if !(self.position_margin_m >= 0.0)
            || 2.0 * self.position_margin_m >= e.width.min(e.height)
        {
            return bad("position_margin_m leaves no room for users".into());
        }
        self.tx_array.validate()?;
        self.rx_array.validate()?;
        self.ofdm.validate()?;
        self.grid.build().validate(&self.ofdm)?;
        let m = &self.attacker.music;
        if m.sub_antennas == 0 || m.sub_antennas > self.rx_array.num_antennas {
            return bad(format!(
                "music.sub_antennas must lie in [1, {}]",
                self.rx_array.num_antennas
            ));
        }
        if !(m.spectrum_floor >= 0.0) {
            return bad("music.spectrum_floor must be non-negative".into());
        }
        match self.attacker.path_count {
            PathCountSpec::Fixed(0) => return bad("path_count.fixed must be positive".into()),
            PathCountSpec::EigenRatio(r) if !(r > 0.0 && r <= 1.0) => {
                return bad("path_count.eigen_ratio must lie in (0, 1]".into())
            }
            _ => {}
        }
        let env = self.environment.build(self.rng_seed)?;
        if env.aps.is_empty() {
            return bad("environment needs at least one AP".into());
        }
        Ok(env)
    }

    /// Full configuration with every default written out.
    pub fn resolved(&self) -> Result<Self, HarnessError> {
        let env = self.validate()?;
        let mut out = self.clone();
        out.environment = self.environment.resolved(&env);
        out.policies = self.effective_policies();
        let m = &mut out.attacker.music;
        m.sub_subcarriers = Some(m.sub_subcarriers_for(self.ofdm.num_subcarriers));
        Ok(out)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}
