//! Experiment configuration: one JSON document drives every subcommand.
//! Unknown keys are rejected so a typo can't silently fall back to a
//! default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use displaystereo::learning::{OptimizerSchedule, PatternFamily};
use displaystereo::scene::SceneKind;
use displaystereo::sensor::WeightFunction;
use displaystereo::{presets, DisplayGeometryF64};

/// One synthetic scene to generate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub seed: u64,
    /// Peak surface relief toward the camera, meters.
    pub amplitude: f64,
    /// Directory name for this scene's outputs; defaults to `<kind>_<seed>`.
    pub name: Option<String>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            kind: SceneKind::SphereCap,
            seed: 11,
            amplitude: 0.02,
            name: None,
        }
    }
}

impl SceneConfig {
    pub fn label(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        let kind = match self.kind {
            SceneKind::Plane => "plane",
            SceneKind::SphereCap => "sphere_cap",
            SceneKind::PerlinHeightfield => "perlin",
            SceneKind::LeafHeightfield => "leaf",
        };
        format!("{kind}_{}", self.seed)
    }
}

/// Superpixel grid and physical panel size.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisplayConfig {
    pub rows: usize,
    pub cols: usize,
    pub width_m: f64,
    pub height_m: f64,
}

impl Default for DisplayConfig {
    fn default() -> Self {
        DisplayConfig {
            rows: presets::DISPLAY_ROWS,
            cols: presets::DISPLAY_COLS,
            width_m: presets::DISPLAY_WIDTH_M,
            height_m: presets::DISPLAY_HEIGHT_M,
        }
    }
}

impl DisplayConfig {
    pub fn build(&self) -> displaystereo::Result<DisplayGeometryF64> {
        displaystereo::scene::make_display_geometry(
            self.rows,
            self.cols,
            self.width_m,
            self.height_m,
            displaystereo::Vec3F64::new(0.0, 0.0, 0.0),
        )
    }
}

/// Pattern family and capture count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    pub family: PatternFamily,
    pub k: usize,
}

impl Default for PatternConfig {
    fn default() -> Self {
        PatternConfig {
            family: PatternFamily::MonoGradient,
            k: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    Tent,
    Uniform,
}

impl WeightChoice {
    pub fn build(self) -> WeightFunction<f64> {
        match self {
            WeightChoice::Tent => WeightFunction::tent(),
            WeightChoice::Uniform => WeightFunction::uniform(),
        }
    }
}

/// Exposure ladder, read noise and quantization of the simulated sensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorConfig {
    /// Exposure times in seconds, one LDR frame each.
    pub exposures: Vec<f64>,
    /// Gaussian read-noise sigma in [0, 1] frame units.
    pub read_sigma: f64,
    pub quantization_bits: u32,
    pub weight: WeightChoice,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            exposures: presets::default_exposure_ladder(),
            read_sigma: 0.0,
            quantization_bits: 16,
            weight: WeightChoice::Tent,
        }
    }
}

/// How rank-deficient per-pixel systems are treated during reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Flag deficient pixels invalid.
    Flag,
    /// Regularize them with a small relative ridge.
    Ridge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenes: Vec<SceneConfig>,
    /// Square image resolution in pixels.
    pub resolution: usize,
    pub display: DisplayConfig,
    /// Camera model JSON; fronto-parallel pinhole at the base depth when
    /// absent.
    pub camera_json: Option<PathBuf>,
    pub patterns: PatternConfig,
    /// Reconstruct from these learned patterns instead of the family
    /// initializer.
    pub patterns_tensor: Option<PathBuf>,
    pub schedule: OptimizerSchedule<f64>,
    pub sensor: SensorConfig,
    /// Flat veiling radiance added to every basis image, in shading units
    /// (same scale as albedo times cosine).
    pub ambient_level: f64,
    /// Inverse-square distance falloff in the render.
    pub falloff: bool,
    /// Panel radiance scale mapping shading units to radiance per second;
    /// sized so the default exposure ladder brackets typical captures.
    pub display_gain: f64,
    /// Gaussian blur applied to merged captures before the solve.
    pub blur_sigma: f64,
    /// Pattern smoothing sigma during learning.
    pub smooth_sigma: f64,
    /// Warp captures back to the ideal pinhole before the solve when the
    /// camera distorts.
    pub undistort: bool,
    pub solver: SolverChoice,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenes: vec![
                SceneConfig {
                    kind: SceneKind::SphereCap,
                    seed: 11,
                    amplitude: 0.02,
                    name: None,
                },
                SceneConfig {
                    kind: SceneKind::PerlinHeightfield,
                    seed: 23,
                    amplitude: 0.02,
                    name: None,
                },
                SceneConfig {
                    kind: SceneKind::LeafHeightfield,
                    seed: 37,
                    amplitude: 0.02,
                    name: None,
                },
            ],
            resolution: 64,
            display: DisplayConfig::default(),
            camera_json: None,
            patterns: PatternConfig::default(),
            patterns_tensor: None,
            schedule: OptimizerSchedule::default(),
            sensor: SensorConfig::default(),
            ambient_level: 0.0,
            falloff: true,
            display_gain: 0.1,
            blur_sigma: 0.0,
            smooth_sigma: 0.5,
            undistort: true,
            solver: SolverChoice::Flag,
            seed: 0,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scenes.is_empty() {
            return Err("config needs at least one scene".into());
        }
        if self.resolution < 2 {
            return Err("resolution must be at least 2".into());
        }
        if self.patterns.k == 0 {
            return Err("patterns.k must be at least 1".into());
        }
        if self.sensor.exposures.is_empty() {
            return Err("sensor.exposures must list at least one exposure".into());
        }
        if self.sensor.exposures.iter().any(|&t| !(t > 0.0)) {
            return Err("sensor.exposures must all be positive".into());
        }
        for (i, a) in self.sensor.exposures.iter().enumerate() {
            if self.sensor.exposures[i + 1..].contains(a) {
                return Err(format!("sensor.exposures repeats {a}"));
            }
        }
        if !(self.sensor.read_sigma >= 0.0) {
            return Err("sensor.read_sigma must be non-negative".into());
        }
        if !(8..=16).contains(&self.sensor.quantization_bits) {
            return Err("sensor.quantization_bits must lie in 8..=16".into());
        }
        if !(self.display_gain > 0.0) {
            return Err("display_gain must be positive".into());
        }
        if !(self.ambient_level >= 0.0) {
            return Err("ambient_level must be non-negative".into());
        }
        if !(self.blur_sigma >= 0.0) || !(self.smooth_sigma >= 0.0) {
            return Err("blur_sigma and smooth_sigma must be non-negative".into());
        }
        self.schedule
            .validate()
            .map_err(|e| format!("schedule: {e}"))?;
        let mut labels: Vec<String> = self.scenes.iter().map(|s| s.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.scenes.len() {
            return Err("scene labels must be unique; set distinct names or seeds".into());
        }
        Ok(())
    }
}
