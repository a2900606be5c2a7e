//! Run configuration: `key = value` lines grouped under `[section]` headers.
//!
//! Keys before the first header form the general section, which accepts the
//! graph hyperparameters `C_si`, `C_r`, `T_loop` and the match threshold
//! `N_th`. `T_loop = inf` disables loop closure. Unknown sections or keys are
//! errors.

use std::path::{Path, PathBuf};

use flowslam_core::posegraph::{HyperParams, InformationSource, InverseMode, OptimizeConfig, SigmaParams};
use flowslam_core::reloc::{FeatureConfig, LoopParams};
use flowslam_core::vo::EstimatorConfig;
use flowslam_core::Intrinsics;
use ini::Ini;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}:{col}: {message}", path.display())]
    Syntax {
        path: PathBuf,
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{}: unknown section [{section}]", path.display())]
    UnknownSection { path: PathBuf, section: String },
    #[error("{}: [{section}] unknown key `{key}`", path.display())]
    UnknownKey { path: PathBuf, section: String, key: String },
    #[error("{}: [{section}] {key} = `{value}`: expected {expected}", path.display())]
    Type {
        path: PathBuf,
        section: String,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelocConfig {
    pub loops: LoopParams,
    /// Number of visual words.
    pub vocabulary_size: usize,
    /// Every `vocabulary_stride`-th frame contributes descriptors to the vocabulary.
    pub vocabulary_stride: usize,
}

impl Default for RelocConfig {
    fn default() -> Self {
        RelocConfig {
            loops: LoopParams::default(),
            vocabulary_size: 256,
            vocabulary_stride: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlamConfig {
    pub hyper: HyperParams,
    pub sigmas: SigmaParams,
    pub information: InformationSource,
    pub inverse: InverseMode,
    pub optimizer: OptimizeConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimPreset {
    /// Closed rectangular loop; see `TrajectorySpec::rectangle_loop`.
    #[default]
    Rectangle,
    /// Straight, non-revisiting sweep.
    Straight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub preset: SimPreset,
    /// Times the rectangle is driven. The pose count stays that of one lap.
    pub laps: usize,
    pub poses_per_segment: Option<usize>,
    /// Odometry noise per step for the corrupted odometry file.
    pub sigma_t: f64,
    pub sigma_rot: f64,
    pub write_flows: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            preset: SimPreset::Rectangle,
            laps: 1,
            poses_per_segment: None,
            sigma_t: 0.02,
            sigma_rot: 0.002,
            write_flows: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub camera: Option<Intrinsics>,
    pub vo: EstimatorConfig,
    pub loop_vo: EstimatorConfig,
    pub features: FeatureConfig,
    pub reloc: RelocConfig,
    pub slam: SlamConfig,
    pub sim: SimConfig,
}

struct Ctx<'a> {
    path: &'a Path,
    section: &'a str,
    key: &'a str,
    value: &'a str,
}

impl Ctx<'_> {
    fn type_error(&self, expected: &'static str) -> ConfigError {
        ConfigError::Type {
            path: self.path.to_path_buf(),
            section: self.section.to_string(),
            key: self.key.to_string(),
            value: self.value.to_string(),
            expected,
        }
    }

    fn float(&self) -> Result<f64, ConfigError> {
        self.value
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.type_error("a finite number"))
    }

    fn count(&self) -> Result<usize, ConfigError> {
        self.value.parse().map_err(|_| self.type_error("a non-negative integer"))
    }

    fn count_or_inf(&self) -> Result<usize, ConfigError> {
        if matches!(self.value, "inf" | "infinity" | "none") {
            return Ok(usize::MAX);
        }
        self.value
            .parse()
            .map_err(|_| self.type_error("a non-negative integer or `inf`"))
    }

    fn flag(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.type_error("true or false")),
        }
    }

    fn unknown(&self) -> ConfigError {
        ConfigError::UnknownKey {
            path: self.path.to_path_buf(),
            section: self.section.to_string(),
            key: self.key.to_string(),
        }
    }
}

#[derive(Default)]
struct CameraFields {
    vals: [Option<f64>; 7],
}

const CAMERA_KEYS: [&str; 7] = ["fx", "fy", "cx", "cy", "width", "height", "baseline"];

fn set_estimator(c: &Ctx, e: &mut EstimatorConfig) -> Result<(), ConfigError> {
    match c.key {
        "max_iterations" => e.max_iterations = c.count()?,
        "tolerance" => e.tolerance = c.float()?,
        "huber_scale" => e.huber_scale = c.float()?,
        "stride" => e.stride = c.count()?,
        "min_pixels" => e.min_pixels = c.count()?,
        _ => return Err(c.unknown()),
    }
    Ok(())
}

fn set_general(c: &Ctx, cfg: &mut RunConfig) -> Result<bool, ConfigError> {
    match c.key {
        "C_si" => cfg.slam.hyper.c_si = c.float()?,
        "C_r" => cfg.slam.hyper.c_r = c.float()?,
        "T_loop" => {
            let t = c.count_or_inf()?;
            cfg.slam.hyper.t_loop = t;
            cfg.reloc.loops.t_loop = t;
        }
        "N_th" => cfg.reloc.loops.n_th = c.count()?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_slam(c: &Ctx, cfg: &mut RunConfig) -> Result<(), ConfigError> {
    if set_general(c, cfg)? {
        return Ok(());
    }
    let s = &mut cfg.slam;
    match c.key {
        "sigma_t" => {
            let v = c.float()?;
            (s.sigmas.sigma_tx, s.sigmas.sigma_ty, s.sigmas.sigma_tz) = (v, v, v);
        }
        "sigma_rot" => {
            let v = c.float()?;
            (s.sigmas.sigma_alpha, s.sigmas.sigma_beta, s.sigmas.sigma_gamma) = (v, v, v);
        }
        "sigma_tx" => s.sigmas.sigma_tx = c.float()?,
        "sigma_ty" => s.sigmas.sigma_ty = c.float()?,
        "sigma_tz" => s.sigmas.sigma_tz = c.float()?,
        "sigma_alpha" => s.sigmas.sigma_alpha = c.float()?,
        "sigma_beta" => s.sigmas.sigma_beta = c.float()?,
        "sigma_gamma" => s.sigmas.sigma_gamma = c.float()?,
        "information" => {
            s.information = match c.value {
                "global" => InformationSource::Global,
                "per_edge" => InformationSource::PerEdge,
                _ => return Err(c.type_error("global or per_edge")),
            }
        }
        "inverse" => {
            s.inverse = match c.value {
                "pinv" => InverseMode::PseudoInverse,
                "ridge" => InverseMode::Ridge,
                _ => return Err(c.type_error("pinv or ridge")),
            }
        }
        "max_iterations" => s.optimizer.max_iterations = c.count()?,
        "tolerance" => s.optimizer.tolerance = c.float()?,
        _ => return Err(c.unknown()),
    }
    Ok(())
}

fn set_key(c: &Ctx, cfg: &mut RunConfig, cam: &mut CameraFields) -> Result<(), ConfigError> {
    match c.section {
        "" => {
            if !set_general(c, cfg)? {
                return Err(c.unknown());
            }
        }
        "slam" => set_slam(c, cfg)?,
        "camera" => {
            let k = CAMERA_KEYS.iter().position(|k| *k == c.key).ok_or_else(|| c.unknown())?;
            cam.vals[k] = Some(if k == 4 || k == 5 { c.count()? as f64 } else { c.float()? });
        }
        "vo" => set_estimator(c, &mut cfg.vo)?,
        "loop_vo" => set_estimator(c, &mut cfg.loop_vo)?,
        "features" => match c.key {
            "threshold" => cfg.features.threshold = c.float()?,
            "max_features" => cfg.features.max_features = c.count()?,
            "max_flat_fraction" => cfg.features.max_flat_fraction = c.float()?,
            _ => return Err(c.unknown()),
        },
        "reloc" => match c.key {
            "N_th" => cfg.reloc.loops.n_th = c.count()?,
            "ratio" => cfg.reloc.loops.ratio = c.float()?,
            "top_k" => cfg.reloc.loops.top_k = c.count()?,
            "vocabulary_size" => cfg.reloc.vocabulary_size = c.count()?,
            "vocabulary_stride" => cfg.reloc.vocabulary_stride = c.count()?,
            _ => return Err(c.unknown()),
        },
        "sim" => match c.key {
            "preset" => {
                cfg.sim.preset = match c.value {
                    "rectangle" => SimPreset::Rectangle,
                    "straight" => SimPreset::Straight,
                    _ => return Err(c.type_error("rectangle or straight")),
                }
            }
            "laps" => cfg.sim.laps = c.count()?,
            "poses_per_segment" => cfg.sim.poses_per_segment = Some(c.count()?),
            "sigma_t" => cfg.sim.sigma_t = c.float()?,
            "sigma_rot" => cfg.sim.sigma_rot = c.float()?,
            "flows" => cfg.sim.write_flows = c.flag()?,
            _ => return Err(c.unknown()),
        },
        other => {
            return Err(ConfigError::UnknownSection {
                path: c.path.to_path_buf(),
                section: other.to_string(),
            })
        }
    }
    Ok(())
}

impl RunConfig {
    fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            message,
        };
        self.slam.hyper.validate().map_err(|e| invalid(e.to_string()))?;
        self.slam.sigmas.validate().map_err(|e| invalid(e.to_string()))?;
        self.vo.validate().map_err(|e| invalid(format!("[vo] {e}")))?;
        self.loop_vo.validate().map_err(|e| invalid(format!("[loop_vo] {e}")))?;
        if !(self.reloc.loops.ratio > 0.0 && self.reloc.loops.ratio <= 1.0) {
            return Err(invalid("[reloc] ratio must be in (0, 1]".into()));
        }
        if self.reloc.vocabulary_size == 0 || self.reloc.vocabulary_stride == 0 || self.reloc.loops.top_k == 0 {
            return Err(invalid("[reloc] vocabulary_size, vocabulary_stride and top_k must be positive".into()));
        }
        if self.features.max_features == 0 {
            return Err(invalid("[features] max_features must be positive".into()));
        }
        if self.sim.laps == 0 || self.sim.poses_per_segment == Some(0) {
            return Err(invalid("[sim] laps and poses_per_segment must be positive".into()));
        }
        if !(self.sim.sigma_t >= 0.0 && self.sim.sigma_rot >= 0.0) {
            return Err(invalid("[sim] sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Parses configuration text; `path` only labels errors.
pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax {
        path: path.to_path_buf(),
        line: e.line,
        col: e.col,
        message: e.msg.to_string(),
    })?;
    let mut cfg = RunConfig::default();
    let mut cam = CameraFields::default();
    let mut any_camera = false;
    for (section, props) in ini.iter() {
        let section = section.unwrap_or("");
        any_camera |= section == "camera";
        for (key, value) in props.iter() {
            let ctx = Ctx {
                path,
                section,
                key,
                value: value.trim(),
            };
            set_key(&ctx, &mut cfg, &mut cam)?;
        }
    }
    if any_camera {
        let v = cam.vals;
        let missing: Vec<&str> = (0..6).filter(|&k| v[k].is_none()).map(|k| CAMERA_KEYS[k]).collect();
        if !missing.is_empty() {
            return Err(ConfigError::Invalid {
                path: path.to_path_buf(),
                message: format!("[camera] missing {}", missing.join(", ")),
            });
        }
        let g = |k: usize| v[k].expect("checked above");
        let mut intr = Intrinsics::new(g(0), g(1), g(2), g(3), g(4) as usize, g(5) as usize).map_err(|e| {
            ConfigError::Invalid {
                path: path.to_path_buf(),
                message: format!("[camera] {e}"),
            }
        })?;
        if let Some(b) = v[6] {
            intr = intr.with_baseline(b).map_err(|e| ConfigError::Invalid {
                path: path.to_path_buf(),
                message: format!("[camera] {e}"),
            })?;
        }
        cfg.camera = Some(intr);
    }
    cfg.validate(path)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

/// `[camera]` section text for `intr`.
pub fn camera_section(intr: &Intrinsics) -> String {
    let mut s = format!(
        "[camera]\nfx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n",
        intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height
    );
    if let Some(b) = intr.baseline {
        s.push_str(&format!("baseline = {b}\n"));
    }
    s
}
