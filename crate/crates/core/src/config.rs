//! Run configuration: loss weights, learning rates, schedule constants and
//! thresholds, all overridable from a `key = value` text file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::optim::AttributeLrs;
use crate::render::RenderSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {value}")]
    BadValue { line: usize, key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    // loss weights
    pub lambda_ssim: f64,
    pub lambda_depth: f64,
    pub lambda_flow: f64,
    // tracking / fitting schedules
    pub fit_iterations: usize,
    pub track_iterations: usize,
    pub track_early_stop: f64,
    // segmentation
    pub retention_threshold: f64,
    pub frustum_margin: f64,
    // local optimization
    pub local_iterations_per_frame: usize,
    pub densify_start: usize,
    pub densify_interval: usize,
    pub densify_stop_fraction: f64,
    pub densify_grad_threshold: f64,
    pub opacity_prune_threshold: f64,
    pub scale_split_fraction: f64,
    pub max_gaussians: usize,
    pub local_extent_trigger: f64,
    // initialization
    pub anchor_stride: usize,
    pub init_opacity: f64,
    pub init_scale_mult: f64,
    // learning rates
    pub lr_position: f64,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub lr_pose_rotation: f64,
    pub lr_pose_translation: f64,
    // rasterizer
    pub tile_size: usize,
    pub cov_dilation: f64,
    pub transmittance_stop: f64,
    pub contrib_cutoff: f64,
    pub background: [f64; 3],
    // evaluation protocol
    pub eval_holdout: bool,
    pub holdout_every: usize,
    pub holdout_offset: usize,
    pub eval_pose_iterations: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            lambda_ssim: 0.2,
            lambda_depth: 0.5,
            lambda_flow: 0.1,
            fit_iterations: 500,
            track_iterations: 250,
            track_early_stop: 1e-4,
            retention_threshold: 0.5,
            frustum_margin: 0.0,
            local_iterations_per_frame: 300,
            densify_start: 500,
            densify_interval: 100,
            densify_stop_fraction: 0.7,
            densify_grad_threshold: 2e-4,
            opacity_prune_threshold: 0.005,
            scale_split_fraction: 0.01,
            max_gaussians: 500_000,
            local_extent_trigger: 0.25,
            anchor_stride: 2,
            init_opacity: 0.5,
            init_scale_mult: 1.0,
            lr_position: 1.6e-4,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            lr_pose_rotation: 2e-3,
            lr_pose_translation: 2e-3,
            tile_size: 16,
            cov_dilation: 0.3,
            transmittance_stop: 1e-4,
            contrib_cutoff: 1e-3,
            background: [0.0; 3],
            eval_holdout: true,
            holdout_every: 8,
            holdout_offset: 7,
            eval_pose_iterations: 200,
        }
    }
}

impl Config {
    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            tile_size: self.tile_size,
            dilation: self.cov_dilation,
            transmittance_stop: self.transmittance_stop,
            contrib_cutoff: self.contrib_cutoff,
            background: self.background,
        }
    }

    pub fn attribute_lrs(&self) -> AttributeLrs {
        AttributeLrs {
            position: self.lr_position,
            rotation: self.lr_rotation,
            log_scale: self.lr_scale,
            opacity: self.lr_opacity,
            color: self.lr_color,
        }
    }

    /// True when frame `i` is reserved for evaluation.
    pub fn is_holdout(&self, frame: usize) -> bool {
        self.eval_holdout && self.holdout_every > 0 && frame % self.holdout_every == self.holdout_offset
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.retention_threshold) || self.retention_threshold <= 0.0 {
            return Err(ConfigError::Invalid("retention_threshold must be in (0,1)".into()));
        }
        if self.holdout_every > 0 && self.holdout_offset == 0 {
            return Err(ConfigError::Invalid(
                "holdout_offset must be nonzero: frame 0 anchors the trajectory".into(),
            ));
        }
        if self.holdout_every > 0 && self.holdout_offset >= self.holdout_every {
            return Err(ConfigError::Invalid("holdout_offset must be < holdout_every".into()));
        }
        if self.anchor_stride == 0 {
            return Err(ConfigError::Invalid("anchor_stride must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.init_opacity) || self.init_opacity == 0.0 || self.init_opacity == 1.0 {
            return Err(ConfigError::Invalid("init_opacity must be in (0,1)".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_overrides(&text)
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_str_overrides(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config::default();
        cfg.apply_overrides(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            };
            let key = key.trim();
            let value = value.trim();
            self.set_key(key, value)
                .map_err(|_| ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    value: value.to_string(),
                })
                .and_then(|known| {
                    if known {
                        Ok(())
                    } else {
                        Err(ConfigError::UnknownKey { line, key: key.to_string() })
                    }
                })?;
        }
        Ok(())
    }

    fn set_key(&mut self, key: &str, value: &str) -> Result<bool, ()> {
        macro_rules! parse {
            ($field:ident, $ty:ty) => {{
                self.$field = value.parse::<$ty>().map_err(|_| ())?;
                return Ok(true);
            }};
        }
        match key {
            "seed" => parse!(seed, u64),
            "lambda_ssim" => parse!(lambda_ssim, f64),
            "lambda_depth" => parse!(lambda_depth, f64),
            "lambda_flow" => parse!(lambda_flow, f64),
            "fit_iterations" => parse!(fit_iterations, usize),
            "track_iterations" => parse!(track_iterations, usize),
            "track_early_stop" => parse!(track_early_stop, f64),
            "retention_threshold" => parse!(retention_threshold, f64),
            "frustum_margin" => parse!(frustum_margin, f64),
            "local_iterations_per_frame" => parse!(local_iterations_per_frame, usize),
            "densify_start" => parse!(densify_start, usize),
            "densify_interval" => parse!(densify_interval, usize),
            "densify_stop_fraction" => parse!(densify_stop_fraction, f64),
            "densify_grad_threshold" => parse!(densify_grad_threshold, f64),
            "opacity_prune_threshold" => parse!(opacity_prune_threshold, f64),
            "scale_split_fraction" => parse!(scale_split_fraction, f64),
            "max_gaussians" => parse!(max_gaussians, usize),
            "local_extent_trigger" => parse!(local_extent_trigger, f64),
            "anchor_stride" => parse!(anchor_stride, usize),
            "init_opacity" => parse!(init_opacity, f64),
            "init_scale_mult" => parse!(init_scale_mult, f64),
            "lr_position" => parse!(lr_position, f64),
            "lr_rotation" => parse!(lr_rotation, f64),
            "lr_scale" => parse!(lr_scale, f64),
            "lr_opacity" => parse!(lr_opacity, f64),
            "lr_color" => parse!(lr_color, f64),
            "lr_pose_rotation" => parse!(lr_pose_rotation, f64),
            "lr_pose_translation" => parse!(lr_pose_translation, f64),
            "tile_size" => parse!(tile_size, usize),
            "cov_dilation" => parse!(cov_dilation, f64),
            "transmittance_stop" => parse!(transmittance_stop, f64),
            "contrib_cutoff" => parse!(contrib_cutoff, f64),
            "background" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| ())?;
                if parts.len() != 3 {
                    return Err(());
                }
                self.background = [parts[0], parts[1], parts[2]];
                Ok(true)
            }
            "eval_holdout" => parse!(eval_holdout, bool),
            "holdout_every" => parse!(holdout_every, usize),
            "holdout_offset" => parse!(holdout_offset, usize),
            "eval_pose_iterations" => parse!(eval_pose_iterations, usize),
            _ => Ok(false),
        }
    }

    /// Serializes every key; `from_str_overrides(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut entries: BTreeMap<&'static str, String> = BTreeMap::new();
        entries.insert("seed", self.seed.to_string());
        entries.insert("lambda_ssim", fmt_f64(self.lambda_ssim));
        entries.insert("lambda_depth", fmt_f64(self.lambda_depth));
        entries.insert("lambda_flow", fmt_f64(self.lambda_flow));
        entries.insert("fit_iterations", self.fit_iterations.to_string());
        entries.insert("track_iterations", self.track_iterations.to_string());
        entries.insert("track_early_stop", fmt_f64(self.track_early_stop));
        entries.insert("retention_threshold", fmt_f64(self.retention_threshold));
        entries.insert("frustum_margin", fmt_f64(self.frustum_margin));
        entries.insert(
            "local_iterations_per_frame",
            self.local_iterations_per_frame.to_string(),
        );
        entries.insert("densify_start", self.densify_start.to_string());
        entries.insert("densify_interval", self.densify_interval.to_string());
        entries.insert("densify_stop_fraction", fmt_f64(self.densify_stop_fraction));
        entries.insert("densify_grad_threshold", fmt_f64(self.densify_grad_threshold));
        entries.insert("opacity_prune_threshold", fmt_f64(self.opacity_prune_threshold));
        entries.insert("scale_split_fraction", fmt_f64(self.scale_split_fraction));
        entries.insert("max_gaussians", self.max_gaussians.to_string());
        entries.insert("local_extent_trigger", fmt_f64(self.local_extent_trigger));
        entries.insert("anchor_stride", self.anchor_stride.to_string());
        entries.insert("init_opacity", fmt_f64(self.init_opacity));
        entries.insert("init_scale_mult", fmt_f64(self.init_scale_mult));
        entries.insert("lr_position", fmt_f64(self.lr_position));
        entries.insert("lr_rotation", fmt_f64(self.lr_rotation));
        entries.insert("lr_scale", fmt_f64(self.lr_scale));
        entries.insert("lr_opacity", fmt_f64(self.lr_opacity));
        entries.insert("lr_color", fmt_f64(self.lr_color));
        entries.insert("lr_pose_rotation", fmt_f64(self.lr_pose_rotation));
        entries.insert("lr_pose_translation", fmt_f64(self.lr_pose_translation));
        entries.insert("tile_size", self.tile_size.to_string());
        entries.insert("cov_dilation", fmt_f64(self.cov_dilation));
        entries.insert("transmittance_stop", fmt_f64(self.transmittance_stop));
        entries.insert("contrib_cutoff", fmt_f64(self.contrib_cutoff));
        entries.insert(
            "background",
            format!(
                "{} {} {}",
                fmt_f64(self.background[0]),
                fmt_f64(self.background[1]),
                fmt_f64(self.background[2])
            ),
        );
        entries.insert("eval_holdout", self.eval_holdout.to_string());
        entries.insert("holdout_every", self.holdout_every.to_string());
        entries.insert("holdout_offset", self.holdout_offset.to_string());
        entries.insert("eval_pose_iterations", self.eval_pose_iterations.to_string());

        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that round-trips
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap(), v);
    s
}
