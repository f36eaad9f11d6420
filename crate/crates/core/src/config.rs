//! Pipeline configuration.
//!
//! Stored as UTF-8 `key = value` lines. Blank lines and `#` comments are
//! ignored; unknown keys are rejected. [`Config::render`] produces a file that
//! parses back to the same values.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // patches
    pub small_patch: usize,
    pub large_patch: usize,
    pub feature_dim_small: usize,
    pub feature_dim_large: usize,

    // blur ladder
    pub sigma_min: f64,
    pub sigma_inter: f64,
    pub labels: usize,

    // edges
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    /// Optional middle threshold that splits hysteresis output into weak/strong.
    pub canny_mid: Option<f64>,
    pub edge_stride: usize,

    // probability-joint bilateral filter
    pub bilateral_sigma_s: f64,
    pub bilateral_sigma_r: f64,
    pub bilateral_sigma_c: f64,
    pub bilateral_radius: usize,

    // rolling guidance
    pub rgf_sigma_s: f64,
    pub rgf_sigma_r: f64,
    pub rgf_iterations: usize,

    // propagation
    pub matting_epsilon: f64,
    pub gamma: f64,
    pub cg_tolerance: f64,

    // homogeneous-region seeds
    pub seed_homogeneous: bool,
    pub seed_min_distance: f64,
    pub seed_grid: usize,
    pub seed_jitter: usize,

    // segmentation
    pub alpha: f64,

    // network and training
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub max_sharp_patches: usize,
    pub patches_per_image: usize,
    pub holdout_fraction: f64,

    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            small_patch: 15,
            large_patch: 27,
            feature_dim_small: 13,
            feature_dim_large: 25,
            sigma_min: 0.5,
            sigma_inter: 0.15,
            labels: 11,
            canny_sigma: 1.0,
            canny_low: 0.08,
            canny_high: 0.2,
            canny_mid: None,
            edge_stride: 3,
            bilateral_sigma_s: 100.0,
            bilateral_sigma_r: 100.0,
            bilateral_sigma_c: 1.0,
            bilateral_radius: 15,
            rgf_sigma_s: 3.0,
            rgf_sigma_r: 0.1,
            rgf_iterations: 4,
            matting_epsilon: 1e-5,
            gamma: 0.005,
            cg_tolerance: 1e-6,
            seed_homogeneous: false,
            seed_min_distance: 20.0,
            seed_grid: 16,
            seed_jitter: 4,
            alpha: 0.3,
            conv1_filters: 10,
            conv2_filters: 20,
            learning_rate: 0.01,
            batch_size: 64,
            dropout: 0.5,
            epochs_stage1: 12,
            epochs_stage2: 6,
            max_sharp_patches: 5000,
            patches_per_image: 250,
            holdout_fraction: 0.2,
            seed: 2017,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "cannot parse `{value}` as a boolean for key `{key}`"
        ))),
    }
}

macro_rules! config_keys {
    ($mac:ident) => {
        $mac! {
            small_patch: usize,
            large_patch: usize,
            feature_dim_small: usize,
            feature_dim_large: usize,
            sigma_min: f64,
            sigma_inter: f64,
            labels: usize,
            canny_sigma: f64,
            canny_low: f64,
            canny_high: f64,
            canny_mid: opt,
            edge_stride: usize,
            bilateral_sigma_s: f64,
            bilateral_sigma_r: f64,
            bilateral_sigma_c: f64,
            bilateral_radius: usize,
            rgf_sigma_s: f64,
            rgf_sigma_r: f64,
            rgf_iterations: usize,
            matting_epsilon: f64,
            gamma: f64,
            cg_tolerance: f64,
            seed_homogeneous: bool,
            seed_min_distance: f64,
            seed_grid: usize,
            seed_jitter: usize,
            alpha: f64,
            conv1_filters: usize,
            conv2_filters: usize,
            learning_rate: f64,
            batch_size: usize,
            dropout: f64,
            epochs_stage1: usize,
            epochs_stage2: usize,
            max_sharp_patches: usize,
            patches_per_image: usize,
            holdout_fraction: f64,
            seed: u64,
        }
    };
}

macro_rules! impl_set {
    ($($name:ident : $kind:ident),* $(,)?) => {
        /// Sets one key from its textual value.
        pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
            let value = value.trim();
            match key.trim() {
                $(stringify!($name) => { impl_set!(@assign self, $name, $kind, value); })*
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
            Ok(())
        }

        /// All keys with their current values, in declaration order.
        pub fn entries(&self) -> Vec<(&'static str, String)> {
            vec![$((stringify!($name), impl_set!(@show self, $name, $kind))),*]
        }

        pub fn keys() -> &'static [&'static str] {
            &[$(stringify!($name)),*]
        }
    };
    (@assign $self:ident, $name:ident, bool, $v:ident) => {
        $self.$name = parse_bool(stringify!($name), $v)?
    };
    (@assign $self:ident, $name:ident, opt, $v:ident) => {
        $self.$name = if $v == "none" { None } else { Some(parse(stringify!($name), $v)?) }
    };
    (@assign $self:ident, $name:ident, $t:ty, $v:ident) => {
        $self.$name = parse::<$t>(stringify!($name), $v)?
    };
    (@show $self:ident, $name:ident, opt) => {
        match $self.$name { Some(v) => format!("{v:?}"), None => "none".to_string() }
    };
    (@show $self:ident, $name:ident, f64) => {
        format!("{:?}", $self.$name)
    };
    (@show $self:ident, $name:ident, $t:ident) => {
        $self.$name.to_string()
    };
}

impl Config {
    config_keys!(impl_set);

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines onto `self`.
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Applies a `key=value` override such as the CLI's `--set`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(k, v)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.small_patch % 2 == 0 || self.large_patch % 2 == 0 {
            return fail("patch sizes must be odd");
        }
        if self.small_patch >= self.large_patch {
            return fail("small_patch must be smaller than large_patch");
        }
        if self.small_patch < 3 {
            return fail("small_patch must be at least 3");
        }
        if self.feature_dim_small == 0 || self.feature_dim_large == 0 {
            return fail("feature dimensions must be positive");
        }
        if self.feature_dim_small > self.small_patch || self.feature_dim_large > self.large_patch
        {
            return fail("feature dimension exceeds the patch side (singular value count)");
        }
        if self.labels < 2 {
            return fail("labels must be at least 2");
        }
        let positive = [
            ("sigma_min", self.sigma_min),
            ("sigma_inter", self.sigma_inter),
            ("canny_sigma", self.canny_sigma),
            ("canny_low", self.canny_low),
            ("bilateral_sigma_s", self.bilateral_sigma_s),
            ("bilateral_sigma_r", self.bilateral_sigma_r),
            ("bilateral_sigma_c", self.bilateral_sigma_c),
            ("rgf_sigma_s", self.rgf_sigma_s),
            ("rgf_sigma_r", self.rgf_sigma_r),
            ("matting_epsilon", self.matting_epsilon),
            ("gamma", self.gamma),
            ("cg_tolerance", self.cg_tolerance),
            ("learning_rate", self.learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.canny_low >= self.canny_high {
            return fail("canny_low must be below canny_high");
        }
        if let Some(mid) = self.canny_mid {
            if !(mid >= self.canny_low && mid <= self.canny_high) {
                return fail("canny_mid must lie between canny_low and canny_high");
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return fail("holdout_fraction must be in [0, 1)");
        }
        if self.edge_stride == 0 || self.seed_grid == 0 || self.batch_size == 0 {
            return fail("edge_stride, seed_grid and batch_size must be positive");
        }
        if self.rgf_iterations == 0 {
            return fail("rgf_iterations must be at least 1");
        }
        if self.bilateral_radius == 0 {
            return fail("bilateral_radius must be positive");
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 {
            return fail("filter counts must be positive");
        }
        Ok(())
    }

    /// Feature dimension per hand-crafted feature for the given patch scale.
    pub fn feature_dim(&self, scale: crate::edges::Scale) -> usize {
        match scale {
            crate::edges::Scale::Small => self.feature_dim_small,
            crate::edges::Scale::Large => self.feature_dim_large,
        }
    }

    pub fn patch_size(&self, scale: crate::edges::Scale) -> usize {
        match scale {
            crate::edges::Scale::Small => self.small_patch,
            crate::edges::Scale::Large => self.large_patch,
        }
    }

    /// Largest value on the blur ladder.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_min + (self.labels - 1) as f64 * self.sigma_inter
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = Config::default();
        cfg.validate().unwrap();
        assert!((cfg.sigma_max() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = Config::default();
        cfg.gamma = 0.0123;
        cfg.canny_mid = Some(0.15);
        cfg.seed_homogeneous = true;
        let back = Config::parse_str(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Config::parse_str("gama = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn comments_and_blanks() {
        let cfg = Config::parse_str("# header\n\nalpha = 0.5 # trailing\nseed=9\n").unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn invariants_enforced() {
        for bad in [
            "small_patch = 14",
            "small_patch = 29",
            "labels = 1",
            "gamma = 0",
            "matting_epsilon = -1",
            "alpha = 1.5",
            "canny_low = 0.3",
            "not a pair",
        ] {
            assert!(Config::parse_str(bad).is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn override_precedence() {
        let mut cfg = Config::parse_str("alpha = 0.4").unwrap();
        cfg.apply_override("alpha=0.2").unwrap();
        assert_eq!(cfg.alpha, 0.2);
        assert!(cfg.apply_override("alpha").is_err());
    }
}
