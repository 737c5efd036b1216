use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AdamWConfig;
use crate::synth::SynthConfig;
use crate::train::{EvalConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LabelRatio,
    Desync,
    Noise,
    Stats,
    Ablation,
    Saliency,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::LabelRatio,
        Family::Desync,
        Family::Noise,
        Family::Stats,
        Family::Ablation,
        Family::Saliency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::LabelRatio => "label_ratio",
            Family::Desync => "desync",
            Family::Noise => "noise",
            Family::Stats => "stats",
            Family::Ablation => "ablation",
            Family::Saliency => "saliency",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment family `{s}`")))
    }
}

/// Grid-mean pixel traces used as a parameter-free rPPG measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    /// Cells per side of the grid over the face crop.
    pub grid: usize,
    /// Windows drawn per cell.
    pub windows: usize,
    pub delta_t_s: f64,
    pub crop_size: usize,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            windows: 4,
            delta_t_s: 5.0,
            crop_size: 64,
            seed: 0,
        }
    }
}

/// One-factor-at-a-time ablation around the base training config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub spatial_sizes: Vec<usize>,
    pub clip_lens_s: Vec<f64>,
    /// Sampler window as a fraction of the clip length.
    pub window_fracs: Vec<f64>,
    pub observation_toggles: bool,
    pub gt_toggles: bool,
    /// Label ratio of the GT-loss cells.
    pub gt_label_ratio: f64,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            spatial_sizes: vec![1, 2, 4],
            clip_lens_s: vec![5.0, 10.0],
            window_fracs: vec![0.25, 0.5],
            observation_toggles: true,
            gt_toggles: true,
            gt_label_ratio: 1.0,
        }
    }
}

impl AblationGrid {
    pub fn full() -> Self {
        Self {
            spatial_sizes: vec![1, 2, 4, 8],
            clip_lens_s: vec![5.0, 10.0, 30.0],
            window_fracs: vec![0.25, 0.5, 0.75],
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    /// Optional; must match the family requested on the command line.
    pub family: Option<Family>,
    /// The last `n_test` videos form the test split.
    pub corpus: SynthConfig,
    pub n_test: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Training seeds; every sweep point runs once per seed.
    pub seeds: Vec<u64>,
    pub label_ratios: Vec<f64>,
    pub d_max_s: Vec<f64>,
    pub stats: StatsConfig,
    pub ablation: AblationGrid,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            family: None,
            corpus: SynthConfig {
                n_videos: 12,
                ..SynthConfig::default()
            },
            n_test: 4,
            train: TrainConfig {
                optimizer: AdamWConfig {
                    lr: 1e-3,
                    ..AdamWConfig::default()
                },
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            seeds: vec![0],
            label_ratios: vec![0.0, 0.5, 1.0],
            d_max_s: vec![0.0, 0.5, 1.0],
            stats: StatsConfig::default(),
            ablation: AblationGrid::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Switches every sweep to the full-size grids.
    pub fn full(mut self) -> Self {
        self.label_ratios = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        self.d_max_s = vec![0.0, 0.25, 0.5, 1.0, 2.0];
        self.ablation = AblationGrid {
            gt_label_ratio: self.ablation.gt_label_ratio,
            ..AblationGrid::full()
        };
        self
    }

    pub fn n_train(&self) -> usize {
        self.corpus.n_videos.saturating_sub(self.n_test)
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        if let Some(f) = self.family {
            if f != family {
                return Err(Error::InvalidConfig(format!("spec is for `{f}`, requested `{family}`")));
            }
        }
        self.corpus.validate()?;
        self.train.model.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if family != Family::Stats {
            if self.n_train() < 2 || self.n_test == 0 {
                return Err(Error::InvalidConfig(format!(
                    "need >= 2 training and >= 1 test videos, have {} and {}",
                    self.n_train(),
                    self.n_test
                )));
            }
            if self.corpus.duration_s + 1e-9 < self.eval.window_s {
                return Err(Error::InvalidConfig(format!(
                    "videos of {} s hold no {} s evaluation window",
                    self.corpus.duration_s, self.eval.window_s
                )));
            }
        }
        let ratio_ok = |r: &f64| (0.0..=1.0).contains(r);
        if !self.label_ratios.iter().all(ratio_ok) || !ratio_ok(&self.ablation.gt_label_ratio) {
            return Err(Error::InvalidConfig("label ratios must lie in [0, 1]".into()));
        }
        if !self.d_max_s.iter().all(|d| *d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidConfig("d_max values must be finite and >= 0".into()));
        }
        let needs_sweep = match family {
            Family::LabelRatio => self.label_ratios.is_empty(),
            Family::Desync => self.d_max_s.is_empty(),
            _ => false,
        };
        if needs_sweep {
            return Err(Error::InvalidConfig(format!(
                "`{family}` needs at least one sweep value"
            )));
        }
        if self.stats.grid == 0 || self.stats.windows == 0 {
            return Err(Error::InvalidConfig(
                "stats grid and window count must be positive".into(),
            ));
        }
        if !self.ablation.window_fracs.iter().all(|f| *f > 0.0 && *f < 1.0) {
            return Err(Error::InvalidConfig(
                "ablation window fractions must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_and_defaults() {
        let spec = ExperimentSpec::from_toml_str(
            r#"
            family = "desync"
            n_test = 2
            d_max_s = [0.0, 2.0]
            [corpus]
            n_videos = 6
            [train]
            epochs = 3
            "#,
        )
        .unwrap();
        assert_eq!(spec.family, Some(Family::Desync));
        assert_eq!(spec.n_train(), 4);
        assert_eq!(spec.train.epochs, 3);
        assert_eq!(spec.train.clip_len_s, 10.0);
        assert_eq!(spec.corpus.fps, 30.0);
        spec.validate(Family::Desync).unwrap();
        assert!(spec.validate(Family::Noise).is_err());
    }

    #[test]
    fn range_checks() {
        let mut spec = ExperimentSpec::default();
        spec.label_ratios = vec![0.5, 1.2];
        assert!(matches!(
            spec.validate(Family::LabelRatio),
            Err(Error::InvalidConfig(_))
        ));
        let mut spec = ExperimentSpec::default();
        spec.d_max_s = vec![-0.1];
        assert!(spec.validate(Family::Desync).is_err());
        assert!("bogus".parse::<Family>().is_err());
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }

    #[test]
    fn full_grids() {
        let spec = ExperimentSpec::default().full();
        assert_eq!(spec.label_ratios.len(), 6);
        assert_eq!(spec.d_max_s, vec![0.0, 0.25, 0.5, 1.0, 2.0]);
        assert_eq!(spec.ablation.spatial_sizes, vec![1, 2, 4, 8]);
    }
}
