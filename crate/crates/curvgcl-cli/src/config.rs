//! Run configuration: a TOML file, optional command-line overrides, and the
//! validation that turns the merged result into something the library will
//! accept.
//!
//! The file and the flags describe the same fields. Precedence is simple:
//! start from built-in defaults, apply the config file if one is given, then
//! apply any flag that was set. The merged config is serialized back into the
//! output directory verbatim, so a finished run always carries the exact
//! configuration that produced it.

use std::path::PathBuf;

use clap::ValueEnum;
use curvgcl::curvature::CurvNetParams;
use curvgcl::distill::{CurvatureMode, DenominatorMode, DistillConfig, SimilarityMode};
use curvgcl::encoder::{EncoderConfig, DEFAULT_LEAKY_SLOPE};
use curvgcl::graph::SynthSpec;
use curvgcl::{Error, Result};
use serde::{Deserialize, Serialize};

/// Where the session curvature comes from, as spelled in configs and flags.
/// `fixed` additionally needs `fixed_kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum CurvatureModeCfg {
    /// Learned: the curvature network re-estimates κ every epoch.
    #[default]
    Curvnet,
    /// Pinned to the constant given by `fixed_kappa`.
    Fixed,
    /// Pinned to the combinatorial (Forman-style) estimate of each graph.
    FormanOracle,
}

/// Which cross-manifold similarity the losses use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SimilarityModeCfg {
    /// Trainable Lorentz projection between manifolds.
    #[default]
    Glp,
    /// Parameter-free tangent-space resize (ablation baseline).
    Tangent,
}

/// Which pairs the contrastive denominator sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DenominatorModeCfg {
    /// Negatives only: `|V|·(|V|−1)` pairs per loss term.
    #[default]
    NegativesOnly,
    /// Positive included: `|V|²` pairs, loss bounded below by zero.
    Standard,
}

/// One run, fully specified. Field names double as the TOML keys; unknown
/// keys are rejected by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Task-sequence manifest path. Mutually exclusive with `synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Inline synthetic tasks (`[[synth]]` tables). Mutually exclusive with
    /// `manifest`; this is the one field without a flag form.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synth: Vec<SynthSpec>,
    /// Encoder widths `[d_in, hidden…, d_out]`.
    pub layer_dims: Vec<usize>,
    /// Hidden width of the curvature network.
    #[serde(default = "default_curvnet_hidden")]
    pub curvnet_hidden: usize,
    /// Curvature range: estimates land in `[-kappa_scale, kappa_scale]`.
    #[serde(default = "default_kappa_scale")]
    pub kappa_scale: f64,
    /// Weight of the teacher–student (inter) loss term.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Contrastive temperature.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Adam learning rate.
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Hard epoch cap per session.
    #[serde(default = "default_epochs_max")]
    pub epochs_max: usize,
    /// Consecutive near-flat epochs required to stop early.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// One full sequence run per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub curvature_mode: CurvatureModeCfg,
    /// The pinned κ; required by (and only legal with) `curvature_mode = "fixed"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_kappa: Option<f64>,
    #[serde(default)]
    pub similarity_mode: SimilarityModeCfg,
    #[serde(default)]
    pub denominator_mode: DenominatorModeCfg,
    /// Where checkpoints, CSVs and the report land.
    pub out_dir: PathBuf,
}

fn default_curvnet_hidden() -> usize {
    16
}
fn default_kappa_scale() -> f64 {
    2.0
}
fn default_lambda() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    0.01
}
fn default_epochs_max() -> usize {
    500
}
fn default_patience() -> usize {
    20
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Flag-level overrides, all optional. `None` means "keep whatever the
/// config file (or the default) says".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub layer_dims: Option<Vec<usize>>,
    pub curvnet_hidden: Option<usize>,
    pub kappa_scale: Option<f64>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub lr: Option<f64>,
    pub epochs_max: Option<usize>,
    pub patience: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub curvature_mode: Option<CurvatureModeCfg>,
    pub fixed_kappa: Option<f64>,
    pub similarity_mode: Option<SimilarityModeCfg>,
    pub denominator_mode: Option<DenominatorModeCfg>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a TOML config, rejecting unknown keys by name.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid {
            detail: e.to_string(),
        })
    }

    /// Merges a parsed file (or defaults when there is none) with flag
    /// overrides. A file-less invocation must supply `layer_dims`, `out_dir`
    /// and a manifest through flags.
    pub fn resolve(file: Option<Self>, ov: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(c) => c,
            None => Self {
                manifest: None,
                synth: Vec::new(),
                layer_dims: Vec::new(),
                curvnet_hidden: default_curvnet_hidden(),
                kappa_scale: default_kappa_scale(),
                lambda: default_lambda(),
                tau: default_tau(),
                lr: default_lr(),
                epochs_max: default_epochs_max(),
                patience: default_patience(),
                seeds: default_seeds(),
                curvature_mode: CurvatureModeCfg::default(),
                fixed_kappa: None,
                similarity_mode: SimilarityModeCfg::default(),
                denominator_mode: DenominatorModeCfg::default(),
                out_dir: PathBuf::new(),
            },
        };
        if let Some(v) = &ov.manifest {
            cfg.manifest = Some(v.clone());
        }
        if let Some(v) = &ov.layer_dims {
            cfg.layer_dims = v.clone();
        }
        if let Some(v) = ov.curvnet_hidden {
            cfg.curvnet_hidden = v;
        }
        if let Some(v) = ov.kappa_scale {
            cfg.kappa_scale = v;
        }
        if let Some(v) = ov.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = ov.tau {
            cfg.tau = v;
        }
        if let Some(v) = ov.lr {
            cfg.lr = v;
        }
        if let Some(v) = ov.epochs_max {
            cfg.epochs_max = v;
        }
        if let Some(v) = ov.patience {
            cfg.patience = v;
        }
        if let Some(v) = &ov.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = ov.curvature_mode {
            cfg.curvature_mode = v;
        }
        if let Some(v) = ov.fixed_kappa {
            cfg.fixed_kappa = Some(v);
        }
        if let Some(v) = ov.similarity_mode {
            cfg.similarity_mode = v;
        }
        if let Some(v) = ov.denominator_mode {
            cfg.denominator_mode = v;
        }
        if let Some(v) = &ov.out_dir {
            cfg.out_dir = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full structural validation; everything here exits with status 2 when
    /// it fails, before any training starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::ConfigInvalid { detail });
        match (&self.manifest, self.synth.is_empty()) {
            (None, true) => {
                return bad("no tasks: set 'manifest' or add [[synth]] tables".into());
            }
            (Some(_), false) => {
                return bad("'manifest' and [[synth]] are mutually exclusive".into());
            }
            _ => {}
        }
        if self.out_dir.as_os_str().is_empty() {
            return bad("out_dir must be set".into());
        }
        // Encoder and curvature-network shapes reuse the library validators so
        // the CLI can never panic inside StudentState::init.
        EncoderConfig::new(self.layer_dims.clone(), DEFAULT_LEAKY_SLOPE)?;
        CurvNetParams::init(self.curvnet_hidden, self.kappa_scale, 0)?;
        if self.seeds.is_empty() {
            return bad("seeds must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct (duplicates would overwrite each other's outputs)".into());
        }
        match (self.curvature_mode, self.fixed_kappa) {
            (CurvatureModeCfg::Fixed, None) => {
                return bad("curvature_mode = \"fixed\" needs fixed_kappa".into());
            }
            (CurvatureModeCfg::Curvnet | CurvatureModeCfg::FormanOracle, Some(_)) => {
                return bad("fixed_kappa is only legal with curvature_mode = \"fixed\"".into());
            }
            _ => {}
        }
        // Per-session hyperparameters share the library's own window checks.
        self.to_distill(self.seeds[0])?.validate()
    }

    /// The per-seed training configuration this run config describes.
    pub fn to_distill(&self, seed: u64) -> Result<DistillConfig> {
        let curvature_mode = match self.curvature_mode {
            CurvatureModeCfg::Curvnet => CurvatureMode::Curvnet,
            CurvatureModeCfg::FormanOracle => CurvatureMode::FormanOracle,
            CurvatureModeCfg::Fixed => {
                let k = self.fixed_kappa.ok_or_else(|| Error::ConfigInvalid {
                    detail: "curvature_mode = \"fixed\" needs fixed_kappa".into(),
                })?;
                CurvatureMode::Fixed(k)
            }
        };
        Ok(DistillConfig {
            lambda: self.lambda,
            tau: self.tau,
            lr: self.lr,
            epochs_max: self.epochs_max,
            patience: self.patience,
            seed,
            denominator_mode: match self.denominator_mode {
                DenominatorModeCfg::NegativesOnly => DenominatorMode::NegativesOnly,
                DenominatorModeCfg::Standard => DenominatorMode::Standard,
            },
            curvature_mode,
            similarity_mode: match self.similarity_mode {
                SimilarityModeCfg::Glp => SimilarityMode::Glp,
                SimilarityModeCfg::Tangent => SimilarityMode::Tangent,
            },
        })
    }

    /// The TOML text echoed into the output directory.
    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }
}

/// Turns the flag-level mode pair into the library's curvature mode,
/// enforcing that `fixed_kappa` appears exactly when the mode is `fixed`.
pub fn resolve_curvature_mode(
    mode: CurvatureModeCfg,
    fixed_kappa: Option<f64>,
) -> Result<CurvatureMode> {
    match (mode, fixed_kappa) {
        (CurvatureModeCfg::Curvnet, None) => Ok(CurvatureMode::Curvnet),
        (CurvatureModeCfg::FormanOracle, None) => Ok(CurvatureMode::FormanOracle),
        (CurvatureModeCfg::Fixed, Some(k)) => Ok(CurvatureMode::Fixed(k)),
        (CurvatureModeCfg::Fixed, None) => Err(Error::ConfigInvalid {
            detail: "curvature mode 'fixed' needs --fixed-kappa".into(),
        }),
        (_, Some(_)) => Err(Error::ConfigInvalid {
            detail: "--fixed-kappa is only legal with curvature mode 'fixed'".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_toml() -> &'static str {
        r#"
            layer_dims = [4, 8, 8]
            out_dir = "out"

            [[synth]]
            generator = "balanced_tree"
            branching = 2
            depth = 3
            feature_dim = 4
            seed = 1
        "#
    }

    // ===== parsing and merging =====

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg = RunConfig::from_toml(minimal_toml()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.epochs_max, 500);
        assert_eq!(cfg.curvature_mode, CurvatureModeCfg::Curvnet);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = RunConfig::from_toml("layer_dims = [4, 8]\nout_dir = \"o\"\nlearning_rate = 0.1\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("learning_rate"),
            "error must name the unknown key, got: {msg}"
        );
    }

    #[test]
    fn overrides_replace_file_values() {
        let file = RunConfig::from_toml(minimal_toml()).unwrap();
        let ov = Overrides {
            lr: Some(0.005),
            seeds: Some(vec![3, 4]),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(file), &ov).unwrap();
        assert_eq!(cfg.lr, 0.005);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.tau, 1.0, "untouched fields keep file/default values");
    }

    // ===== validation =====

    #[test]
    fn task_source_must_be_exactly_one() {
        let mut cfg = RunConfig::from_toml(minimal_toml()).unwrap();
        cfg.manifest = Some(PathBuf::from("m.toml"));
        assert!(cfg.validate().is_err(), "manifest plus synth must be rejected");
        cfg.synth.clear();
        cfg.manifest = None;
        assert!(cfg.validate().is_err(), "no task source must be rejected");
    }

    #[test]
    fn fixed_mode_and_fixed_kappa_must_pair_up() {
        let mut cfg = RunConfig::from_toml(minimal_toml()).unwrap();
        cfg.curvature_mode = CurvatureModeCfg::Fixed;
        assert!(cfg.validate().is_err(), "fixed mode without a value");
        cfg.fixed_kappa = Some(-1.0);
        cfg.validate().unwrap();
        cfg.curvature_mode = CurvatureModeCfg::Curvnet;
        assert!(cfg.validate().is_err(), "stray fixed_kappa under curvnet mode");
    }

    #[test]
    fn duplicate_seeds_are_rejected() {
        let mut cfg = RunConfig::from_toml(minimal_toml()).unwrap();
        cfg.seeds = vec![1, 2, 1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn echo_round_trips_through_the_parser() {
        let mut cfg = RunConfig::from_toml(minimal_toml()).unwrap();
        cfg.curvature_mode = CurvatureModeCfg::Fixed;
        cfg.fixed_kappa = Some(0.5);
        let echoed = RunConfig::from_toml(&cfg.echo_toml()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn to_distill_carries_the_seed_and_modes() {
        let cfg = RunConfig::from_toml(minimal_toml()).unwrap();
        let d = cfg.to_distill(9).unwrap();
        assert_eq!(d.seed, 9);
        assert_eq!(d.denominator_mode, DenominatorMode::NegativesOnly);
        assert_eq!(d.similarity_mode, SimilarityMode::Glp);
    }
}
