//! Run configuration: a TOML tree layered over a named search preset.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rgtn::discovery::NamedSpec;
use rgtn::synth::TruthSpec;
use rgtn::{presets, RGConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Default,
    Reveal,
    Compression,
    CompletionVideo,
}

impl Preset {
    pub fn search(self) -> RGConfig {
        match self {
            Preset::Default => RGConfig::default(),
            Preset::Reveal => presets::reveal(),
            Preset::Compression => presets::compression(),
            Preset::CompletionVideo => presets::completion_video(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Dense tensor of a random network drawn from `truth`.
    Network,
    /// The frames x height x width x channels tensor-ring video.
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub kind: SynthKind,
    pub truth: TruthSpec,
    pub video_rank: usize,
    /// Fraction of entries hidden by the written mask; no mask when 0.
    pub missing_fraction: f64,
    /// Noise norm relative to the clean tensor's norm.
    pub noise_rel: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { kind: SynthKind::Network, truth: TruthSpec::sixth_order(0), video_rank: 3, missing_fraction: 0.0, noise_rel: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub tensor: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub temporal_mode: Option<usize>,
    pub spatial_modes: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RevealSection {
    /// Dimensions of the built-in 4th-order topology set, used when
    /// `specs` is empty.
    pub dims: [usize; 4],
    pub specs: Vec<NamedSpec>,
    pub trials: usize,
    pub rank_tol: usize,
    pub noise_rel: f64,
}

impl Default for RevealSection {
    fn default() -> Self {
        Self { dims: [6, 7, 8, 7], specs: Vec::new(), trials: 20, rank_tol: 1, noise_rel: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub methods: Vec<String>,
    pub re_bounds: Vec<f64>,
    /// Largest uniform ring rank the baseline tries.
    pub max_rank: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self { methods: vec!["rgtn".into(), "trals".into()], re_bounds: vec![0.01], max_rank: 8, max_iters: 100, tol: 1e-9 }
    }
}

pub const METHODS: [&str; 2] = ["rgtn", "trals"];

/// Everything a command reads. `search` holds only the keys that
/// override the preset; `effective` merges them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub dataset: String,
    pub search: RGConfig,
    pub input: InputSection,
    pub synth: SynthSection,
    pub reveal: RevealSection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: Preset::Default,
            dataset: "input".into(),
            search: RGConfig::default(),
            input: InputSection::default(),
            synth: SynthSection::default(),
            reveal: RevealSection::default(),
            compare: CompareSection::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses a config; the `[search]` table overrides the chosen
    /// preset key by key. Unknown keys are rejected.
    pub fn parse(text: &str, default_preset: Preset) -> Result<Self, CliError> {
        let mut tree: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let preset = match tree.get("preset") {
            Some(v) => Preset::deserialize(v.clone()).map_err(|e| CliError::Config(format!("preset: {e}")))?,
            None => default_preset,
        };
        let mut search = toml::Value::try_from(preset.search()).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(over) = tree.remove("search") {
            merge(&mut search, over);
        }
        tree.insert("search".into(), search);
        tree.insert("preset".into(), toml::Value::try_from(preset).map_err(|e| CliError::Config(e.to_string()))?);
        let cfg: RunConfig = toml::Value::Table(tree).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.search.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, default_preset: Preset) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, default_preset)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_preset() {
        let cfg = RunConfig::parse("", Preset::Reveal).unwrap();
        assert_eq!(cfg.search, presets::reveal());
        assert_eq!(cfg.preset, Preset::Reveal);
    }

    #[test]
    fn search_keys_override_the_preset() {
        let cfg = RunConfig::parse("preset = \"compression\"\n[search]\ncompress_steps = 3\n[search.refit]\nsweeps = 2\n", Preset::Default).unwrap();
        assert_eq!(cfg.search.compress_steps, 3);
        assert_eq!(cfg.search.refit.sweeps, 2);
        assert!(cfg.search.screen_compressions);
        assert_eq!(cfg.search.init, presets::compression().init);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3\n", Preset::Default).is_err());
        assert!(RunConfig::parse("[search]\nscale = 3\n", Preset::Default).is_err());
        assert!(RunConfig::parse("preset = \"nope\"\n", Preset::Default).is_err());
    }

    #[test]
    fn emitted_config_round_trips() {
        for preset in [Preset::Default, Preset::Reveal, Preset::Compression, Preset::CompletionVideo] {
            let cfg = RunConfig::parse("", preset).unwrap();
            let again = RunConfig::parse(&cfg.to_toml(), Preset::Default).unwrap();
            assert_eq!(again, cfg);
        }
    }

    #[test]
    fn invalid_search_values_are_config_errors() {
        assert!(matches!(RunConfig::parse("[search]\ndelta_gate = 2.0\n", Preset::Default), Err(CliError::Config(_))));
    }
}
