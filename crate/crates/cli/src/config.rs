//! Run configuration: JSON file, then dotted command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lasermix_core::experiment::{BenchConfig, Preset};
use lasermix_core::nn::ModelConfig;
use lasermix_core::partition::{PartitionKind, PartitionSpec};
use lasermix_core::ssl::Hyperparams;
use lasermix_core::synth::{SceneParams, SimOptions};
use lasermix_core::voxel::{CylBounds, VoxelResolution};
use lasermix_core::SensorConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub sensor: SensorConfig,
    pub partition: PartitionSection,
    pub hyper: Hyperparams,
    pub model: ModelConfig,
    pub split: SplitSection,
    pub synth: SynthSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub ablate: AblateSection,
    pub entropy: EntropySection,
    pub voxel: VoxelSection,
    pub error_map: ErrorMapSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bench = BenchConfig::default();
        RunConfig {
            seed: 0,
            sensor: bench.sensor,
            partition: PartitionSection::default(),
            hyper: bench.hyper,
            model: bench.model,
            split: SplitSection {
                labeled_fraction: bench.labeled_fraction,
                seed: bench.split_seed,
            },
            synth: SynthSection {
                n_train: bench.n_train,
                n_eval: bench.n_eval,
                scene: bench.scene,
                sim: bench.sim,
            },
            data: DataSection::default(),
            train: TrainSection {
                iterations: bench.iterations,
                ..TrainSection::default()
            },
            ablate: AblateSection::default(),
            entropy: EntropySection::default(),
            voxel: VoxelSection::default(),
            error_map: ErrorMapSection::default(),
        }
    }
}

/// Partition used by `mix`, `stats` and the heatmap of `entropy-report`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub kind: PartitionKind,
    pub m: usize,
    pub seed: u64,
    pub order: lasermix_core::MixOrder,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            kind: PartitionKind::Inclination,
            m: 6,
            seed: 0,
            order: lasermix_core::MixOrder::OddEven,
        }
    }
}

/// Which synthetic training scans keep their labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub labeled_fraction: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        RunConfig::default().split
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_train: usize,
    pub n_eval: usize,
    pub scene: SceneParams,
    pub sim: SimOptions,
}

impl Default for SynthSection {
    fn default() -> Self {
        RunConfig::default().synth
    }
}

/// A dataset written by `synth`; when `dir` is unset, commands generate
/// the synthetic dataset in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: Option<PathBuf>,
    /// Floats per scan record: 4, or 5 with a trailing ring field.
    pub stride: usize,
    pub label_map: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            dir: None,
            stride: 4,
            label_map: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub preset: Preset,
    pub iterations: u64,
    /// Evaluate every this many steps (0 = only at the end).
    pub eval_every: u64,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            preset: Preset::LaserMix,
            iterations: BenchConfig::default().iterations,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub presets: Vec<Preset>,
    pub seeds: Vec<u64>,
    /// Fixed area counts swept with the LaserMix preset.
    pub m_values: Vec<usize>,
    pub ema_values: Vec<f64>,
    pub t_values: Vec<f64>,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            presets: Preset::ABLATION.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            m_values: vec![2, 3, 4, 5, 6],
            ema_values: vec![0.9, 0.95, 0.99],
            t_values: vec![0.7, 0.8, 0.9, 0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySection {
    pub m_values: Vec<usize>,
    /// Scans used (0 = every training scan).
    pub n_scans: usize,
}

impl Default for EntropySection {
    fn default() -> Self {
        EntropySection {
            m_values: vec![2, 4, 6, 8],
            n_scans: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VoxelSection {
    pub resolution: VoxelResolution,
    pub bounds: CylBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorMapSection {
    /// Side of the bird's-eye square in meters.
    pub bev_extent: f64,
    pub bev_pixels: usize,
}

impl Default for ErrorMapSection {
    fn default() -> Self {
        ErrorMapSection {
            bev_extent: 50.0,
            bev_pixels: 200,
        }
    }
}

impl RunConfig {
    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            sensor: self.sensor,
            n_train: self.synth.n_train,
            n_eval: self.synth.n_eval,
            labeled_fraction: self.split.labeled_fraction,
            split_seed: self.split.seed,
            scene: self.synth.scene.clone(),
            sim: self.synth.sim,
            model: self.model.clone(),
            hyper: self.hyper,
            iterations: self.train.iterations,
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec::for_sensor(
            self.partition.kind,
            &self.sensor,
            self.partition.m,
            self.partition.seed,
        )
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.sensor.validate()?;
        self.hyper.validate()?;
        self.synth.scene.validate()?;
        self.partition_spec().validate()?;
        self.voxel.bounds.validate()?;
        if self.model.channels.contains(&0) {
            bail!("model.channels must be positive");
        }
        if !(0.0..=1.0).contains(&self.split.labeled_fraction) {
            bail!("split.labeled_fraction must lie in [0, 1]");
        }
        if self.data.stride != 4 && self.data.stride != 5 {
            bail!("data.stride must be 4 or 5");
        }
        if self.error_map.bev_pixels == 0
            || self.error_map.bev_extent.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            bail!("error_map needs a positive extent and pixel count");
        }
        Ok(())
    }

    /// Reads `path` (if any), applies `overrides` in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> anyhow::Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str::<Value>(&text)
                    .with_context(|| format!("parsing {}", p.display()))?
            }
            None => Value::Object(Default::default()),
        };
        for (key, raw) in overrides {
            set_dotted(&mut value, key, parse_value(raw))
                .with_context(|| format!("override --{key}"))?;
        }
        let cfg: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// JSON if it parses, otherwise a string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

pub fn set_dotted(root: &mut Value, key: &str, v: Value) -> anyhow::Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key {key:?}");
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            bail!("{} is not an object", parts[..i].join("."));
        };
        if i + 1 == parts.len() {
            map.insert((*part).to_owned(), v);
            return Ok(());
        }
        cur = map
            .entry(*part)
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last part")
}

/// Dotted key and raw value of one command-line override.
pub type Override = (String, String);

/// Splits `--a.b value` / `--a.b=value` pairs out of an argument list.
pub fn split_overrides(args: Vec<String>) -> anyhow::Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let dotted = a
            .strip_prefix("--")
            .filter(|k| k.split('=').next().is_some_and(|n| n.contains('.')));
        match dotted {
            Some(k) => {
                if let Some((name, v)) = k.split_once('=') {
                    overrides.push((name.to_owned(), v.to_owned()));
                } else {
                    let v = it
                        .next()
                        .with_context(|| format!("missing value for --{k}"))?;
                    overrides.push((k.to_owned(), v));
                }
            }
            None => rest.push(a),
        }
    }
    Ok((rest, overrides))
}
