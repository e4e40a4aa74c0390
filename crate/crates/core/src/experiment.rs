//! Desk-scale benchmark: presets, seeded runs and summaries.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::Result;
use crate::mix::{MixOrder, MixPlan};
use crate::nn::{ModelConfig, SegModel, INPUT_CHANNELS};
use crate::partition::PartitionKind;
use crate::rng;
use crate::sensor::SensorConfig;
use crate::ssl::{evaluate, Hyperparams, IouReport, LossBreakdown, TrainState, Trainer};
use crate::synth::{self, Dataset, DatasetSpec, SceneParams, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    SupOnly,
    LaserMix,
    CutMix,
    MixUp,
    CutOut,
    Reversed,
    Shuffled,
    AzimuthMix,
    RadiusMix,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::SupOnly,
        Preset::LaserMix,
        Preset::CutMix,
        Preset::MixUp,
        Preset::CutOut,
        Preset::Reversed,
        Preset::Shuffled,
        Preset::AzimuthMix,
        Preset::RadiusMix,
    ];

    /// The grid run by the ablation command.
    pub const ABLATION: [Preset; 6] = [
        Preset::LaserMix,
        Preset::CutMix,
        Preset::MixUp,
        Preset::CutOut,
        Preset::Reversed,
        Preset::Shuffled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SupOnly => "sup_only",
            Preset::LaserMix => "laser_mix",
            Preset::CutMix => "cut_mix",
            Preset::MixUp => "mix_up",
            Preset::CutOut => "cut_out",
            Preset::Reversed => "reversed",
            Preset::Shuffled => "shuffled",
            Preset::AzimuthMix => "azimuth_mix",
            Preset::RadiusMix => "radius_mix",
        }
    }

    pub fn from_name(s: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn plan(self, hyper: &Hyperparams, seed: u64) -> MixPlan {
        let mut plan = MixPlan::laser(hyper.m_lo, hyper.m_hi);
        match self {
            Preset::SupOnly | Preset::LaserMix => {}
            Preset::CutMix => plan.kind = PartitionKind::RandomArea,
            Preset::MixUp => plan.kind = PartitionKind::RandomPoint,
            Preset::CutOut => plan.cut_out = true,
            Preset::Reversed => plan.order = MixOrder::Reversed,
            Preset::Shuffled => plan.order = MixOrder::Shuffled(seed),
            Preset::AzimuthMix => plan.kind = PartitionKind::Azimuth,
            Preset::RadiusMix => plan.kind = PartitionKind::Radius,
        }
        plan
    }

    pub fn hyper(self, base: &Hyperparams) -> Hyperparams {
        match self {
            Preset::SupOnly => Hyperparams {
                lambda_mix: 0.0,
                lambda_mt: 0.0,
                ..*base
            },
            _ => *base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub sensor: SensorConfig,
    pub n_train: usize,
    pub n_eval: usize,
    pub labeled_fraction: f64,
    /// Fixes the labeled split across seeds; `None` ties it to the run seed.
    pub split_seed: Option<u64>,
    pub scene: SceneParams,
    pub sim: SimOptions,
    pub model: ModelConfig,
    pub hyper: Hyperparams,
    pub iterations: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sensor: SensorConfig::desk(),
            n_train: 100,
            n_eval: 20,
            labeled_fraction: 0.1,
            split_seed: None,
            scene: SceneParams::default(),
            sim: SimOptions::default(),
            model: ModelConfig::default(),
            hyper: Hyperparams::default(),
            iterations: 800,
        }
    }
}

impl BenchConfig {
    pub fn dataset_spec(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            n_train: self.n_train,
            n_eval: self.n_eval,
            labeled_fraction: self.labeled_fraction,
            seed,
            split_seed: self.split_seed.unwrap_or(seed),
        }
    }

    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        synth::make_dataset(
            &self.dataset_spec(seed),
            &self.scene,
            &self.sensor,
            &self.sim,
        )
    }

    /// Initial weights for `seed`, shared by every preset.
    pub fn initial_model(&self, seed: u64) -> SegModel {
        let mut g = rng::stream(seed, INIT_STREAM);
        SegModel::new(INPUT_CHANNELS, &self.model, synth::NUM_CLASSES, &mut g)
    }
}

const INIT_STREAM: u64 = 5 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub preset: Preset,
    pub seed: u64,
    pub teacher: IouReport,
    pub student: IouReport,
    pub losses: Vec<LossBreakdown>,
    pub state: TrainState,
}

impl RunSummary {
    /// Reported score: teacher mIoU in percent.
    pub fn miou_percent(&self) -> f64 {
        100.0 * self.teacher.miou
    }
}

/// Scans a run trains and evaluates on.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub labeled: &'a [PointCloud],
    pub unlabeled: &'a [PointCloud],
    pub eval: &'a [PointCloud],
}

impl<'a> From<&'a Dataset> for Splits<'a> {
    fn from(d: &'a Dataset) -> Self {
        Splits {
            labeled: &d.labeled,
            unlabeled: &d.unlabeled,
            eval: &d.eval,
        }
    }
}

/// Model, mixing plan and trainer state for `preset` at `seed`; every
/// preset starts from the same weights.
pub fn trainer<'a>(
    bench: &BenchConfig,
    data: Splits<'a>,
    preset: Preset,
    seed: u64,
) -> Result<Trainer<'a>> {
    let hyper = preset.hyper(&bench.hyper);
    hyper.validate()?;
    bench.sensor.validate()?;
    Ok(Trainer {
        state: TrainState::new(bench.initial_model(seed), hyper),
        sensor: bench.sensor,
        plan: preset.plan(&hyper, seed),
        labeled: data.labeled,
        unlabeled: data.unlabeled,
        seed,
    })
}

/// Train `preset` for `bench.iterations` steps and evaluate on `data.eval`.
pub fn run_on(
    bench: &BenchConfig,
    data: Splits<'_>,
    preset: Preset,
    seed: u64,
    mut on_step: impl FnMut(u64, &LossBreakdown),
) -> Result<RunSummary> {
    let mut trainer = trainer(bench, data, preset, seed)?;
    let mut losses = Vec::with_capacity(bench.iterations as usize);
    for _ in 0..bench.iterations {
        let l = trainer.step()?;
        on_step(trainer.state.step, &l);
        losses.push(l);
    }
    let state = trainer.state;
    let teacher = evaluate(&state.teacher, &bench.sensor, data.eval)?;
    let student = evaluate(&state.student, &bench.sensor, data.eval)?;
    Ok(RunSummary {
        preset,
        seed,
        teacher,
        student,
        losses,
        state,
    })
}

pub fn run_preset(bench: &BenchConfig, preset: Preset, seed: u64) -> Result<RunSummary> {
    let data = bench.dataset(seed)?;
    run_on(bench, (&data).into(), preset, seed, |_, _| {})
}

/// Arithmetic mean; 0 for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
