//! Student/teacher training with laser mixing, pseudo-labels and an EMA
//! teacher, plus IoU evaluation.
//!
//! One iteration, for a labeled batch `(X_l, Y_l)` and an unlabeled batch
//! `X_u` of equal size `B`:
//!
//! 1. mix every `(x_l, x_u)` pair in point space, giving `2B` mixed scans;
//! 2. the student predicts on `X_l`, `X_u` and the mixed scans, the teacher
//!    on `X_l` and `X_u`;
//! 3. the teacher's confident predictions on `X_u` become pseudo-labels
//!    (IGNORED below the threshold) and are mixed with `Y_l` exactly like
//!    the points were;
//! 4. `L = L_sup + λ_mix·L_mix + λ_mt·L_mt`, where `L_mt` compares student
//!    and teacher probabilities on `X_l ∪ X_u`;
//! 5. one SGD step on the student, then the EMA update of the teacher.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cloud::{ClassId, PointCloud};
use crate::error::{Error, Result};
use crate::mix::{transport_labels, MixPlan};
use crate::nn::{self, Activations, FeatureMap, Gradients, SegModel};
use crate::prior::PointModel;
use crate::range::{pixel_indices, range_project, RangeImage};
use crate::rng;
use crate::sensor::SensorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Pseudo-label confidence threshold.
    #[serde(rename = "T")]
    pub threshold: f64,
    pub lambda_mix: f64,
    pub lambda_mt: f64,
    pub ema_decay: f64,
    pub lr: f64,
    pub batch: usize,
    pub m_lo: usize,
    pub m_hi: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            threshold: 0.9,
            lambda_mix: 1.0,
            lambda_mt: 1.0,
            ema_decay: 0.95,
            lr: 0.1,
            batch: 2,
            m_lo: 2,
            m_hi: 6,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::arg(m));
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad("T must lie in (0, 1]");
        }
        if !(self.lambda_mix >= 0.0 && self.lambda_mix.is_finite())
            || !(self.lambda_mt >= 0.0 && self.lambda_mt.is_finite())
        {
            return bad("loss weights must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch < 1 {
            return bad("batch must be >= 1");
        }
        if self.m_lo < 1 || self.m_lo > self.m_hi {
            return bad("need 1 <= m_lo <= m_hi");
        }
        Ok(())
    }

    /// Supervised-only: both unsupervised weights are zero.
    pub fn is_sup_only(&self) -> bool {
        self.lambda_mix == 0.0 && self.lambda_mt == 0.0
    }
}

/// Model input for a range image: range / max_range, intensity, occupancy.
pub fn features(img: &RangeImage, max_range: f64) -> FeatureMap {
    let hw = img.h * img.w;
    let mut f = FeatureMap::zeros(nn::INPUT_CHANNELS, img.h, img.w);
    for p in (0..hw).filter(|&p| img.is_occupied(p)) {
        f.data[p] = img.range[p] as f64 / max_range;
        f.data[hw + p] = img.intensity[p] as f64;
        f.data[2 * hw + p] = 1.0;
    }
    f
}

/// A projected scan: image, model input and each point's pixel.
pub struct ProjectedScan {
    pub image: RangeImage,
    pub input: FeatureMap,
    pub pixel_of_point: Vec<Option<usize>>,
}

impl ProjectedScan {
    pub fn new(cloud: &PointCloud, sensor: &SensorConfig) -> Result<Self> {
        let (h, w) = (sensor.num_beams, sensor.width);
        let (image, _) = range_project(cloud, sensor, h, w)?;
        let input = features(&image, sensor.max_range);
        Ok(ProjectedScan {
            image,
            input,
            pixel_of_point: pixel_indices(cloud, sensor, h, w),
        })
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.image.point_index.iter().map(|&i| i >= 0).collect()
    }

    /// Pixel targets from per-point labels: each pixel takes its winning point's label.
    pub fn pixel_targets(&self, point_labels: &[ClassId]) -> Vec<ClassId> {
        self.image
            .point_index
            .iter()
            .map(|&i| {
                if i >= 0 {
                    point_labels[i as usize]
                } else {
                    ClassId::IGNORED
                }
            })
            .collect()
    }

    /// Per-point labels read back from a per-pixel labeling; points at the
    /// origin get IGNORED.
    pub fn point_labels(&self, pixel_labels: &[ClassId]) -> Vec<ClassId> {
        self.pixel_of_point
            .iter()
            .map(|p| p.map_or(ClassId::IGNORED, |p| pixel_labels[p]))
            .collect()
    }
}

/// Argmax class where the top probability reaches `threshold`, else IGNORED.
/// Ties resolve to the smallest class id.
pub fn pseudo_label(probs: &FeatureMap, threshold: f64) -> Vec<ClassId> {
    let hw = probs.hw();
    (0..hw)
        .map(|p| {
            let (best, conf) = argmax_at(probs, p);
            if conf >= threshold {
                ClassId(best as u16)
            } else {
                ClassId::IGNORED
            }
        })
        .collect()
}

fn argmax_at(probs: &FeatureMap, p: usize) -> (usize, f64) {
    let mut best = 0;
    let mut conf = probs.at(0, p);
    for c in 1..probs.c {
        let v = probs.at(c, p);
        if v > conf {
            best = c;
            conf = v;
        }
    }
    (best, conf)
}

/// Hard predictions (argmax, smallest id on ties) at every pixel.
pub fn predict_classes(probs: &FeatureMap) -> Vec<ClassId> {
    (0..probs.hw())
        .map(|p| ClassId(argmax_at(probs, p).0 as u16))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub student: SegModel,
    pub teacher: SegModel,
    pub step: u64,
    pub hyper: Hyperparams,
}

impl TrainState {
    /// Student and teacher start from the same weights.
    pub fn new(model: SegModel, hyper: Hyperparams) -> Self {
        TrainState {
            teacher: model.clone(),
            student: model,
            step: 0,
            hyper,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub sup: f64,
    pub mix: f64,
    pub mt: f64,
    pub total: f64,
}

/// One training iteration over a labeled and an unlabeled batch of equal
/// size. Labels on the unlabeled scans, if any, are never read.
pub fn train_iteration(
    state: &mut TrainState,
    sensor: &SensorConfig,
    plan: &MixPlan,
    labeled: &[&PointCloud],
    unlabeled: &[&PointCloud],
    g: &mut rng::Rng,
) -> Result<LossBreakdown> {
    let hyper = state.hyper;
    let use_mix = hyper.lambda_mix > 0.0;
    let use_mt = hyper.lambda_mt > 0.0;
    let use_unlabeled = use_mix || use_mt;
    if labeled.is_empty() {
        return Err(Error::arg("empty labeled batch"));
    }
    if use_unlabeled && unlabeled.len() != labeled.len() {
        return Err(Error::arg(alloc::format!(
            "labeled batch has {} scans, unlabeled {}",
            labeled.len(),
            unlabeled.len()
        )));
    }
    let gt: Vec<&[ClassId]> = labeled
        .iter()
        .map(|c| {
            c.labels()
                .ok_or_else(|| Error::arg("labeled scan without labels"))
        })
        .collect::<Result<_>>()?;
    let x_u: Vec<PointCloud> = if use_unlabeled {
        unlabeled
            .iter()
            .map(|c| (*c).clone().without_labels())
            .collect()
    } else {
        Vec::new()
    };

    // Mix the data pairs. Labels are attached after pseudo-labeling through
    // provenance, which applies the same partition to the labels.
    let mut mixes = Vec::new();
    if use_mix {
        plan.validate()?;
        for (xl, xu) in labeled.iter().zip(&x_u) {
            let xl = (*xl).clone().without_labels();
            let (spec, order) = plan.sample(sensor, g);
            mixes.push(plan.apply(&xl, xu, &spec, order)?);
        }
    }

    let proj_l: Vec<ProjectedScan> = labeled
        .iter()
        .map(|c| ProjectedScan::new(c, sensor))
        .collect::<Result<_>>()?;
    let proj_u: Vec<ProjectedScan> = x_u
        .iter()
        .map(|c| ProjectedScan::new(c, sensor))
        .collect::<Result<_>>()?;
    let mut proj_mix = Vec::with_capacity(2 * mixes.len());
    for m in &mixes {
        proj_mix.push(ProjectedScan::new(&m.mixed_a, sensor)?);
        proj_mix.push(ProjectedScan::new(&m.mixed_b, sensor)?);
    }

    // Student forward on (X_l, X_u, X_mix), teacher forward on (X_l, X_u).
    let student_fwd = |p: &ProjectedScan| -> Result<(Activations, FeatureMap)> {
        let acts = state.student.forward_cached(&p.input)?;
        let probs = nn::softmax(acts.logits());
        Ok((acts, probs))
    };
    let s_l: Vec<_> = proj_l.iter().map(student_fwd).collect::<Result<_>>()?;
    let s_u: Vec<_> = if use_mt {
        proj_u.iter().map(student_fwd).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let s_mix: Vec<_> = proj_mix.iter().map(student_fwd).collect::<Result<_>>()?;
    let t_l: Vec<FeatureMap> = if use_mt {
        proj_l
            .iter()
            .map(|p| state.teacher.forward(&p.input))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let t_u: Vec<FeatureMap> = proj_u
        .iter()
        .map(|p| state.teacher.forward(&p.input))
        .collect::<Result<_>>()?;

    // Pseudo-labels, then the mixed labels.
    let mut mix_targets = Vec::with_capacity(proj_mix.len());
    for (b, m) in mixes.iter().enumerate() {
        let pseudo_px = pseudo_label(&t_u[b], hyper.threshold);
        let pseudo = proj_u[b].point_labels(&pseudo_px);
        let ya = transport_labels(&m.provenance_a, gt[b], &pseudo);
        let yb = transport_labels(&m.provenance_b, gt[b], &pseudo);
        mix_targets.push(proj_mix[2 * b].pixel_targets(&ya));
        mix_targets.push(proj_mix[2 * b + 1].pixel_targets(&yb));
    }

    // Losses, un-normalized first so each is a mean over its whole batch.
    let mut sup = Vec::with_capacity(proj_l.len());
    let (mut sup_sum, mut sup_n) = (0.0, 0usize);
    for (p, (_, probs)) in proj_l.iter().zip(&s_l) {
        let (s, n, gr) = nn::ce_sum(probs, &p.pixel_targets(gt[sup.len()]));
        sup_sum += s;
        sup_n += n;
        sup.push(gr);
    }
    let mut mixg = Vec::with_capacity(proj_mix.len());
    let (mut mix_sum, mut mix_n) = (0.0, 0usize);
    for ((_, probs), t) in s_mix.iter().zip(&mix_targets) {
        let (s, n, gr) = nn::ce_sum(probs, t);
        mix_sum += s;
        mix_n += n;
        mixg.push(gr);
    }
    let mut mt_l = Vec::new();
    let mut mt_u = Vec::new();
    let (mut mt_sum_v, mut mt_n) = (0.0, 0usize);
    if use_mt {
        for ((p, (_, sp)), tp) in proj_l.iter().zip(&s_l).zip(&t_l) {
            let (s, n, gr) = nn::mt_sum(sp, tp, &p.occupancy());
            mt_sum_v += s;
            mt_n += n;
            mt_l.push(gr);
        }
        for ((p, (_, sp)), tp) in proj_u.iter().zip(&s_u).zip(&t_u) {
            let (s, n, gr) = nn::mt_sum(sp, tp, &p.occupancy());
            mt_sum_v += s;
            mt_n += n;
            mt_u.push(gr);
        }
    }
    let norm = |n: usize| if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let (w_sup, w_mix, w_mt) = (
        norm(sup_n),
        hyper.lambda_mix * norm(mix_n),
        hyper.lambda_mt * norm(mt_n),
    );
    let loss = LossBreakdown {
        sup: sup_sum * norm(sup_n),
        mix: mix_sum * norm(mix_n),
        mt: mt_sum_v * norm(mt_n),
        total: sup_sum * w_sup + mix_sum * w_mix + mt_sum_v * w_mt,
    };
    if !loss.total.is_finite() {
        return Err(Error::TrainingDiverged { step: state.step });
    }

    // Backward through the student only.
    let mut grads = Gradients::zeros_like(&state.student);
    let combine = |parts: &[(&FeatureMap, f64)]| -> FeatureMap {
        let mut d = FeatureMap::zeros(parts[0].0.c, parts[0].0.h, parts[0].0.w);
        for (g, wgt) in parts {
            if *wgt != 0.0 {
                d.data
                    .iter_mut()
                    .zip(&g.data)
                    .for_each(|(a, b)| *a += wgt * b);
            }
        }
        d
    };
    for (b, (acts, _)) in s_l.iter().enumerate() {
        let d = if use_mt {
            combine(&[(&sup[b], w_sup), (&mt_l[b], w_mt)])
        } else {
            combine(&[(&sup[b], w_sup)])
        };
        state.student.backward(acts, &d, &mut grads);
    }
    for (b, (acts, _)) in s_u.iter().enumerate() {
        state
            .student
            .backward(acts, &combine(&[(&mt_u[b], w_mt)]), &mut grads);
    }
    for (b, (acts, _)) in s_mix.iter().enumerate() {
        state
            .student
            .backward(acts, &combine(&[(&mixg[b], w_mix)]), &mut grads);
    }

    state.student.sgd_step(&grads, hyper.lr);
    if !state.student.is_finite() {
        return Err(Error::TrainingDiverged { step: state.step });
    }
    nn::ema_update(&mut state.teacher, &state.student, hyper.ema_decay);
    state.step += 1;
    Ok(loss)
}

/// A model evaluated through range projection: each point takes the
/// distribution of its pixel; points at the origin get a uniform one.
pub struct RangeSegmenter<'a> {
    pub model: &'a SegModel,
    pub sensor: &'a SensorConfig,
}

impl PointModel for RangeSegmenter<'_> {
    fn num_classes(&self) -> usize {
        self.model.num_classes
    }

    fn predict_points(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let k = self.model.num_classes;
        let proj = ProjectedScan::new(cloud, self.sensor)?;
        let probs = self.model.forward(&proj.input)?;
        let mut out = Vec::with_capacity(cloud.len() * k);
        for pix in &proj.pixel_of_point {
            match pix {
                Some(p) => out.extend((0..k).map(|c| probs.at(c, *p))),
                None => out.extend(core::iter::repeat_n(1.0 / k as f64, k)),
            }
        }
        Ok(out)
    }
}

/// `k × k` counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: alloc::vec![0; k * k],
        }
    }

    /// Adds pairs whose truth is not IGNORED.
    pub fn add(&mut self, truth: &[ClassId], pred: &[ClassId]) {
        for (&t, &p) in truth.iter().zip(pred) {
            if t.is_ignored() || p.is_ignored() {
                continue;
            }
            self.counts[t.index() * self.k + p.index()] += 1;
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Per-class IoU (`None` for classes absent from the truth) and their mean.
    pub fn iou(&self) -> IouReport {
        let k = self.k;
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..k).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|t| self.get(t, c)).sum::<u64>() - tp;
                (tp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        IouReport { per_class, miou }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Pixel-level confusion of `model` over labeled scans.
pub fn confusion(
    model: &SegModel,
    sensor: &SensorConfig,
    scans: &[PointCloud],
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.num_classes);
    for scan in scans {
        let labels = scan
            .labels()
            .ok_or_else(|| Error::arg("evaluation scan without labels"))?;
        let proj = ProjectedScan::new(scan, sensor)?;
        let pred = predict_classes(&model.forward(&proj.input)?);
        cm.add(&proj.pixel_targets(labels), &pred);
    }
    Ok(cm)
}

pub fn evaluate(
    model: &SegModel,
    sensor: &SensorConfig,
    scans: &[PointCloud],
) -> Result<IouReport> {
    Ok(confusion(model, sensor, scans)?.iou())
}

/// Batch `step` of a cyclic, per-epoch reshuffled pass over `n` items.
/// A pure function of its arguments, so training can resume at any step.
pub fn batch_indices(seed: u64, tag: u64, n: usize, step: u64, batch: usize) -> Vec<usize> {
    (0..batch as u64)
        .map(|j| {
            let gpos = step * batch as u64 + j;
            let epoch = gpos / n as u64;
            let mut g = rng::stream(seed, (tag << 40) ^ epoch);
            rng::permutation(&mut g, n)[(gpos % n as u64) as usize]
        })
        .collect()
}

const TAG_LABELED: u64 = 1;
const TAG_UNLABELED: u64 = 2;
const TAG_MIX: u64 = 3;

/// Drives [`train_iteration`] over fixed labeled and unlabeled pools.
pub struct Trainer<'a> {
    pub state: TrainState,
    pub sensor: SensorConfig,
    pub plan: MixPlan,
    pub labeled: &'a [PointCloud],
    pub unlabeled: &'a [PointCloud],
    pub seed: u64,
}

impl<'a> Trainer<'a> {
    pub fn step(&mut self) -> Result<LossBreakdown> {
        let b = self.state.hyper.batch;
        let step = self.state.step;
        let li = batch_indices(self.seed, TAG_LABELED, self.labeled.len(), step, b);
        let xl: Vec<&PointCloud> = li.iter().map(|&i| &self.labeled[i]).collect();
        let xu: Vec<&PointCloud> = if self.state.hyper.is_sup_only() || self.unlabeled.is_empty() {
            Vec::new()
        } else {
            batch_indices(self.seed, TAG_UNLABELED, self.unlabeled.len(), step, b)
                .into_iter()
                .map(|i| &self.unlabeled[i])
                .collect()
        };
        let mut g = rng::stream(self.seed, (TAG_MIX << 40) ^ step);
        train_iteration(&mut self.state, &self.sensor, &self.plan, &xl, &xu, &mut g)
    }
}
