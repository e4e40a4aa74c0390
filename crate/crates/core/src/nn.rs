//! A small range-image CNN with hand-written backpropagation.
//!
//! The model is a stack of 3×3 stride-1 zero-padded convolutions with ReLU,
//! followed by a 1×1 convolution to K logits per pixel. Tensors are flat
//! `f64` buffers in channel-major `[c][h][w]` order.

use alloc::vec::Vec;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::cloud::ClassId;
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FeatureMap {
            c,
            h,
            w,
            data: alloc::vec![0.0; c * h * w],
        }
    }

    #[inline]
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn at(&self, c: usize, pixel: usize) -> f64 {
        self.data[c * self.hw() + pixel]
    }

    /// Values of all channels at one pixel.
    pub fn pixel(&self, pixel: usize) -> Vec<f64> {
        (0..self.c).map(|c| self.at(c, pixel)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Odd kernel size.
    pub k: usize,
    /// `[out][in][ky][kx]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Index ranges `[lo, hi)` of output positions whose input at `pos + offset`
/// stays inside `0..n`.
#[inline]
fn valid(n: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// Dot product with four independent partial sums so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Conv2d {
            in_ch,
            out_ch,
            k,
            weight: alloc::vec![0.0; out_ch * in_ch * k * k],
            bias: alloc::vec![0.0; out_ch],
        }
    }

    /// He-normal weights, zero biases.
    pub fn he<R: RngCore + ?Sized>(in_ch: usize, out_ch: usize, k: usize, g: &mut R) -> Self {
        let mut c = Self::zeros(in_ch, out_ch, k);
        let std = math::sqrt(2.0 / (in_ch * k * k) as f64);
        for w in &mut c.weight {
            *w = std * rng::normal(g);
        }
        c
    }

    #[inline]
    fn w_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_ch + ic) * self.k + ky) * self.k + kx
    }

    pub fn forward(&self, x: &FeatureMap) -> FeatureMap {
        debug_assert_eq!(x.c, self.in_ch);
        let (h, w, hw) = (x.h, x.w, x.hw());
        let pad = (self.k / 2) as isize;
        let mut out = FeatureMap::zeros(self.out_ch, h, w);
        for oc in 0..self.out_ch {
            let o = &mut out.data[oc * hw..(oc + 1) * hw];
            o.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let src = &x.data[ic * hw..(ic + 1) * hw];
                for ky in 0..self.k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid(h, dy);
                    for kx in 0..self.k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid(w, dx);
                        let wv = self.weight[self.w_index(oc, ic, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let dst = &mut o[y * w + x0..y * w + x1];
                            let s0 = (sy * w) as isize + x0 as isize + dx;
                            let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
                            for (d, v) in dst.iter_mut().zip(s) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `gw`/`gb`; returns the input gradient
    /// when `need_dx`.
    pub fn backward(
        &self,
        x: &FeatureMap,
        dout: &FeatureMap,
        gw: &mut [f64],
        gb: &mut [f64],
        need_dx: bool,
    ) -> Option<FeatureMap> {
        let (h, w, hw) = (x.h, x.w, x.hw());
        let pad = (self.k / 2) as isize;
        let mut dx_map = need_dx.then(|| FeatureMap::zeros(self.in_ch, h, w));
        for oc in 0..self.out_ch {
            let d = &dout.data[oc * hw..(oc + 1) * hw];
            gb[oc] += d.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let src = &x.data[ic * hw..(ic + 1) * hw];
                for ky in 0..self.k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid(h, dy);
                    for kx in 0..self.k {
                        let dxo = kx as isize - pad;
                        let (x0, x1) = valid(w, dxo);
                        let wi = self.w_index(oc, ic, ky, kx);
                        let wv = self.weight[wi];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let drow = &d[y * w + x0..y * w + x1];
                            let s0 = ((sy * w) as isize + x0 as isize + dxo) as usize;
                            let srow = &src[s0..s0 + (x1 - x0)];
                            acc += dot(drow, srow);
                            if let Some(dm) = dx_map.as_mut() {
                                let t = &mut dm.data[ic * hw + s0..ic * hw + s0 + (x1 - x0)];
                                for (tv, a) in t.iter_mut().zip(drow) {
                                    *tv += wv * a;
                                }
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
        dx_map
    }
}

/// Layer widths of the hidden stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: alloc::vec![8, 16],
        }
    }
}

/// Input channels: normalized range, intensity, occupancy mask.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegModel {
    pub layers: Vec<Conv2d>,
    pub num_classes: usize,
}

/// Per-layer outputs of a forward pass. `acts[0]` is the input, `acts[i + 1]`
/// the (post-ReLU) output of layer `i`; the last entry holds logits.
#[derive(Debug, Clone)]
pub struct Activations {
    pub acts: Vec<FeatureMap>,
}

impl Activations {
    pub fn logits(&self) -> &FeatureMap {
        self.acts.last().expect("non-empty")
    }
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &SegModel) -> Self {
        Gradients {
            weight: model
                .layers
                .iter()
                .map(|l| alloc::vec![0.0; l.weight.len()])
                .collect(),
            bias: model
                .layers
                .iter()
                .map(|l| alloc::vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            v.extend_from_slice(w);
            v.extend_from_slice(b);
        }
        v
    }
}

impl SegModel {
    fn build(
        in_ch: usize,
        cfg: &ModelConfig,
        num_classes: usize,
        mut make: impl FnMut(usize, usize, usize) -> Conv2d,
    ) -> Self {
        let mut layers = Vec::new();
        let mut prev = in_ch;
        for &c in &cfg.channels {
            layers.push(make(prev, c, 3));
            prev = c;
        }
        layers.push(make(prev, num_classes, 1));
        SegModel {
            layers,
            num_classes,
        }
    }

    pub fn new<R: RngCore + ?Sized>(
        in_ch: usize,
        cfg: &ModelConfig,
        num_classes: usize,
        g: &mut R,
    ) -> Self {
        Self::build(in_ch, cfg, num_classes, |i, o, k| Conv2d::he(i, o, k, g))
    }

    pub fn zeros(in_ch: usize, cfg: &ModelConfig, num_classes: usize) -> Self {
        Self::build(in_ch, cfg, num_classes, Conv2d::zeros)
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn same_shape(&self, other: &SegModel) -> bool {
        self.num_classes == other.num_classes
            && self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| (a.in_ch, a.out_ch, a.k) == (b.in_ch, b.out_ch, b.k))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::arg(alloc::format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn forward_cached(&self, x: &FeatureMap) -> Result<Activations> {
        if x.c != self.in_channels() {
            return Err(Error::arg(alloc::format!(
                "model expects {} input channels, got {}",
                self.in_channels(),
                x.c
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(acts.last().expect("input present"));
            if i < last {
                for v in &mut out.data {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(out);
        }
        Ok(Activations { acts })
    }

    pub fn logits(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_cached(x)?.acts.pop().expect("logits"))
    }

    /// Per-pixel class probabilities, shape `(K, h, w)`.
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Accumulates `dL/dθ` into `grads` given `dL/dlogits`.
    pub fn backward(&self, acts: &Activations, dlogits: &FeatureMap, grads: &mut Gradients) {
        let mut d = dlogits.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (g, a) in d.data.iter_mut().zip(&acts.acts[i + 1].data) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let dx = self.layers[i].backward(
                &acts.acts[i],
                &d,
                &mut grads.weight[i],
                &mut grads.bias[i],
                i > 0,
            );
            if let Some(dx) = dx {
                d = dx;
            }
        }
    }

    /// Plain SGD: `θ ← θ − lr·g`.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (l, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weight.iter().zip(&grads.bias))
        {
            for (p, g) in l.weight.iter_mut().zip(gw) {
                *p -= lr * g;
            }
            for (p, g) in l.bias.iter_mut().zip(gb) {
                *p -= lr * g;
            }
        }
    }
}

/// Channel-wise softmax at every pixel, max-subtracted.
pub fn softmax(logits: &FeatureMap) -> FeatureMap {
    let (k, hw) = (logits.c, logits.hw());
    let mut out = FeatureMap::zeros(k, logits.h, logits.w);
    for p in 0..hw {
        let mut mx = f64::NEG_INFINITY;
        for c in 0..k {
            mx = mx.max(logits.data[c * hw + p]);
        }
        let mut sum = 0.0;
        for c in 0..k {
            let e = math::exp(logits.data[c * hw + p] - mx);
            out.data[c * hw + p] = e;
            sum += e;
        }
        for c in 0..k {
            out.data[c * hw + p] /= sum;
        }
    }
    out
}

/// Un-normalized cross-entropy: `(Σ −ln p_target, #counted pixels, Σ (p − onehot))`.
/// IGNORED targets contribute nothing.
pub fn ce_sum(probs: &FeatureMap, targets: &[ClassId]) -> (f64, usize, FeatureMap) {
    let (k, hw) = (probs.c, probs.hw());
    assert_eq!(targets.len(), hw, "one target per pixel");
    let mut grad = FeatureMap::zeros(k, probs.h, probs.w);
    let mut loss = 0.0;
    let mut count = 0;
    for (p, &t) in targets.iter().enumerate() {
        if t.is_ignored() {
            continue;
        }
        let ti = t.index();
        assert!(ti < k, "target class {ti} out of range for {k} classes");
        count += 1;
        loss -= math::ln(probs.data[ti * hw + p].max(f64::MIN_POSITIVE));
        for c in 0..k {
            grad.data[c * hw + p] = probs.data[c * hw + p];
        }
        grad.data[ti * hw + p] -= 1.0;
    }
    (loss, count, grad)
}

/// Mean cross-entropy over non-IGNORED pixels and its gradient with respect
/// to the logits. All-IGNORED targets give zero loss and gradient.
pub fn ce_loss(probs: &FeatureMap, targets: &[ClassId]) -> (f64, FeatureMap) {
    let (sum, count, mut grad) = ce_sum(probs, targets);
    if count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / count as f64;
    grad.data.iter_mut().for_each(|g| *g *= inv);
    (sum * inv, grad)
}

/// Un-normalized squared-difference consistency:
/// `(Σ_pixels Σ_k (s_k − t_k)², #pixels, d/dstudent-logits)` over pixels with `mask` set.
pub fn mt_sum(
    student: &FeatureMap,
    teacher: &FeatureMap,
    mask: &[bool],
) -> (f64, usize, FeatureMap) {
    let (k, hw) = (student.c, student.hw());
    assert_eq!(mask.len(), hw);
    let mut grad = FeatureMap::zeros(k, student.h, student.w);
    let mut loss = 0.0;
    let mut count = 0;
    let mut g = alloc::vec![0.0; k];
    for p in (0..hw).filter(|&p| mask[p]) {
        count += 1;
        let mut dot = 0.0;
        for c in 0..k {
            let s = student.data[c * hw + p];
            let diff = s - teacher.data[c * hw + p];
            loss += diff * diff;
            g[c] = 2.0 * diff;
            dot += s * g[c];
        }
        for c in 0..k {
            let s = student.data[c * hw + p];
            grad.data[c * hw + p] = s * (g[c] - dot);
        }
    }
    (loss, count, grad)
}

/// Mean over masked pixels of the squared L2 distance between probability
/// vectors, with the gradient for the student's logits only.
pub fn mt_loss(student: &FeatureMap, teacher: &FeatureMap, mask: &[bool]) -> (f64, FeatureMap) {
    let (sum, count, mut grad) = mt_sum(student, teacher, mask);
    if count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / count as f64;
    grad.data.iter_mut().for_each(|g| *g *= inv);
    (sum * inv, grad)
}

/// `θ_t ← decay·θ_t + (1 − decay)·θ_s`, elementwise.
pub fn ema_update(teacher: &mut SegModel, student: &SegModel, decay: f64) {
    debug_assert!(teacher.same_shape(student));
    for (t, s) in teacher.params_mut().zip(student.params()) {
        *t = decay * *t + (1.0 - decay) * *s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut g = rng::seeded(seed);
        let mut m = FeatureMap::zeros(c, h, w);
        m.data
            .iter_mut()
            .for_each(|v| *v = rng::uniform(&mut g, -1.0, 1.0));
        m
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = SegModel::zeros(3, &ModelConfig::default(), 5);
        let p = m.forward(&random_map(3, 4, 6, 1)).unwrap();
        assert!(p.data.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn bias_raises_class_probability() {
        let mut g = rng::seeded(2);
        let mut m = SegModel::new(3, &ModelConfig::default(), 4, &mut g);
        let x = random_map(3, 5, 5, 3);
        let before = m.forward(&x).unwrap();
        let last = m.layers.last_mut().unwrap();
        last.bias[2] = 2.0 * last.bias[2] + 1.0;
        let after = m.forward(&x).unwrap();
        for p in 0..25 {
            assert!(after.at(2, p) > before.at(2, p));
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut g = rng::seeded(4);
        let m = SegModel::new(3, &ModelConfig::default(), 5, &mut g);
        let p = m.forward(&random_map(3, 7, 9, 5)).unwrap();
        for px in 0..p.hw() {
            let s: f64 = (0..5).map(|c| p.at(c, px)).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let m = SegModel::zeros(3, &ModelConfig::default(), 5);
        assert!(m.forward(&random_map(2, 3, 3, 0)).is_err());
    }

    #[test]
    fn ce_uniform_is_ln_k() {
        let p = softmax(&FeatureMap::zeros(4, 2, 3));
        let targets = [
            ClassId(0),
            ClassId(1),
            ClassId(2),
            ClassId(3),
            ClassId(1),
            ClassId::IGNORED,
        ];
        let (l, _) = ce_loss(&p, &targets);
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_perfect_is_zero_and_all_ignored_is_zero() {
        let mut p = FeatureMap::zeros(2, 1, 2);
        p.data = alloc::vec![1.0, 0.0, 0.0, 1.0];
        let (l, _) = ce_loss(&p, &[ClassId(0), ClassId(1)]);
        assert_eq!(l, 0.0);
        let (l, g) = ce_loss(&p, &[ClassId::IGNORED; 2]);
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mt_examples() {
        let p = softmax(&random_map(3, 2, 2, 8));
        let (l, g) = mt_loss(&p, &p, &[true; 4]);
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));

        let mut onehot = FeatureMap::zeros(2, 1, 1);
        onehot.data = alloc::vec![1.0, 0.0];
        let mut uni = FeatureMap::zeros(2, 1, 1);
        uni.data = alloc::vec![0.5, 0.5];
        let (l, _) = mt_loss(&onehot, &uni, &[true]);
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ema_examples() {
        let cfg = ModelConfig {
            channels: alloc::vec![2],
        };
        let mut g = rng::seeded(1);
        let student = SegModel::new(3, &cfg, 2, &mut g);
        let mut teacher = SegModel::new(3, &cfg, 2, &mut g);
        ema_update(&mut teacher, &student, 0.0);
        assert_eq!(teacher, student);

        let mut t = SegModel::zeros(3, &cfg, 2);
        let mut s = SegModel::zeros(3, &cfg, 2);
        s.params_mut().for_each(|v| *v = 1.0);
        ema_update(&mut t, &s, 0.99);
        assert!(t.params().all(|&v| (v - 0.01).abs() < 1e-15));
    }

    #[test]
    fn flat_round_trip() {
        let mut g = rng::seeded(6);
        let m = SegModel::new(3, &ModelConfig::default(), 5, &mut g);
        let mut z = SegModel::zeros(3, &ModelConfig::default(), 5);
        z.load_flat(&m.flatten()).unwrap();
        assert_eq!(z, m);
        assert!(z.load_flat(&[0.0]).is_err());
    }
}
