//! Training checkpoints.
//!
//! Layout (little-endian): magic `LMXCKPT\0`, `u32` format version, `u64`
//! step, `u32` layer count `L`, `L` triples of `u32` (in channels, out
//! channels, kernel size), `u64` parameter count `P`, then `P` student and
//! `P` teacher `f64`s in [`SegModel::flatten`] order.

use anyhow::{bail, ensure};
use lasermix_core::nn::SegModel;
use lasermix_core::ssl::{Hyperparams, TrainState};

pub const MAGIC: &[u8; 8] = b"LMXCKPT\0";
pub const VERSION: u32 = 1;

fn shapes(model: &SegModel) -> Vec<u32> {
    model
        .layers
        .iter()
        .flat_map(|l| [l.in_ch as u32, l.out_ch as u32, l.k as u32])
        .collect()
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> anyhow::Result<&'a [u8]> {
    ensure!(bytes.len() >= *at + n, "truncated checkpoint");
    let s = &bytes[*at..*at + n];
    *at += n;
    Ok(s)
}

pub fn encode(state: &TrainState) -> Vec<u8> {
    let s = state.student.flatten();
    let t = state.teacher.flatten();
    let mut out = Vec::with_capacity(64 + 16 * s.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(state.student.layers.len() as u32).to_le_bytes());
    for v in shapes(&state.student) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    for v in s.iter().chain(&t) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Restores weights into models shaped like `template`.
pub fn decode(bytes: &[u8], template: &SegModel, hyper: Hyperparams) -> anyhow::Result<TrainState> {
    ensure!(bytes.len() >= 8 && &bytes[..8] == MAGIC, "not a checkpoint");
    let mut at = 8;
    let u32_at = |at: &mut usize| -> anyhow::Result<u32> {
        Ok(u32::from_le_bytes(take(bytes, at, 4)?.try_into()?))
    };
    let version = u32_at(&mut at)?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version}");
    }
    let step = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into()?);
    let layers = u32_at(&mut at)? as usize;
    ensure!(layers < 1 << 16, "implausible layer count {layers}");
    let shape: Vec<u32> = (0..3 * layers)
        .map(|_| u32_at(&mut at))
        .collect::<anyhow::Result<_>>()?;
    ensure!(
        shape == shapes(template),
        "checkpoint layers {shape:?} do not match the configured model {:?}",
        shapes(template)
    );
    let p = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into()?) as usize;
    ensure!(
        p == template.param_count(),
        "checkpoint has {p} parameters, model expects {}",
        template.param_count()
    );
    ensure!(
        bytes.len() == at + 16 * p,
        "checkpoint length does not match its header"
    );
    let vals: Vec<f64> = bytes[at..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut student = template.clone();
    student.load_flat(&vals[..p])?;
    let mut teacher = template.clone();
    teacher.load_flat(&vals[p..])?;
    Ok(TrainState {
        student,
        teacher,
        step,
        hyper,
    })
}
