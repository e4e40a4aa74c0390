//! Subcommand implementations. Each writes into an output directory and
//! finishes with `manifest.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use lasermix_core::experiment::{self, Preset, Splits};
use lasermix_core::partition::{self, assign_areas, PartitionKind, PartitionSpec};
use lasermix_core::prior::{accumulate_histogram, partition_entropy_report, PointModel};
use lasermix_core::range::range_project;
use lasermix_core::ssl::{confusion, IouReport, RangeSegmenter, TrainState};
use lasermix_core::synth;
use lasermix_core::voxel::cylindrical_voxelize;
use lasermix_core::{ClassId, LabelMap, PointCloud};
use serde_json::json;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::images;
use crate::io;
use crate::manifest::write_manifest;

/// Everything a command needs besides its own arguments.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    pub fn label_map(&self) -> anyhow::Result<LabelMap> {
        match &self.cfg.data.label_map {
            Some(p) => io::load_label_map(p),
            None => Ok(LabelMap::synthetic()),
        }
    }

    fn prepare(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }

    fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    fn finish(&self, command: &str) -> anyhow::Result<()> {
        write_manifest(&self.out, command, &self.cfg)?;
        Ok(())
    }

    fn read_scan(&self, scan: &Path, labels: Option<&Path>) -> anyhow::Result<PointCloud> {
        match labels {
            Some(l) => io::read_labeled_scan(scan, l, self.cfg.data.stride, &self.label_map()?),
            None => io::read_scan_file(scan, self.cfg.data.stride),
        }
    }
}

/// Training, unlabeled and evaluation scans.
pub struct Data {
    pub labeled: Vec<PointCloud>,
    pub unlabeled: Vec<PointCloud>,
    pub eval: Vec<PointCloud>,
}

impl Data {
    pub fn splits(&self) -> Splits<'_> {
        Splits {
            labeled: &self.labeled,
            unlabeled: &self.unlabeled,
            eval: &self.eval,
        }
    }
}

fn sorted_bins(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    v.sort();
    Ok(v)
}

fn read_split(
    dir: &Path,
    labeled: bool,
    stride: usize,
    map: &LabelMap,
) -> anyhow::Result<Vec<PointCloud>> {
    sorted_bins(dir)?
        .iter()
        .map(|p| {
            if labeled {
                io::read_labeled_scan(p, &p.with_extension("label"), stride, map)
            } else {
                io::read_scan_file(p, stride)
            }
        })
        .collect()
}

/// The dataset at `data.dir`, or the synthetic one for `seed`.
pub fn load_data(cfg: &RunConfig, seed: u64) -> anyhow::Result<Data> {
    match &cfg.data.dir {
        Some(dir) => {
            let map = match &cfg.data.label_map {
                Some(p) => io::load_label_map(p)?,
                None if dir.join("label_map.json").exists() => {
                    io::load_label_map(&dir.join("label_map.json"))?
                }
                None => LabelMap::synthetic(),
            };
            let stride = cfg.data.stride;
            let data = Data {
                labeled: read_split(&dir.join("labeled"), true, stride, &map)?,
                unlabeled: read_split(&dir.join("unlabeled"), false, stride, &map)?,
                eval: read_split(&dir.join("eval"), true, stride, &map)?,
            };
            if data.labeled.is_empty() {
                bail!("no labeled scans under {}", dir.display());
            }
            Ok(data)
        }
        None => {
            let ds = cfg.bench().dataset(seed)?;
            Ok(Data {
                labeled: ds.labeled,
                unlabeled: ds.unlabeled,
                eval: ds.eval,
            })
        }
    }
}

fn class_names(map: &LabelMap, k: usize) -> Vec<String> {
    (0..k)
        .map(|c| map.name_of(ClassId(c as u16)).to_owned())
        .collect()
}

pub fn iou_json(r: &IouReport, names: &[String]) -> serde_json::Value {
    let per: serde_json::Map<_, _> = names
        .iter()
        .zip(&r.per_class)
        .map(|(n, v)| (n.clone(), json!(v)))
        .collect();
    json!({ "per_class": per, "miou": r.miou })
}

pub fn stats(ctx: &Ctx, scan: &Path, labels: Option<&Path>) -> anyhow::Result<serde_json::Value> {
    ctx.prepare()?;
    let cloud = ctx.read_scan(scan, labels)?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let (mut r_lo, mut r_hi, mut i_lo, mut i_hi) =
        (f64::INFINITY, 0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..cloud.len() {
        let p = cloud.point(i);
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
        let r = partition::radius(p);
        r_lo = r_lo.min(r);
        r_hi = r_hi.max(r);
        let inc = partition::inclination(p);
        i_lo = i_lo.min(inc);
        i_hi = i_hi.max(inc);
    }
    let spec = ctx.cfg.partition_spec();
    let areas = assign_areas(&cloud, &spec)?;
    let mut v = json!({
        "points": cloud.len(),
        "bbox_min": if cloud.is_empty() { json!(null) } else { json!(lo) },
        "bbox_max": if cloud.is_empty() { json!(null) } else { json!(hi) },
        "radius": if cloud.is_empty() { json!(null) } else { json!([r_lo, r_hi]) },
        "inclination_deg": if cloud.is_empty() { json!(null) } else { json!([i_lo, i_hi]) },
        "partition": { "kind": spec.kind.name(), "m": spec.m, "area_counts": areas.counts() },
    });
    if let Some(l) = cloud.labels() {
        let map = ctx.label_map()?;
        let mut counts = serde_json::Map::new();
        for c in 0..map.num_classes() {
            let id = ClassId(c as u16);
            counts.insert(
                map.name_of(id).to_owned(),
                json!(l.iter().filter(|&&x| x == id).count()),
            );
        }
        counts.insert(
            "ignored".into(),
            json!(l.iter().filter(|x| x.is_ignored()).count()),
        );
        v["class_counts"] = serde_json::Value::Object(counts);
    }
    ctx.write("stats.json", serde_json::to_vec_pretty(&v)?)?;
    ctx.finish("stats")?;
    Ok(v)
}

/// Labeled scans for entropy statistics: every synthetic training scan (with
/// ground truth), or the labeled and eval splits of an on-disk dataset.
fn entropy_scans(cfg: &RunConfig) -> anyhow::Result<Vec<PointCloud>> {
    let mut scans = match &cfg.data.dir {
        Some(_) => {
            let d = load_data(cfg, cfg.seed)?;
            d.labeled.into_iter().chain(d.eval).collect()
        }
        None => (0..cfg.synth.n_train)
            .map(|i| {
                Ok(synth::generate_scan(
                    &cfg.synth.scene,
                    &cfg.sensor,
                    &cfg.synth.sim,
                    cfg.seed,
                    i,
                )?
                .1)
            })
            .collect::<anyhow::Result<Vec<_>>>()?,
    };
    if cfg.entropy.n_scans > 0 {
        scans.truncate(cfg.entropy.n_scans);
    }
    Ok(scans)
}

pub fn entropy_report(ctx: &Ctx) -> anyhow::Result<String> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let scans = entropy_scans(cfg)?;
    let k = ctx.label_map()?.num_classes();
    let specs: Vec<PartitionSpec> = PartitionKind::ALL
        .iter()
        .flat_map(|&kind| cfg.entropy.m_values.iter().map(move |&m| (kind, m)))
        .map(|(kind, m)| PartitionSpec::for_sensor(kind, &cfg.sensor, m, cfg.partition.seed))
        .collect();
    let rows = partition_entropy_report(&scans, &specs, k)?;
    let mut csv = String::from("partition_kind,m,H_conditional_nats,H_marginal_nats\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.kind.name(),
            r.m,
            r.h_conditional,
            r.h_marginal
        )?;
    }
    ctx.write("entropy.csv", &csv)?;
    for kind in PartitionKind::ALL {
        let spec =
            PartitionSpec::for_sensor(kind, &cfg.sensor, cfg.partition.m, cfg.partition.seed);
        let hist = accumulate_histogram(&scans, &spec, k)?;
        ctx.write(
            &format!("heatmap_{}.ppm", kind.name()),
            images::heatmap(&hist, 16).encode(),
        )?;
    }
    ctx.finish("entropy-report")?;
    Ok(csv)
}

fn provenance_csv(prov: &[lasermix_core::mix::Provenance]) -> String {
    let mut s = String::from("index,source,original_index,area\n");
    for (i, p) in prov.iter().enumerate() {
        let src = match p.source {
            lasermix_core::mix::Source::First => "a",
            lasermix_core::mix::Source::Second => "b",
        };
        let _ = writeln!(s, "{i},{src},{},{}", p.index, p.area);
    }
    s
}

pub fn mix(
    ctx: &Ctx,
    a: &Path,
    b: &Path,
    labels_a: Option<&Path>,
    labels_b: Option<&Path>,
) -> anyhow::Result<()> {
    ctx.prepare()?;
    let x1 = ctx.read_scan(a, labels_a)?;
    let x2 = ctx.read_scan(b, labels_b)?;
    let spec = ctx.cfg.partition_spec();
    let r = lasermix_core::laser_mix(&x1, &x2, &spec, ctx.cfg.partition.order)?;
    let map = ctx.label_map()?;
    io::write_scan_files(&ctx.out, "mixed_a", &r.mixed_a, &map)?;
    io::write_scan_files(&ctx.out, "mixed_b", &r.mixed_b, &map)?;
    ctx.write("provenance_a.csv", provenance_csv(&r.provenance_a))?;
    ctx.write("provenance_b.csv", provenance_csv(&r.provenance_b))?;
    ctx.finish("mix")
}

pub fn project(ctx: &Ctx, scan: &Path, labels: Option<&Path>) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cloud = ctx.read_scan(scan, labels)?;
    let s = &ctx.cfg.sensor;
    let (img, st) = range_project(&cloud, s, s.num_beams, s.width)?;
    ctx.write("range.pgm", images::range_gray(&img, s.max_range).encode())?;
    if cloud.is_labeled() {
        ctx.write("labels.ppm", images::label_rgb(&img).encode())?;
    }
    let v = json!({ "h": img.h, "w": img.w, "points": cloud.len(), "occupied": st.occupied, "shadowed": st.shadowed, "dropped": st.dropped });
    ctx.write("projection.json", serde_json::to_vec_pretty(&v)?)?;
    ctx.finish("project")
}

pub fn voxelize(ctx: &Ctx, scan: &Path, labels: Option<&Path>) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cloud = ctx.read_scan(scan, labels)?;
    let grid = cylindrical_voxelize(&cloud, ctx.cfg.voxel.resolution, ctx.cfg.voxel.bounds)?;
    let mut csv = String::from("i_rho,i_alpha,i_z,count,label\n");
    for (r, a, z, l, c) in grid.occupied() {
        let label = if l.is_ignored() { -1 } else { l.0 as i64 };
        writeln!(csv, "{r},{a},{z},{c},{label}")?;
    }
    ctx.write("voxels.csv", csv)?;
    ctx.finish("voxelize")
}

pub fn synth(ctx: &Ctx) -> anyhow::Result<()> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let spec = cfg.bench().dataset_spec(cfg.seed);
    let ds = synth::make_dataset(&spec, &cfg.synth.scene, &cfg.sensor, &cfg.synth.sim)?;
    let map = LabelMap::synthetic();
    for (c, id) in ds.labeled.iter().zip(&ds.labeled_ids) {
        io::write_scan_files(&ctx.out.join("labeled"), &format!("{id:06}"), c, &map)?;
    }
    for (c, id) in ds.unlabeled.iter().zip(&ds.unlabeled_ids) {
        io::write_scan_files(&ctx.out.join("unlabeled"), &format!("{id:06}"), c, &map)?;
    }
    // Kept apart from the scans so training never sees them.
    for (l, id) in ds
        .unlabeled_truth
        .reveal_for_evaluation()
        .iter()
        .zip(&ds.unlabeled_ids)
    {
        ctx.write(
            &format!("unlabeled_truth/{id:06}.label"),
            io::write_labels_bin(l, &map),
        )?;
    }
    for (i, c) in ds.eval.iter().enumerate() {
        io::write_scan_files(&ctx.out.join("eval"), &format!("{i:06}"), c, &map)?;
    }
    ctx.write("label_map.json", serde_json::to_vec_pretty(&map)?)?;
    let split = json!({ "labeled_ids": ds.labeled_ids, "unlabeled_ids": ds.unlabeled_ids, "n_eval": ds.eval.len() });
    ctx.write("split.json", serde_json::to_vec_pretty(&split)?)?;
    ctx.finish("synth")
}

fn eval_names(ctx: &Ctx, k: usize) -> anyhow::Result<Vec<String>> {
    Ok(class_names(&ctx.label_map()?, k))
}

/// Trains, writing `metrics.csv`, checkpoints and `iou.json`. With
/// `resume`, continues from a checkpoint; metrics then cover only the steps
/// run here.
pub fn train(ctx: &Ctx, resume: Option<&Path>) -> anyhow::Result<TrainState> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let bench = cfg.bench();
    let data = load_data(cfg, cfg.seed)?;
    let mut trainer = experiment::trainer(&bench, data.splits(), cfg.train.preset, cfg.seed)?;
    if let Some(path) = resume {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        trainer.state = checkpoint::decode(&bytes, &trainer.state.student, trainer.state.hyper)?;
        log::info!("resuming at step {}", trainer.state.step);
    }
    let names = eval_names(ctx, trainer.state.student.num_classes)?;
    let mut metrics = String::from("step,L_sup,L_mix,L_mt,L_total\n");
    let mut evals = String::from("step,teacher_miou,student_miou\n");
    let eval_row = |state: &TrainState, evals: &mut String| -> anyhow::Result<()> {
        let t = lasermix_core::ssl::evaluate(&state.teacher, &cfg.sensor, &data.eval)?;
        let s = lasermix_core::ssl::evaluate(&state.student, &cfg.sensor, &data.eval)?;
        writeln!(evals, "{},{},{}", state.step, t.miou, s.miou)?;
        Ok(())
    };
    while trainer.state.step < cfg.train.iterations {
        let l = trainer.step()?;
        let step = trainer.state.step;
        writeln!(metrics, "{step},{},{},{},{}", l.sup, l.mix, l.mt, l.total)?;
        if cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 {
            ctx.write(
                &format!("checkpoints/step_{step:08}.ckpt"),
                checkpoint::encode(&trainer.state),
            )?;
        }
        if cfg.train.eval_every > 0 && step % cfg.train.eval_every == 0 && !data.eval.is_empty() {
            eval_row(&trainer.state, &mut evals)?;
        }
        if step % 100 == 0 {
            log::info!("step {step}: total loss {:.4}", l.total);
        }
    }
    ctx.write("metrics.csv", &metrics)?;
    ctx.write("checkpoints/final.ckpt", checkpoint::encode(&trainer.state))?;
    if !data.eval.is_empty() {
        if cfg.train.eval_every > 0 {
            ctx.write("eval.csv", &evals)?;
        }
        write_iou(ctx, &trainer.state, &data.eval, &names)?;
    }
    ctx.finish("train")?;
    Ok(trainer.state)
}

fn write_iou(
    ctx: &Ctx,
    state: &TrainState,
    eval: &[PointCloud],
    names: &[String],
) -> anyhow::Result<serde_json::Value> {
    let s = &ctx.cfg.sensor;
    let t = confusion(&state.teacher, s, eval)?;
    let st = confusion(&state.student, s, eval)?;
    let v = json!({
        "step": state.step,
        "teacher": iou_json(&t.iou(), names),
        "student": iou_json(&st.iou(), names),
    });
    ctx.write("iou.json", serde_json::to_vec_pretty(&v)?)?;
    let k = state.teacher.num_classes;
    let mut csv = String::from("truth,prediction,count\n");
    for a in 0..k {
        for b in 0..k {
            writeln!(csv, "{},{},{}", names[a], names[b], t.get(a, b))?;
        }
    }
    ctx.write("confusion_teacher.csv", csv)?;
    Ok(v)
}

fn load_state(ctx: &Ctx, ckpt: &Path) -> anyhow::Result<TrainState> {
    let bench = ctx.cfg.bench();
    let template = bench.initial_model(ctx.cfg.seed);
    let bytes = fs::read(ckpt).with_context(|| format!("reading {}", ckpt.display()))?;
    checkpoint::decode(&bytes, &template, ctx.cfg.hyper)
}

pub fn eval(ctx: &Ctx, ckpt: &Path) -> anyhow::Result<serde_json::Value> {
    ctx.prepare()?;
    let state = load_state(ctx, ckpt)?;
    let data = load_data(&ctx.cfg, ctx.cfg.seed)?;
    let names = eval_names(ctx, state.teacher.num_classes)?;
    let v = write_iou(ctx, &state, &data.eval, &names)?;
    ctx.finish("eval")?;
    Ok(v)
}

/// Which scan an error map is drawn for.
pub enum ScanChoice<'a> {
    Eval(usize),
    File { scan: &'a Path, labels: &'a Path },
}

pub fn error_map(
    ctx: &Ctx,
    ckpt: &Path,
    choice: ScanChoice<'_>,
) -> anyhow::Result<serde_json::Value> {
    ctx.prepare()?;
    let state = load_state(ctx, ckpt)?;
    let cloud = match choice {
        ScanChoice::Eval(i) => {
            let mut data = load_data(&ctx.cfg, ctx.cfg.seed)?;
            if i >= data.eval.len() {
                bail!("eval index {i} out of range ({} scans)", data.eval.len());
            }
            data.eval.swap_remove(i)
        }
        ScanChoice::File { scan, labels } => ctx.read_scan(scan, Some(labels))?,
    };
    let s = &ctx.cfg.sensor;
    let seg = RangeSegmenter {
        model: &state.teacher,
        sensor: s,
    };
    let dist = seg.predict_points(&cloud)?;
    let k = seg.num_classes();
    let pred: Vec<ClassId> = dist
        .chunks_exact(k)
        .map(|row| {
            let best = (0..k).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            ClassId(best as u16)
        })
        .collect();
    let (img, _) = range_project(&cloud, s, s.num_beams, s.width)?;
    let (rv, counts) = images::range_error_map(&img, &cloud, &pred);
    let em = &ctx.cfg.error_map;
    let bev = images::bev_error_map(&cloud, &pred, em.bev_extent, em.bev_pixels);
    ctx.write("range_error.ppm", rv.encode())?;
    ctx.write("bev_error.ppm", bev.encode())?;
    let v = json!({
        "correct_points": counts.correct,
        "incorrect_points": counts.incorrect,
        "range_green_pixels": rv.count(images::GREEN),
        "range_red_pixels": rv.count(images::RED),
        "bev_green_pixels": bev.count(images::GREEN),
        "bev_red_pixels": bev.count(images::RED),
    });
    ctx.write("error_counts.json", serde_json::to_vec_pretty(&v)?)?;
    ctx.finish("error-map")?;
    Ok(v)
}

/// One line of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub group: &'static str,
    pub preset: Preset,
    pub param: &'static str,
    pub value: String,
    pub seed: u64,
    pub teacher_miou: f64,
    pub student_miou: f64,
}

/// The preset grid, then LaserMix sweeps over m, EMA decay and T.
pub fn ablate(ctx: &Ctx) -> anyhow::Result<Vec<AblationRow>> {
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let a = &cfg.ablate;
    let mut rows = Vec::new();
    for &seed in &a.seeds {
        let data = load_data(cfg, seed)?;
        let base = cfg.bench();
        let mut run = |group,
                       preset,
                       param,
                       value: String,
                       bench: &lasermix_core::experiment::BenchConfig|
         -> anyhow::Result<()> {
            let r = experiment::run_on(bench, data.splits(), preset, seed, |_, _| {})?;
            log::info!(
                "{group} {} {param}={value} seed {seed}: mIoU {:.2}",
                preset.name(),
                r.miou_percent()
            );
            rows.push(AblationRow {
                group,
                preset,
                param,
                value,
                seed,
                teacher_miou: r.teacher.miou,
                student_miou: r.student.miou,
            });
            Ok(())
        };
        for &p in &a.presets {
            run("preset", p, "-", "-".into(), &base)?;
        }
        for &m in &a.m_values {
            let mut b = base.clone();
            b.hyper.m_lo = m;
            b.hyper.m_hi = m;
            run("m", Preset::LaserMix, "m", m.to_string(), &b)?;
        }
        for &d in &a.ema_values {
            let mut b = base.clone();
            b.hyper.ema_decay = d;
            run(
                "ema_decay",
                Preset::LaserMix,
                "ema_decay",
                d.to_string(),
                &b,
            )?;
        }
        for &t in &a.t_values {
            let mut b = base.clone();
            b.hyper.threshold = t;
            run("T", Preset::LaserMix, "T", t.to_string(), &b)?;
        }
    }
    let mut csv = String::from("group,preset,param,value,seed,teacher_miou,student_miou\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.group,
            r.preset.name(),
            r.param,
            r.value,
            r.seed,
            r.teacher_miou,
            r.student_miou
        )?;
    }
    ctx.write("ablation.csv", &csv)?;
    let mut summary = String::from("group,preset,param,value,seeds,mean_teacher_miou\n");
    let mut seen: Vec<(&str, Preset, &str, &str)> = Vec::new();
    for r in &rows {
        let key = (r.group, r.preset, r.param, r.value.as_str());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let cell: Vec<f64> = rows
            .iter()
            .filter(|o| (o.group, o.preset, o.param, o.value.as_str()) == key)
            .map(|o| o.teacher_miou)
            .collect();
        writeln!(
            summary,
            "{},{},{},{},{},{}",
            r.group,
            r.preset.name(),
            r.param,
            r.value,
            cell.len(),
            experiment::mean(&cell)
        )?;
    }
    ctx.write("summary.csv", &summary)?;
    ctx.finish("ablate")?;
    Ok(rows)
}
