//! The subcommands proper. Every command is deterministic in its inputs and
//! seed and overwrites its own artifacts, so rerunning into the same
//! directory reproduces it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dfmsd::checkpoint::{load_detector, save_detector};
use dfmsd::data::{synthetic_splits, DetectionSample};
use dfmsd::eval::{evaluate_detector, ApResult};
use dfmsd::freq::{apply_gaussian_noise, apply_random_crop, image_spectrum, Spectrum};
use dfmsd::metrics::{records, render_log, LogLine, MetricsRecord};
use dfmsd::sal::{TeacherRegistry, TrainState, Trainer};
use dfmsd::{load_config, DistillConfig, Error, Result, StageSpec};

use crate::io::{ensure_dir, export_dataset, load_coco_samples, load_image, save_gray, save_image, write_text};
use crate::plot::save_loss_curve;

/// Shared flags of the training-type commands.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Defaults apply when absent.
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// Overrides every stage's step count.
    pub steps: Option<usize>,
    /// Overrides every teacher's pretraining step count.
    pub pretrain_steps: Option<usize>,
}

impl RunOptions {
    pub fn config(&self) -> Result<DistillConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => DistillConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.steps {
            cfg.stages.iter_mut().for_each(|s| s.steps = n);
        }
        if let Some(n) = self.pretrain_steps {
            cfg.teachers.iter_mut().for_each(|t| t.pretrain_steps = n);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training and evaluation samples. An annotation document serves as both.
pub fn load_splits(cfg: &DistillConfig) -> Result<(Vec<DetectionSample>, Vec<DetectionSample>)> {
    match &cfg.data.annotations {
        Some(path) => {
            let samples = load_coco_samples(path, cfg.data.image_size)?;
            if samples.is_empty() {
                return Err(Error::InvalidArgument(format!("no samples in {}", path.display())));
            }
            Ok((samples.clone(), samples))
        }
        None => synthetic_splits(&cfg.data),
    }
}

fn teachers(cfg: &DistillConfig, train: &[DetectionSample], out: &Path) -> Result<(TeacherRegistry, Vec<PathBuf>)> {
    let registry = TeacherRegistry::from_config(cfg, train)?;
    let mut written = Vec::new();
    for t in &cfg.teachers {
        let p = out.join(format!("teacher_{}.ckpt", t.id));
        save_detector(&p, &registry.get(&t.id)?.detector)?;
        written.push(p);
    }
    Ok((registry, written))
}

/// Runs the schedule, writing `metrics.log` under `dir` even when training
/// diverges part-way.
fn train_into(
    cfg: &DistillConfig,
    registry: &TeacherRegistry,
    train: &[DetectionSample],
    dir: &Path,
) -> Result<(TrainState, Vec<LogLine>, PathBuf)> {
    ensure_dir(dir)?;
    let trainer = Trainer::new(cfg, registry, train)?;
    let mut log = Vec::new();
    let result = trainer.run(TrainState::new(cfg)?, None, &mut |l| {
        log::debug!("{l}");
        log.push(l.clone());
    });
    let log_path = dir.join("metrics.log");
    write_text(&log_path, &render_log(&log))?;
    Ok((result?, log, log_path))
}

fn ap_line(r: &ApResult) -> String {
    format!("ap50={} mar={}", r.ap50, r.mar)
}

/// `train`: teachers, distillation, final checkpoint, metrics log and loss
/// curve.
pub fn cmd_train(o: &RunOptions) -> Result<Vec<PathBuf>> {
    let cfg = o.config()?;
    ensure_dir(&o.out)?;
    let (train, eval) = load_splits(&cfg)?;
    let (registry, mut written) = teachers(&cfg, &train, &o.out)?;

    let (state, log, log_path) = train_into(&cfg, &registry, &train, &o.out)?;
    written.push(log_path);
    let recs: Vec<MetricsRecord> = records(&log).cloned().collect();
    let plot = o.out.join("loss.png");
    save_loss_curve(&plot, &recs)?;
    written.push(plot);

    let student = dfmsd::zoo::TinyDetector::from_params(&cfg.student, state.student.clone())?;
    let ckpt = o.out.join("student.ckpt");
    save_detector(&ckpt, &student)?;
    let state_path = o.out.join("state.ckpt");
    state.save(&state_path)?;
    let cfg_path = o.out.join("config.toml");
    write_text(&cfg_path, &cfg.to_toml_string())?;

    let r = evaluate_detector(&student, &eval)?;
    println!("{}", ap_line(&r));
    let eval_path = o.out.join("eval.txt");
    write_text(&eval_path, &format!("{}\n", ap_line(&r)))?;
    written.extend([ckpt, state_path, cfg_path, eval_path]);
    Ok(written)
}

/// `eval`: AP@0.5 and recall of a detector checkpoint. `data` is an
/// annotation document or a directory holding one; without it the held-out
/// synthetic split of `config` is used.
pub fn cmd_eval(
    checkpoint: &Path,
    data: Option<&Path>,
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<(ApResult, Vec<PathBuf>)> {
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => DistillConfig::default(),
    };
    let det = load_detector(checkpoint)?;
    let samples = match data {
        Some(d) => load_coco_samples(d, cfg.data.image_size)?,
        None if cfg.data.eval_images == 0 => Vec::new(),
        None => synthetic_splits(&cfg.data)?.1,
    };
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to evaluate".into()));
    }
    let r = evaluate_detector(&det, &samples)?;
    println!("{}", ap_line(&r));
    let mut written = Vec::new();
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let p = dir.join("eval.txt");
        write_text(&p, &format!("{}\n", ap_line(&r)))?;
        written.push(p);
    }
    Ok((r, written))
}

/// The four panels: original, mirrored, noised, cropped-and-resized.
fn variants(img: &dfmsd::image::Image, cfg: &DistillConfig, seed: u64) -> Result<Vec<(&'static str, dfmsd::image::Image)>> {
    Ok(vec![
        ("original", img.clone()),
        ("flipped", img.flip_horizontal()),
        ("noised", apply_gaussian_noise(img, cfg.sigma, 1.0, seed)),
        (
            "cropped",
            apply_random_crop(img, cfg.augment.crop_min_keep, cfg.augment.crop_max_keep, seed)?,
        ),
    ])
}

fn band_row(name: &str, s: &Spectrum) -> String {
    let f = s.bands.fractions();
    format!("{name}\t{:.9}\t{:.9}\t{:.9}\t{:e}\n", f.low, f.mid, f.high, s.total_energy)
}

/// `spectrum`: band-energy table and centred log-magnitude images for the
/// four variants of one image.
pub fn cmd_spectrum(image: &Path, out: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let img = load_image(image, None)?;
    ensure_dir(out)?;
    let cfg = DistillConfig::default();
    let mut table = String::from("variant\tlow\tmid\thigh\ttotal_energy\n");
    let mut written = Vec::new();
    for (name, v) in variants(&img, &cfg, seed)? {
        let s = image_spectrum(&v)?;
        table.push_str(&band_row(name, &s));
        let p = out.join(format!("spectrum_{name}.png"));
        let scale = (256 / s.width.max(s.height)).max(1) as u32;
        save_gray(&p, &s.log_magnitude(), s.height, s.width, scale)?;
        written.push(p);
    }
    let p = out.join("bands.tsv");
    write_text(&p, &table)?;
    written.push(p);
    Ok(written)
}

/// `augment-preview`: the noised and cropped inputs masking enhancement
/// would feed the networks.
pub fn cmd_augment_preview(image: &Path, out: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let img = load_image(image, None)?;
    ensure_dir(out)?;
    let cfg = DistillConfig::default();
    let mut written = Vec::new();
    for (name, v) in variants(&img, &cfg, seed)?.into_iter().skip(2) {
        let p = out.join(format!("{name}.png"));
        save_image(&p, &v)?;
        written.push(p);
    }
    Ok(written)
}

/// `export`: the synthetic train and eval splits as annotated image folders.
pub fn cmd_export(o: &RunOptions) -> Result<Vec<PathBuf>> {
    let cfg = o.config()?;
    let (train, eval) = synthetic_splits(&cfg.data)?;
    let mut written = export_dataset(&train, &o.out.join("train"))?;
    written.extend(export_dataset(&eval, &o.out.join("eval"))?);
    Ok(written)
}

/// One configuration of the module toggle matrix.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub sal: bool,
    pub me: bool,
    pub sfa: bool,
    pub config: DistillConfig,
}

impl AblationRow {
    fn slug(&self) -> String {
        self.name.to_lowercase().replace('+', "_")
    }
}

fn toggled(cfg: &DistillConfig, sal: bool, me: bool, sfa: bool) -> DistillConfig {
    let budget: usize = cfg.stages.iter().map(|s| s.steps).sum();
    let strongest = cfg.stages.last().expect("checked non-empty").teacher_id.clone();
    let mut stages: Vec<StageSpec> = if sal {
        cfg.stages.clone()
    } else {
        vec![StageSpec {
            teacher_id: strongest,
            enable_masking_enhancement: false,
            enable_semantic_alignment: false,
            steps: budget,
        }]
    };
    let last = stages.len() - 1;
    for (i, s) in stages.iter_mut().enumerate() {
        s.enable_masking_enhancement = me && i == last;
        s.enable_semantic_alignment = sfa;
    }
    DistillConfig {
        stages,
        ..cfg.clone()
    }
}

/// The seven non-empty SAL/ME/SFA combinations, in table order, and the
/// plain student they are compared against. Without SAL the student learns
/// from the strongest teacher alone for the whole step budget; ME acts on
/// the last stage, SFA on every stage.
pub fn ablation_plan(cfg: &DistillConfig) -> Result<(Vec<AblationRow>, DistillConfig)> {
    if cfg.stages.len() < 2 {
        return Err(Error::InvalidArgument(
            "ablation needs a schedule of at least two stages".into(),
        ));
    }
    let combos = [
        (true, false, false),
        (false, true, false),
        (false, false, true),
        (true, true, false),
        (true, false, true),
        (false, true, true),
        (true, true, true),
    ];
    let rows = combos
        .iter()
        .map(|&(sal, me, sfa)| {
            let name = [("SAL", sal), ("ME", me), ("SFA", sfa)]
                .iter()
                .filter(|(_, on)| *on)
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join("+");
            AblationRow {
                name,
                sal,
                me,
                sfa,
                config: toggled(cfg, sal, me, sfa),
            }
        })
        .collect();
    let baseline = DistillConfig {
        alpha: 0.0,
        ..toggled(cfg, false, false, false)
    };
    Ok((rows, baseline))
}

fn mark(on: bool) -> &'static str {
    if on {
        "x"
    } else {
        "-"
    }
}

/// `ablate`: trains every row of the toggle matrix plus the plain student
/// and tabulates final AP.
pub fn cmd_ablate(o: &RunOptions) -> Result<Vec<PathBuf>> {
    let cfg = o.config()?;
    let (rows, baseline) = ablation_plan(&cfg)?;
    ensure_dir(&o.out)?;
    let (train, eval) = load_splits(&cfg)?;
    let (registry, mut written) = teachers(&cfg, &train, &o.out)?;

    let header = "row\tSAL\tME\tSFA\tap50\tmar\tfinal_total\n";
    let mut table = String::from(header);
    for row in &rows {
        log::info!("ablation row {}", row.name);
        let (state, log, log_path) = train_into(&row.config, &registry, &train, &o.out.join(row.slug()))?;
        written.push(log_path);
        let student = dfmsd::zoo::TinyDetector::from_params(&row.config.student, state.student)?;
        let r = evaluate_detector(&student, &eval)?;
        let last = records(&log).last().map_or(f64::NAN, |r| r.loss.total);
        writeln!(
            table,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            row.name,
            mark(row.sal),
            mark(row.me),
            mark(row.sfa),
            r.ap50,
            r.mar,
            last
        )
        .expect("string write");
    }
    let p = o.out.join("ablation.tsv");
    write_text(&p, &table)?;
    log::info!("ablation results:\n{table}");
    written.push(p);

    let (state, log, log_path) = train_into(&baseline, &registry, &train, &o.out.join("baseline"))?;
    written.push(log_path);
    let student = dfmsd::zoo::TinyDetector::from_params(&baseline.student, state.student)?;
    let r = evaluate_detector(&student, &eval)?;
    let last = records(&log).last().map_or(f64::NAN, |r| r.loss.total);
    let p = o.out.join("ablation_baseline.tsv");
    write_text(
        &p,
        &format!("{header}none\t-\t-\t-\t{:.6}\t{:.6}\t{last}\n", r.ap50, r.mar),
    )?;
    written.push(p);
    Ok(written)
}
