//! Two-stage distillation on the synthetic dataset against a plain student
//! with the same step budget, over a few seeds.
//!
//! `cargo run --release --example smoke -- [alpha] [beta] [steps] [seeds] [first_seed]`
//!
//! Set `DFMSD_TEACHER_CACHE` to a directory to keep pretrained teachers
//! between runs.

use std::time::Instant;

use dfmsd::checkpoint::save_detector;
use dfmsd::data::synthetic_splits;
use dfmsd::eval::evaluate_detector;
use dfmsd::metrics::records;
use dfmsd::sal::{run_schedule, TeacherRegistry};
use dfmsd::DistillConfig;

fn main() -> dfmsd::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("number")).collect();
    let mut cfg = DistillConfig::default();
    cfg.alpha = args.first().copied().unwrap_or(cfg.alpha);
    cfg.beta = args.get(1).copied().unwrap_or(cfg.beta);
    let steps = args.get(2).map(|&s| s as usize).unwrap_or(200);
    let seeds = args.get(3).map(|&s| s as u64).unwrap_or(3);
    let first = args.get(4).map(|&s| s as u64).unwrap_or(0);
    for s in &mut cfg.stages {
        s.steps = steps;
    }

    let t0 = Instant::now();
    let (train, eval) = synthetic_splits(&cfg.data)?;
    if let Ok(dir) = std::env::var("DFMSD_TEACHER_CACHE") {
        let dir = std::path::PathBuf::from(dir);
        let paths: Vec<_> = cfg.teachers.iter().map(|t| dir.join(format!("{}.ckpt", t.id))).collect();
        if !paths.iter().all(|p| p.exists()) {
            std::fs::create_dir_all(&dir).map_err(|e| dfmsd::Error::io(&dir, e))?;
            let reg = TeacherRegistry::from_config(&cfg, &train)?;
            for (t, p) in cfg.teachers.iter().zip(&paths) {
                save_detector(p, &reg.get(&t.id)?.detector)?;
            }
        }
        for (t, p) in cfg.teachers.iter_mut().zip(paths) {
            t.checkpoint = Some(p);
        }
    }
    let registry = TeacherRegistry::from_config(&cfg, &train)?;
    println!("teachers ready in {:.1?}", t0.elapsed());
    for id in registry.ids() {
        let r = evaluate_detector(&registry.get(id)?.detector, &eval)?;
        println!("teacher {id}: ap50 {:.4} mar {:.4}", r.ap50, r.mar);
    }

    let (mut distilled, mut plain) = (0.0, 0.0);
    for seed in first..first + seeds {
        let t = Instant::now();
        let run = DistillConfig { seed, ..cfg.clone() };
        let out = run_schedule(&run, &registry, &train)?;
        let recs: Vec<_> = records(&out.log).collect();
        let first = recs.first().map_or(0.0, |r| r.loss.total);
        let last10: f64 = recs.iter().rev().take(10).map(|r| r.loss.total).sum::<f64>() / 10.0;
        let d = evaluate_detector(&out.student, &eval)?;
        println!(
            "seed {seed}: distilled ap50 {:.4} (loss {first:.4} -> {last10:.4}, recon {:.4} sfa {:.4} me {:.4}) {:.1?}",
            d.ap50,
            recs.last().unwrap().loss.recon,
            recs.last().unwrap().loss.sfa,
            recs.last().unwrap().loss.me,
            t.elapsed()
        );
        let base = run_schedule(&DistillConfig { alpha: 0.0, ..run }, &registry, &train)?;
        let b = evaluate_detector(&base.student, &eval)?;
        println!("seed {seed}: baseline ap50 {:.4}", b.ap50);
        distilled += d.ap50;
        plain += b.ap50;
    }
    println!(
        "mean ap50: distilled {:.4} baseline {:.4} (total {:.1?})",
        distilled / seeds as f64,
        plain / seeds as f64,
        t0.elapsed()
    );
    Ok(())
}
