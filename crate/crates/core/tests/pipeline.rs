use dfmsd::checkpoint::{load_detector, save_detector};
use dfmsd::config::TeacherConfig;
use dfmsd::data::{export_coco, parse_coco, synth_dataset};
use dfmsd::eval::evaluate_detector;
use dfmsd::metrics::{parse_log, records, render_log};
use dfmsd::sal::{run_schedule, TeacherRegistry, TrainState};
use dfmsd::zoo::{HeadStyle, TinyDetectorSpec};
use dfmsd::{DistillConfig, StageSpec};

fn spec(width: f64, head: HeadStyle) -> TinyDetectorSpec {
    TinyDetectorSpec {
        width_multiplier: width,
        depth: vec![0, 0, 0],
        fpn_levels: 2,
        num_classes: 3,
        head,
    }
}

fn config() -> DistillConfig {
    let teacher = |id: &str, rank, w, head| TeacherConfig {
        id: id.into(),
        strength_rank: rank,
        detector: spec(w, head),
        checkpoint: None,
        pretrain_steps: 4,
    };
    DistillConfig {
        alpha: 0.5,
        beta: 0.5,
        batch_size: 3,
        student: spec(0.25, HeadStyle::AnchorFree),
        teachers: vec![
            teacher("a", 1, 0.375, HeadStyle::AnchorBased),
            teacher("b", 2, 0.5, HeadStyle::AnchorFree),
        ],
        stages: vec![
            StageSpec {
                teacher_id: "a".into(),
                enable_masking_enhancement: true,
                enable_semantic_alignment: false,
                steps: 3,
            },
            StageSpec {
                teacher_id: "b".into(),
                enable_masking_enhancement: true,
                enable_semantic_alignment: true,
                steps: 3,
            },
        ],
        ..Default::default()
    }
}

#[test]
fn schedule_checkpoint_and_eval() {
    let cfg = config();
    let data = synth_dataset(6, 32, 0.5, 4).unwrap();
    let reg = TeacherRegistry::from_config(&cfg, &data).unwrap();
    let out = run_schedule(&cfg, &reg, &data).unwrap();

    let text = render_log(&out.log);
    assert_eq!(parse_log(&text).unwrap(), out.log);
    let recs: Vec<_> = records(&out.log).collect();
    assert_eq!(recs.len(), 6);
    assert!(recs.iter().all(|r| r.total_consistent(cfg.alpha) && r.loss.me > 0.0));
    assert!(recs.iter().all(|r| (r.loss.sfa > 0.0) == (r.stage == 1)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_detector(&path, &out.student).unwrap();
    let back = load_detector(&path).unwrap();
    let (a, b) = (evaluate_detector(&out.student, &data).unwrap(), evaluate_detector(&back, &data).unwrap());
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.ap50) && (0.0..=1.0).contains(&a.mar));

    let state_path = dir.path().join("state.ckpt");
    out.state.save(&state_path).unwrap();
    assert_eq!(TrainState::load(&state_path).unwrap(), out.state);
    // a state is not a detector
    assert!(load_detector(&state_path).is_err());
}

#[test]
fn teacher_checkpoints_are_checked_against_the_config() {
    let mut cfg = config();
    let data = synth_dataset(4, 32, 0.5, 5).unwrap();
    let reg = TeacherRegistry::from_config(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_detector(&path, &reg.get("a").unwrap().detector).unwrap();

    cfg.teachers[0].checkpoint = Some(path.clone());
    let loaded = TeacherRegistry::from_config(&cfg, &data).unwrap();
    assert_eq!(loaded.get("a").unwrap().detector.params, reg.get("a").unwrap().detector.params);

    cfg.teachers[1].checkpoint = Some(path);
    assert!(TeacherRegistry::from_config(&cfg, &data).is_err());
}

#[test]
fn coco_export_parses_back() {
    let samples = synth_dataset(5, 64, 0.5, 6).unwrap();
    let names: Vec<String> = (0..5).map(|i| format!("{i}.png")).collect();
    let doc = export_coco(&samples, &names);
    let text = serde_json::to_string(&doc).unwrap();
    let ds = parse_coco(&text).unwrap();
    assert_eq!(ds.images.len(), 5);
    assert_eq!(ds.skipped_boxes, 0);
    for (s, a) in samples.iter().zip(&ds.images) {
        assert_eq!(s.ground_truth.len(), a.ground_truth.len());
        for i in 0..s.ground_truth.len() {
            assert_eq!(s.ground_truth.label(i), a.ground_truth.label(i));
            let (p, q) = (s.ground_truth.boxes()[i], a.ground_truth.boxes()[i]);
            assert!((p.x_min - q.x_min).abs() < 1e-12 && (p.y_max - q.y_max).abs() < 1e-12);
        }
    }
}
