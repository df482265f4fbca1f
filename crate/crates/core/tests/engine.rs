mod common;

use common::*;
use ganprune_core::checkpoint::load_checkpoint;
use ganprune_core::config::ExperimentConfig;
use ganprune_core::data::BatchStream;
use ganprune_core::engine::{run_compression, CompressionSession};
use ganprune_core::metrics_log::read_metrics_log;
use ganprune_core::models::build_models;
use ganprune_core::schedule::SparsitySchedule;
use ganprune_core::strategy::RecipeId;

#[test]
fn consistency_is_zero_while_student_equals_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ring_config(dir.path(), RecipeId::B, 10);
    cfg.schedule = Some(SparsitySchedule::gradual(0.0, 0.5, 0, 10, 1).unwrap());
    cfg.dense_checkpoint = Some("unused".into());
    let m = cfg.resolve().unwrap();
    let dense = build_models(&m.task, 1).unwrap();
    let mut s = CompressionSession::new(&m, Some(dense)).unwrap();
    let data = train_data(&m);
    let mut stream = BatchStream::new(&data, m.seed, m.task.batch_size).unwrap();
    let first = s.step(&batch(&m, &mut stream, 0)).unwrap();
    assert_eq!(first.scalars["target_sparsity"], 0.0);
    assert_eq!(first.scalars["l_gc"], 0.0);
    assert_eq!(first.scalars["l_dc"], 0.0);
    assert_eq!(first.scalars["l_overall"], 0.0);
    let second = s.step(&batch(&m, &mut stream, 1)).unwrap();
    assert!(second.scalars["l_overall"] > 0.0);
}

#[test]
fn pruned_student_tracks_the_schedule_and_the_teacher_stays_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ring_config(dir.path(), RecipeId::B, 40);
    cfg.dense_checkpoint = Some("unused".into());
    let m = cfg.resolve().unwrap();
    let schedule = m.schedule.clone().unwrap();
    let mut s = CompressionSession::new(&m, Some(build_models(&m.task, 2).unwrap())).unwrap();
    let teacher = network_bits(s.teacher.as_ref().unwrap());
    let data = train_data(&m);
    let mut stream = BatchStream::new(&data, m.seed, m.task.batch_size).unwrap();
    for step in 0..m.total_steps {
        let r = s.step(&batch(&m, &mut stream, step)).unwrap();
        assert_eq!(r.scalars["target_sparsity"], schedule.sparsity_at(step));
        assert_eq!(masked_nonzeros(&s.student, &s.student_masks), 0, "step {step}");
        for (&i, mask) in &s.student_masks {
            let groups = mask.granularity().group_count(mask.shape());
            let pruned = mask.pruned_groups().len();
            assert_eq!(pruned, (schedule.sparsity_at(step) * groups as f64 + 1e-9).floor() as usize, "layer {i}");
        }
    }
    assert_eq!(network_bits(s.teacher.as_ref().unwrap()), teacher);
    assert_eq!(s.target_sparsity(), 0.5);
}

#[test]
fn the_dense_baseline_is_never_pruned() {
    let dir = tempfile::tempdir().unwrap();
    let m = ring_manifest(dir.path(), RecipeId::A, 15);
    let r = run_compression(&m).unwrap();
    for rec in read_metrics_log(&r.metrics_log).unwrap() {
        assert_eq!(rec.scalars["sparsity"], 0.0);
        assert_eq!(rec.scalars["target_sparsity"], 0.0);
    }
}

#[test]
fn repeated_runs_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let dense = run_compression(&ring_manifest(dir.path(), RecipeId::A, 10)).unwrap().checkpoint;
    let logs: Vec<_> = ["one", "two"]
        .iter()
        .map(|sub| {
            let mut cfg: ExperimentConfig = ring_config(&dir.path().join(sub), RecipeId::B, 12);
            cfg.dense_checkpoint = Some(dense.clone());
            let r = run_compression(&cfg.resolve().unwrap()).unwrap();
            let ckpt = load_checkpoint(&r.checkpoint).unwrap();
            let tensors: Vec<(String, Vec<u32>)> =
                ckpt.parameters.into_iter().map(|(k, t)| (k, t.data.iter().map(|v| v.to_bits()).collect())).collect();
            (strip_wall_time(read_metrics_log(&r.metrics_log).unwrap()), tensors, ckpt.masks)
        })
        .collect();
    assert_eq!(logs[0].0, logs[1].0);
    assert_eq!(logs[0].1, logs[1].1);
    assert_eq!(logs[0].2, logs[1].2);
}

fn window_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
#[ignore = "does not hold: L_Overall starts near 0 because the student is a copy of the teacher, and grows while sparsity ramps up"]
fn overall_loss_ends_below_its_start() {
    let dir = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for seed in 0..3 {
        let mut dense = ring_config(&dir.path().join(format!("s{seed}")), RecipeId::A, 2000);
        dense.seed = Some(seed);
        let ckpt = run_compression(&dense.resolve().unwrap()).unwrap().checkpoint;
        let mut cfg = ring_config(&dir.path().join(format!("s{seed}")), RecipeId::B, 200);
        cfg.seed = Some(seed);
        cfg.dense_checkpoint = Some(ckpt);
        let log = read_metrics_log(&run_compression(&cfg.resolve().unwrap()).unwrap().metrics_log).unwrap();
        let v: Vec<f64> = log.iter().map(|r| r.scalars["l_overall"]).collect();
        let k = v.len() / 10;
        let (first, last) = (window_mean(&v[..k]), window_mean(&v[v.len() - k..]));
        println!("seed {seed}: first 10% {first:.4}, last 10% {last:.4}");
        if last >= first {
            failures.push(seed);
        }
    }
    assert!(failures.is_empty(), "seeds {failures:?} end above their start");
}
