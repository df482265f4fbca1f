use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ganprune_core::config::{parse_config, parse_config_str, ExperimentConfig};
use ganprune_core::consistency::ConsistencyWeights;
use ganprune_core::models::TASK_IDS;
use ganprune_core::pruning::Granularity;
use ganprune_core::schedule::SparsitySchedule;
use ganprune_core::strategy::RecipeId;
use ganprune_core::ErrorCategory;
use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn schema() -> Value {
    serde_json::from_str(&std::fs::read_to_string(root().join("schema/experiment-config.schema.json")).unwrap()).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

fn strings(v: &Value) -> BTreeSet<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

fn full_config() -> ExperimentConfig {
    ExperimentConfig {
        task: "ring-2d".into(),
        recipe: Some(RecipeId::B),
        seed: Some(1),
        sparsity: Some(0.5),
        granularity: Some(Granularity::Kernel),
        schedule: Some(SparsitySchedule::gradual(0.0, 0.5, 0, 10, 1).unwrap()),
        weights: Some(ConsistencyWeights::default()),
        steps: Some(10),
        baseline_steps: Some(100),
        budget_fraction: Some(0.1),
        batch_size: Some(8),
        generator_width: Some(8),
        discriminator_width: Some(8),
        data_dir: Some("data".into()),
        dense_checkpoint: Some("d.ckpt".into()),
        out_dir: Some("out".into()),
        checkpoint_interval: Some(5),
    }
}

#[test]
fn schema_matches_the_config_type() {
    let s = schema();
    let full = serde_json::to_value(full_config()).unwrap();
    assert_eq!(keys(&s["properties"]), keys(&full));
    assert_eq!(keys(&s["$defs"]["schedule"]["properties"]), keys(&full["schedule"]));
    assert_eq!(keys(&s["$defs"]["weights"]["properties"]), keys(&full["weights"]));

    let recipes: BTreeSet<String> = RecipeId::ALL.iter().map(|r| r.to_string()).collect();
    assert_eq!(strings(&s["properties"]["recipe"]["enum"]), recipes);
    let tasks: BTreeSet<String> = TASK_IDS.iter().map(|t| t.to_string()).collect();
    assert_eq!(strings(&s["properties"]["task"]["enum"]), tasks);
    let grains: BTreeSet<String> =
        Granularity::ALL.iter().map(|g| serde_json::to_value(g).unwrap().as_str().unwrap().to_string()).collect();
    assert_eq!(strings(&s["properties"]["granularity"]["enum"]), grains);

    let w = ConsistencyWeights::default();
    let d = &s["$defs"]["weights"]["properties"];
    assert_eq!(d["lambda"]["default"].as_f64(), Some(w.lambda));
    assert_eq!(d["epsilon"]["default"].as_f64(), Some(w.epsilon));
    assert_eq!(serde_json::from_value::<ConsistencyWeights>(serde_json::json!({
        "generative_weights": d["generative_weights"]["default"],
        "discriminative_weights": d["discriminative_weights"]["default"],
    })).unwrap(), w);
}

#[test]
fn shipped_configs_resolve() {
    let dir = root().join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let m = parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(m.total_steps > 0);
        n += 1;
    }
    assert!(n >= 2);
}

#[test]
fn minimal_config_fills_defaults() {
    let m = parse_config_str(r#"{"task": "dcgan-mnist", "recipe": "b"}"#).unwrap().resolve().unwrap();
    assert_eq!(m.weights.lambda, 0.5);
    let s = m.schedule.unwrap();
    assert_eq!((s.s_initial, s.s_final), (0.05, 0.5));
    assert_eq!(s.step_end, m.total_steps / 2);
}

#[test]
fn invalid_configs_are_config_errors() {
    let cases = [
        r#"{"task": "dcgan-mnist", "recipe": "z"}"#,
        r#"{"task": "dcgan-mnist", "recipe": "b", "sparsity": 1.5}"#,
        r#"{"task": "dcgan-mnist", "recipe": "b", "granularity": "row"}"#,
        r#"{"task": "dcgan-mnist", "recipe": "b", "steps": -1}"#,
        r#"{"task": "mnist-gan", "recipe": "b"}"#,
        r#"{"recipe": "b"}"#,
        r#"{"task": "dcgan-mnist", "recipe": "b", "weights": {"lambda": 0.5, "mu": 1}}"#,
    ];
    for text in cases {
        let err = parse_config_str(text).and_then(|c| c.resolve()).unwrap_err();
        assert_eq!(err.category(), ErrorCategory::Config, "{text}: {err}");
    }
    let err = parse_config(Path::new("/nonexistent/config.json")).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Io);
}
