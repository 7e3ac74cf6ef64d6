use asbart::friedman::{gen_friedman, FriedmanSpec, Noise};
use asbart::model_io::{load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT_VERSION};
use asbart::{fit, Aggregation, Error, FitConfig, FittedModel, GateFamily};

fn small_model(gate: GateFamily) -> (FittedModel, asbart::data::Dataset) {
    let data = gen_friedman(&FriedmanSpec { n: 120, noise: Noise::Low, seed: 31 }).unwrap().data;
    let config = FitConfig {
        trees: 6,
        sweeps: 6,
        burn_in: 2,
        gate,
        seed: 8,
        ..FitConfig::default()
    };
    (fit(&data, &config).unwrap(), data)
}

#[test]
fn round_trip_preserves_predictions_bit_for_bit() {
    for gate in [GateFamily::Hard, GateFamily::Linear, GateFamily::Sigmoid] {
        let (model, data) = small_model(gate);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(
            loaded.predict(&data.x, Aggregation::PerSweep).unwrap(),
            model.predict(&data.x, Aggregation::PerSweep).unwrap()
        );
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1, "temporary file left behind");
    }
}

#[test]
fn truncated_file_names_the_broken_section() {
    let (model, _) = small_model(GateFamily::Linear);
    let text = model_to_string(&model).unwrap();
    let cut = text.find("\"forests\"").unwrap() + 200;
    match model_from_str(&text[..cut]) {
        Err(Error::CorruptedModel { path, .. }) => assert!(path.starts_with("forests"), "path {path}"),
        other => panic!("expected a corrupted-model error, got {other:?}"),
    }
}

#[test]
fn wrong_field_type_reports_its_path() {
    let (model, _) = small_model(GateFamily::Linear);
    let mut v: serde_json::Value = serde_json::from_str(&model_to_string(&model).unwrap()).unwrap();
    v["preprocessing"]["y_scale"] = serde_json::json!("big");
    match model_from_str(&v.to_string()) {
        Err(Error::CorruptedModel { path, .. }) => assert_eq!(path, "preprocessing.y_scale"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn newer_format_version_is_refused() {
    let (model, _) = small_model(GateFamily::Linear);
    let mut v: serde_json::Value = serde_json::from_str(&model_to_string(&model).unwrap()).unwrap();
    v["format_version"] = serde_json::json!(MODEL_FORMAT_VERSION + 1);
    match model_from_str(&v.to_string()) {
        Err(Error::VersionMismatch { found, expected }) => {
            assert_eq!((found, expected), (MODEL_FORMAT_VERSION + 1, MODEL_FORMAT_VERSION));
        }
        other => panic!("unexpected {other:?}"),
    }
    v["format_version"] = serde_json::json!(MODEL_FORMAT_VERSION);
    v["format"] = serde_json::json!("something-else");
    assert!(matches!(model_from_str(&v.to_string()), Err(Error::CorruptedModel { .. })));
}

#[test]
fn structurally_invalid_forest_is_refused() {
    let (model, _) = small_model(GateFamily::Linear);
    let mut v: serde_json::Value = serde_json::from_str(&model_to_string(&model).unwrap()).unwrap();
    v["forests"][0]["trees"][0]["root"] = serde_json::json!(999);
    match model_from_str(&v.to_string()) {
        Err(Error::CorruptedModel { path, .. }) => assert_eq!(path, "forests[0]"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn failed_save_leaves_no_file() {
    let (model, _) = small_model(GateFamily::Hard);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing-dir").join("m.json");
    assert!(save_model(&model, &path).is_err());
    assert!(!path.exists());
}
