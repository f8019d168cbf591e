use regioncal_core::calibration::{evaluate_loss, label_all, LossKind, Method};
use regioncal_core::dataset::{
    generate_synthetic, load_dataset, save_dataset, Supervision, SyntheticConfig,
};
use regioncal_core::pipeline::{calibrate, train};
use regioncal_core::svm::{load_models, save_models, score_all, SvmConfig};
use regioncal_core::{evaluate, joint_calibrate, GridSpec};

fn small(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        class_count: 5,
        images: 16,
        superpixels_per_image: 24,
        imbalance_exponent: 2.0,
        size_imbalance: 1.0,
        seed,
        ..Default::default()
    }
}

#[test]
fn joint_calibration_never_loses_to_initial_constants() {
    for seed in 0..10 {
        let d = generate_synthetic(&small(seed)).unwrap();
        let models = train(&d, &SvmConfig::default(), 1, false).unwrap().models;
        let scores = score_all(&models, &d).unwrap();
        let grid = GridSpec::default();
        let result = joint_calibrate(&d, &scores, LossKind::FullySupervised, &grid).unwrap();
        let init = grid.initial_params(d.class_count);
        let uncalibrated = evaluate_loss(&d, &scores, &init, LossKind::FullySupervised).unwrap();
        assert_eq!(result.trace.initial_loss, uncalibrated);
        assert!(result.trace.final_loss() <= uncalibrated);
        assert!(result.trace.losses().windows(2).all(|w| w[1] < w[0]));
        let again = evaluate_loss(&d, &scores, &result.params, LossKind::FullySupervised).unwrap();
        assert_eq!(again, result.trace.final_loss());
    }
}

#[test]
fn files_round_trip_and_rescore_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let d = generate_synthetic(&small(3)).unwrap();
    let data_path = dir.path().join("train.jsonl");
    save_dataset(&d, &data_path).unwrap();
    let loaded = load_dataset(&data_path).unwrap();
    assert_eq!(loaded, d);

    let models = train(&loaded, &SvmConfig::default(), 1, false)
        .unwrap()
        .models;
    let model_path = dir.path().join("models.jsonl");
    save_models(&models, &model_path).unwrap();
    let reloaded = load_models(&model_path).unwrap();
    assert_eq!(reloaded, models);
    let before = score_all(&models, &d).unwrap();
    let after = score_all(&reloaded, &d).unwrap();
    for (a, b) in before.iter().zip(&after) {
        for r in 0..a.regions() {
            let bits = |row: &[f64]| row.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.row(r)), bits(b.row(r)));
        }
    }
}

#[test]
fn calibration_methods_on_training_data() {
    let d = generate_synthetic(&small(4)).unwrap();
    let models = train(&d, &SvmConfig::default(), 1, false).unwrap().models;
    let scores = score_all(&models, &d).unwrap();
    let grid = GridSpec::default();
    let accuracy = |method| {
        let file = calibrate(&d, &models, &scores, method, &grid).unwrap();
        let params = file.params(d.class_count).unwrap();
        evaluate(&label_all(&d, &scores, &params), &d)
            .unwrap()
            .class_average_accuracy
    };
    let none = calibrate(&d, &models, &scores, Method::None, &grid).unwrap();
    assert!(none.params.iter().all(|p| p.a == -7.0 && p.b == 0.0));
    assert!(accuracy(Method::Jc) >= accuracy(Method::None));
    assert!(accuracy(Method::Platt).is_finite());
}

#[test]
fn weak_pipeline_end_to_end() {
    let d = generate_synthetic(&SyntheticConfig {
        supervision: Supervision::Weak,
        ..small(5)
    })
    .unwrap();
    let trained = train(&d, &SvmConfig::default(), 3, true).unwrap();
    let alternation = trained.alternation.unwrap();
    assert!(alternation.history.len() <= 3);
    let scores = score_all(&trained.models, &d).unwrap();
    let grid = GridSpec::default();
    let file = calibrate(&d, &trained.models, &scores, Method::Jc, &grid).unwrap();
    assert_eq!(file.loss_kind, LossKind::WeaklySupervised);
    assert!(file.final_loss.unwrap() <= file.initial_loss.unwrap());
    let platt = calibrate(&d, &trained.models, &scores, Method::Platt, &grid).unwrap();
    assert_eq!(platt.params.len(), d.class_count);
}
