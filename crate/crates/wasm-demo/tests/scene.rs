use gud_wasm::{mixture_samples, test_image, Scene, SIZE};

#[test]
fn image_at_time_zero_is_nearly_clean() {
    let scene = Scene::new().unwrap();
    let img = scene.noised_image("haar-column", 0.5, 0.5, 0.0, 1).unwrap();
    // gamma = -7 at t = 0 leaves noise of standard deviation ~0.03
    let mse = img.iter().zip(test_image()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / img.len() as f64;
    assert!(mse.sqrt() < 0.05, "{mse}");
    assert_eq!(img.len(), SIZE * SIZE);
}

#[test]
fn curves_cover_every_pick() {
    let scene = Scene::new().unwrap();
    for family in ["standard", "linear", "haar-column"] {
        let c = scene.log_snr_curves(family, 0.5, 0.5, 11).unwrap();
        assert_eq!(c.len(), 11 * scene.curve_labels().len());
        assert!(c.iter().all(|v| v.is_finite()));
    }
    assert!(scene.log_snr_curves("nope", 0.5, 0.5, 11).is_err());
}

#[test]
fn haar_column_noises_fine_levels_first() {
    let scene = Scene::new().unwrap();
    let labels = scene.curve_labels();
    let c = scene.log_snr_curves("haar-column", 0.5, 0.5, 11).unwrap();
    let at = |name: &str, k: usize| c[labels.iter().position(|l| l == name).unwrap() * 11 + k];
    // drop in log SNR from t = 0 to t = 0.5
    let fine = at("LH1 col 1", 0) - at("LH1 col 1", 5);
    let coarse = at("LL3 col 1", 0) - at("LL3 col 1", 5);
    assert!(fine > coarse, "{fine} {coarse}");
}

#[test]
fn mixture_samples_are_seeded() {
    let a = mixture_samples(1.0, 50, 20, 3).unwrap();
    assert_eq!(a.len(), 40);
    assert_eq!(a, mixture_samples(1.0, 50, 20, 3).unwrap());
}
