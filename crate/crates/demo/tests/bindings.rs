use xmlr_demo::{box_signal_json, compare_generators_json, convse_json, templates_json, train_kernels_json};

#[test]
fn clean_box_is_found_by_templates() {
    let sig = box_signal_json(3, 30, 0.0).unwrap();
    let scores: Vec<f64> = serde_json::from_value(sig["scores"].clone()).unwrap();
    let span = (sig["span"][0].as_u64().unwrap() as usize, sig["span"][1].as_u64().unwrap() as usize);
    let t = templates_json(5).unwrap();
    let k_st: Vec<f64> = serde_json::from_value(t["k_st"].clone()).unwrap();
    let k_ed: Vec<f64> = serde_json::from_value(t["k_ed"].clone()).unwrap();

    let out = convse_json(&scores, &k_st, &k_ed, 3).unwrap();
    assert_eq!(out["p_st"].as_array().unwrap().len(), 30);
    assert_eq!(out["spans"].as_array().unwrap().len(), 3);

    let cmp = compare_generators_json(&scores, &k_st, &k_ed, span.0, span.1).unwrap();
    for g in ["convse", "sliding_window", "tag"] {
        let iou = cmp[g]["iou"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&iou), "{g}");
    }
    // a noiseless box is recovered exactly by the threshold grouping
    assert_eq!(cmp["tag"]["iou"].as_f64(), Some(1.0));
}

#[test]
fn training_returns_kernels() {
    let r = train_kernels_json(1, 3, 5, 0.1, 50).unwrap();
    assert_eq!(r["k_st"].as_array().unwrap().len(), 3);
    assert_eq!(r["losses"].as_array().unwrap().len(), 5);
    assert!(r["mean_iou"].as_f64().unwrap() > 0.0);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(box_signal_json(0, 1, 0.1).is_err());
    assert!(templates_json(4).is_err());
    assert!(convse_json(&[], &[1.0], &[1.0], 1).is_err());
    assert!(train_kernels_json(0, 2, 1, 0.1, 10).is_err());
}
