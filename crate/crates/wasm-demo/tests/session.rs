use facelock_wasm::{Session, SIZE};

#[test]
fn protect_purify_edit_and_score() {
    let mut s = Session::new(0).unwrap();
    s.sample_portrait(3);
    let summary = s.protect("facelock", 0.02, 10).unwrap();
    assert!(summary["linf"].as_f64().unwrap() <= 0.02);
    assert_eq!(summary["trace"].as_array().unwrap().len(), 10);
    let protected = s.defended().unwrap().clone();
    assert!(s.perturbation_view().is_some());

    s.purify("jpeg75", 0).unwrap();
    assert_ne!(s.defended().unwrap(), &protected);

    s.edit("accessory_01", 0).unwrap();
    let scores = s.scores().unwrap();
    assert_eq!(scores["defense"].as_object().unwrap().len(), 7);
    assert_eq!(scores["arrows"]["lpips"], "↑");
    let fr = scores["defense"]["fr"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&fr));
}

#[test]
fn unprotected_edit_matches_baseline() {
    let mut s = Session::new(0).unwrap();
    s.edit("a free-text prompt", 2).unwrap();
    let e = s.last_edit().unwrap();
    assert_eq!(e.baseline, e.defended);
    assert_eq!(s.scores().unwrap()["defense"]["psnr"], 100.0);
}

#[test]
fn uploads_are_resized_and_errors_surface() {
    let mut s = Session::new(1).unwrap();
    let rgba: Vec<u8> = (0..48 * 20 * 4).map(|i| (i % 251) as u8).collect();
    s.load_rgba(48, 20, &rgba).unwrap();
    assert_eq!((s.source().height(), s.source().width()), (SIZE, SIZE));
    assert!(s.load_rgba(48, 20, &rgba[..10]).is_err());
    assert!(s.purify("blur", 0).is_err());
    assert!(s.scores().is_err());
    assert!(s.protect("nonsense", 0.02, 1).is_err());
    assert!(s.protect("vae", -1.0, 1).is_err());
}
