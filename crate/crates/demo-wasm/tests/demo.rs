// Native runs of the exported functions. Error paths build a `JsError`,
// which needs a JS host, so only successful calls are exercised here.

use temporal_embed_demo::{component_curve, rescaling_gap, Trainer};

#[test]
fn sine_component_peaks_on_weekly_grid() {
    let omega = std::f64::consts::TAU / 7.0;
    let ys = component_curve(omega, std::f64::consts::FRAC_PI_2, "sin", 0.0, 28.0, 5).unwrap();
    for y in ys {
        assert!((y - 1.0).abs() < 1e-12, "{y}");
    }
    assert_eq!(
        component_curve(1.0, 0.0, "relu", -1.0, 1.0, 3).unwrap(),
        [0.0, 0.0, 1.0]
    );
}

#[test]
fn rescaling_gap_is_rounding_only() {
    assert!(rescaling_gap(3, 24.0, 200).unwrap() < 1e-12);
    assert!(rescaling_gap(3, 0.01, 200).unwrap() < 1e-12);
}

#[test]
fn trainer_reduces_loss_and_reports() {
    let mut t = Trainer::new(0, 8, "sin", 0.0, 8).unwrap();
    let first = t.run(1).unwrap();
    let later = t.run(50).unwrap();
    assert_eq!(t.epoch(), 51);
    assert!(later < first, "{first} -> {later}");
    let acc = t.test_accuracy().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let dom = t.dominant().unwrap();
    assert_eq!(dom.len(), 3);
    assert!(dom[0] >= 0.0 && dom[1] >= 0.0);
    assert_eq!(t.signal(274.0, 365.0, 1.0).unwrap().len(), 92);
    let hist = t.histogram();
    assert_eq!(hist.len(), 11);
    assert_eq!(hist.iter().sum::<u32>(), 8);
}

#[test]
fn same_seed_same_trajectory() {
    let mut a = Trainer::new(4, 4, "sin", 0.05, 16).unwrap();
    let mut b = Trainer::new(4, 4, "sin", 0.05, 16).unwrap();
    assert_eq!(a.run(5).unwrap().to_bits(), b.run(5).unwrap().to_bits());
    assert_eq!(a.dominant().unwrap(), b.dominant().unwrap());
}
