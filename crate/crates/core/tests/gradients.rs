use gfgn::gradcheck::{check_variant, Corruption, TOLERANCE};
use gfgn::Variant;

#[test]
fn every_variant_matches_central_differences() {
    for variant in Variant::ALL {
        for heads in [1, 2] {
            for seed in 0..5 {
                let n = 4 + (seed as usize % 5);
                let report = check_variant(variant, n, heads, seed, Corruption::None).unwrap();
                let worst = report.worst().unwrap();
                assert!(
                    report.max_rel_err() < TOLERANCE,
                    "{variant} K={heads} seed={seed}: {} rel err {:.3e}",
                    worst.name,
                    worst.max_rel_err
                );
            }
        }
    }
}

#[test]
fn corrupted_gradient_fails() {
    let report = check_variant(Variant::GfgnPair, 6, 2, 0, Corruption::ScaleFirst(1.5)).unwrap();
    assert!(!report.passed());
    assert_eq!(report.worst().unwrap().name, "layer1.head0.w");
}
