//! Every config under `configs/negative` is built to fail, and must.

use std::path::Path;

use hflow::harness::{self, classify, ExperimentConfig, Status};

fn outcome(path: &Path, root: &Path) -> (Status, String) {
    match ExperimentConfig::from_file(path).and_then(|cfg| harness::run(&cfg, root)) {
        Ok(rec) => {
            let failed: Vec<String> = rec.verdicts.iter().filter(|v| !v.pass).map(|v| v.name.clone()).collect();
            (rec.status(), failed.join(","))
        }
        Err(e) => (classify(&e), e.to_string()),
    }
}

#[test]
fn negative_controls_fail_as_designed() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/negative");
    let root = tempfile::tempdir().unwrap();
    let expected = [
        ("convergence_claims_fourth_order", Status::VerdictFailure),
        ("diffeo_wrong_gauge", Status::VerdictFailure),
        ("fixed_point_warped", Status::VerdictFailure),
        ("longtime_too_short", Status::VerdictFailure),
        ("rigidity_out_of_range", Status::ConfigError),
        ("rigidity_reversed_ladder", Status::VerdictFailure),
        ("rough_family_coarse_ladder", Status::VerdictFailure),
        ("scalar_floor_overstated", Status::VerdictFailure),
        ("uniqueness_distinct", Status::VerdictFailure),
        ("unknown_key", Status::ConfigError),
    ];
    let files = harness::sweep_configs(&dir).unwrap();
    assert_eq!(files.len(), expected.len(), "every negative config needs an expectation");
    let mut wrong = Vec::new();
    for (name, want) in expected {
        let (got, why) = outcome(&dir.join(format!("{name}.cfg")), root.path());
        println!("{name}: {} ({why})", got.label());
        if got != want {
            wrong.push(format!("{name}: expected {}, got {} ({why})", want.label(), got.label()));
        }
    }
    assert!(wrong.is_empty(), "{wrong:#?}");
}
