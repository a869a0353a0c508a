//! Canonical config text against checked-in golden files.
//!
//! Each `golden/<name>.toml` must serialise to `golden/<name>.canonical`.
//! Set `UPDATE_GOLDEN=1` to rewrite the expected files after a deliberate
//! format change.

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use ranknoise_cli::parse_config;

#[test]
fn canonical_text_matches_golden_files() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut seen = 0;
    let mut entries: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let canonical = parse_config(&text)
            .unwrap_or_else(|e| panic!("{}: {e:?}", path.display()))
            .to_canonical();
        let expected_path = path.with_extension("canonical");
        if update {
            fs::write(&expected_path, &canonical).unwrap();
        }
        let expected = fs::read_to_string(&expected_path).unwrap();
        assert_eq!(canonical, expected, "{}", path.display());
        // the canonical form is itself canonical
        assert_eq!(parse_config(&canonical).unwrap().to_canonical(), canonical);
        seen += 1;
    }
    assert!(seen >= 7, "only {seen} golden configs");
}

proptest! {
    #[test]
    fn numbers_survive_the_canonical_round_trip(
        mean in -1e3f64..1e3,
        sd in 1e-3f64..1e2,
        b in 1e-3f64..10.0,
        dt_exp in -5i32..-1,
        seed in any::<u32>(),
    ) {
        let dt = 10f64.powi(dt_exp) * 1.7;
        let text = format!(
            "seed = {seed}\ndt = {dt:?}\n[coefficients]\nb = {b:?}\nsigma = 1.0\n[initial_law]\nkind = \"gaussian\"\nmean = {mean:?}\nsd = {sd:?}\n"
        );
        let cfg = parse_config(&text).unwrap();
        let again = parse_config(&cfg.to_canonical()).unwrap();
        prop_assert_eq!(again.dt.to_bits(), dt.to_bits());
        prop_assert_eq!(again.seed, seed as u64);
        prop_assert_eq!(again.initial_law.law(), cfg.initial_law.law());
        prop_assert_eq!(again.to_canonical(), cfg.to_canonical());
    }
}
