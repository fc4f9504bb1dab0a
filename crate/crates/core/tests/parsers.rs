//! Parser invariants shared with the fuzz targets, run over the checked-in
//! corpus seeds and over structured random inputs.

use std::path::PathBuf;

use proptest::prelude::*;

use gcl_core::config::{GridSpec, RunConfig};
use gcl_core::linsys::{self, LinearStochasticSystem, RationalSpectrum};
use gcl_core::report::{flat_json, parse_flat_json};

fn config_parse(text: &str) {
    if let Ok(cfg) = RunConfig::parse_str(text) {
        let again = RunConfig::parse_str(&cfg.to_config_string()).expect("printed config reparses");
        assert_eq!(again, cfg);
    }
}

fn grid_spec(text: &str) {
    let Ok(grid) = text.parse::<GridSpec>() else {
        return;
    };
    assert_eq!(grid.to_string().parse::<GridSpec>().unwrap(), grid);
    if grid.count <= 10_000 {
        let values = grid.values();
        assert_eq!(values.len(), grid.count);
        assert!(values.iter().all(|v| v.is_finite()));
    }
}

fn report_json(text: &str) {
    let Ok(fields) = parse_flat_json(text) else {
        return;
    };
    let flat: Vec<_> = fields.clone().into_iter().collect();
    if let Ok(printed) = flat_json(&flat) {
        assert_eq!(parse_flat_json(&printed).unwrap(), fields);
    }
    let _ = RunConfig::from_report(&fields);
}

fn rational_spectrum(text: &str) {
    let Ok(spec) = RationalSpectrum::from_json(text) else {
        return;
    };
    let _ = spec.eval(0.0);
    let _ = spec.eval(1.5);
    let _ = linsys::integrate_rational_closed_form(&spec);
    let _ = linsys::integrate_rational_signed(&spec);
    assert_eq!(
        RationalSpectrum::from_json(&spec.to_json().unwrap()).unwrap(),
        spec
    );
}

fn system_json(text: &str) {
    let Ok(sys) = LinearStochasticSystem::from_json(text) else {
        return;
    };
    if sys.dim() <= 8 && sys.is_stable() {
        let _ = linsys::steady_covariance_lyapunov(&sys);
        let _ = linsys::integrate_spectrum_quadrature(&sys, 0);
    }
    assert_eq!(
        LinearStochasticSystem::from_json(&sys.to_json().unwrap()).unwrap(),
        sys
    );
}

type Check = fn(&str);

fn corpus(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn corpus_seeds_hold_invariants() {
    let targets: [(&str, Check); 5] = [
        ("config_parse", config_parse),
        ("grid_spec", grid_spec),
        ("report_json", report_json),
        ("rational_spectrum", rational_spectrum),
        ("system_json", system_json),
    ];
    for (name, check) in targets {
        for (_, text) in corpus(name) {
            check(&text);
        }
    }
}

#[test]
fn valid_seeds_parse() {
    for (path, text) in corpus("config_parse") {
        let name = path.file_name().unwrap().to_str().unwrap();
        let ok = RunConfig::parse_str(&text).is_ok();
        assert_eq!(ok, !matches!(name, "duplicate" | "unknown"), "{name}");
    }
    for (path, text) in corpus("system_json") {
        let name = path.file_name().unwrap().to_str().unwrap();
        assert_eq!(
            LinearStochasticSystem::from_json(&text).is_ok(),
            name != "ragged",
            "{name}"
        );
    }
    for (path, text) in corpus("rational_spectrum") {
        let name = path.file_name().unwrap().to_str().unwrap();
        assert_eq!(
            RationalSpectrum::from_json(&text).is_ok(),
            name != "zero_leading",
            "{name}"
        );
    }
}

fn value_text() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<f64>().prop_map(|v| v.to_string()),
        (-1e12f64..1e12).prop_map(|v| format!("{v:e}")),
        Just("auto".to_string()),
        "[a-z:_.0-9-]{0,12}",
    ]
}

fn key_text() -> impl Strategy<Value = String> {
    prop_oneof![
        proptest::sample::select(gcl_core::config::KEYS).prop_map(str::to_string),
        "[a-z_]{1,10}",
    ]
}

fn number() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3f64..1e3, Just(0.0), Just(1e300), Just(-1e-300)]
}

proptest! {
    #[test]
    fn config_lines(lines in proptest::collection::vec((key_text(), value_text(), any::<bool>()), 0..8)) {
        let text: String = lines
            .iter()
            .map(|(k, v, comment)| if *comment { format!("# {k}\n") } else { format!("{k} = {v}\n") })
            .collect();
        config_parse(&text);
    }

    #[test]
    fn grid_strings(prefix in prop_oneof![Just(""), Just("lin:"), Just("log:"), Just("geo:")],
                    lo in number(), hi in number(), count in 0usize..2_000_000) {
        grid_spec(&format!("{prefix}{lo}:{hi}:{count}"));
    }

    #[test]
    fn flat_reports(entries in proptest::collection::btree_map(key_text(), prop_oneof![
        number().prop_map(|v| serde_json::json!(v)),
        "[a-z-]{0,8}".prop_map(|s| serde_json::json!(s)),
        any::<bool>().prop_map(|b| serde_json::json!(b)),
        any::<i64>().prop_map(|i| serde_json::json!(i)),
    ], 0..10)) {
        report_json(&serde_json::to_string(&entries).unwrap());
    }

    #[test]
    fn spectra(numer in proptest::collection::vec(number(), 0..7),
               denom in proptest::collection::vec((number(), number()), 0..8)) {
        let js = serde_json::json!({"numer": numer, "denom": denom.iter().map(|(a, b)| [a, b]).collect::<Vec<_>>()});
        rational_spectrum(&js.to_string());
    }

    #[test]
    fn systems(dim in 1usize..5, entries in proptest::collection::vec(number(), 32)) {
        let rows = |offset: usize| -> Vec<Vec<f64>> {
            (0..dim).map(|i| (0..dim).map(|j| entries[offset + i * dim + j]).collect()).collect()
        };
        let js = serde_json::json!({"dim": dim, "drift": rows(0), "noise_cov": rows(16)});
        system_json(&js.to_string());
    }
}
