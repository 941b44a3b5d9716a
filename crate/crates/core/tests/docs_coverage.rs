const MATH_MAP: &str = include_str!("../../../docs/math_map.md");

const CONCEPTS: &[&str] = &[
    "ssm-1d",
    "ssm-1d-green",
    "pde-operator",
    "embedding",
    "fourier-symbol",
    "green-symbol",
    "stability",
    "coupled-forward",
    "frechet",
    "fm-interpolate",
    "fm-loss",
    "fm-denoise",
    "dit-block",
    "patchify",
    "bench-scaling",
    "ablation-flags",
    "kernel-gallery",
];

fn concept_section() -> &'static str {
    let start = MATH_MAP.find("## Concept table").expect("concept table heading");
    let rest = &MATH_MAP[start + 3..];
    &rest[..rest.find("\n## ").unwrap_or(rest.len())]
}

fn table_ids() -> Vec<String> {
    concept_section()
        .lines()
        .filter_map(|l| l.strip_prefix("| `"))
        .filter_map(|l| l.split_once('`').map(|(id, _)| id.to_string()))
        .collect()
}

#[test]
fn every_concept_has_a_row() {
    let ids = table_ids();
    let missing: Vec<&&str> = CONCEPTS.iter().filter(|c| !ids.iter().any(|i| i == **c)).collect();
    assert!(missing.is_empty(), "math map lacks rows for {missing:?}");
}

#[test]
fn every_row_names_code() {
    for line in concept_section().lines().filter(|l| l.starts_with("| `")) {
        let code = line.trim_end_matches('|').rsplit('|').next().unwrap_or("");
        assert!(code.contains('`'), "row without a code reference: {line}");
    }
}

#[test]
fn documented_configs_exist() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for name in ["fig1a_localized", "fig1b_anisotropic", "fig1c_shifted", "fig1d_combined"] {
        assert!(MATH_MAP.contains(&format!("{name}.cfg")));
        assert!(std::path::Path::new(&format!("{dir}/{name}.cfg")).is_file());
    }
}
