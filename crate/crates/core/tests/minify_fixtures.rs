mod common;

use std::collections::BTreeMap;

use cmlm::html::{minify, NOISE_TAGS};

#[test]
fn fixtures_match_goldens() {
    let fixtures = common::html_fixtures();
    assert_eq!(fixtures.len(), 50);
    let mut bad = Vec::new();
    for (name, raw, golden) in &fixtures {
        let got = minify(raw).minimal_html;
        if &got != golden {
            bad.push(format!("{name}\n  got:  {got}\n  want: {golden}"));
        }
    }
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn fixtures_are_idempotent_safe_sorted_and_shrinking() {
    for (name, raw, _) in common::html_fixtures() {
        let once = minify(&raw).minimal_html;
        assert_eq!(minify(once.as_bytes()).minimal_html, once, "{name}");
        assert!(once.len() <= raw.len(), "{name}");
        for tag in NOISE_TAGS {
            assert!(!once.contains(&format!("<{tag}")), "{name} keeps {tag}");
        }
        for names in common::attribute_lists(&once) {
            assert!(names.windows(2).all(|w| w[0] < w[1]), "{name}: {names:?}");
        }
    }
}

#[test]
fn reports_match_hand_counts() {
    let want: BTreeMap<String, BTreeMap<String, usize>> =
        serde_json::from_str(&std::fs::read_to_string(common::fixtures().join("expected_reports.json")).unwrap()).unwrap();
    for (name, raw, _) in common::html_fixtures() {
        let report = minify(&raw).report;
        assert_eq!(report.non_textual, want[&name]["non_textual"], "{name}");
        assert_eq!(report.input_elements - report.output_elements, report.removed_total(), "{name}");
    }
}

#[test]
fn twelve_decorative_spans() {
    let raw = std::fs::read(common::fixtures().join("html/decorative_spans.html")).unwrap();
    assert_eq!(minify(&raw).report.non_textual, 12);
}
