use std::collections::BTreeSet;

use budamaf::protocol::{JobDetails, JobKind};

/// `### kind` headings each followed by one json block.
fn examples() -> Vec<(String, String)> {
    let text = include_str!("../../../docs/job_schema.md");
    let mut out = Vec::new();
    let mut heading: Option<String> = None;
    let mut block: Option<String> = None;
    for line in text.lines() {
        if let Some(b) = block.as_mut() {
            if line.starts_with("```") {
                out.push((heading.take().expect("json block under a kind heading"), block.take().unwrap()));
            } else {
                b.push_str(line);
                b.push('\n');
            }
        } else if let Some(h) = line.strip_prefix("### ") {
            heading = Some(h.trim().to_owned());
        } else if line.starts_with("```json") {
            block = Some(String::new());
        }
    }
    out
}

#[test]
fn every_documented_example_validates() {
    let mut seen = BTreeSet::new();
    for (heading, body) in examples() {
        let kind: JobKind = heading.parse().unwrap_or_else(|e| panic!("{heading}: {e:?}"));
        let details: serde_json::Value = serde_json::from_str(&body).unwrap_or_else(|e| panic!("{heading}: {e}"));
        JobDetails::parse(kind, &details).unwrap_or_else(|e| panic!("{heading}: {e}"));
        assert!(seen.insert(kind), "{heading} documented twice");
    }
    let missing: Vec<_> = JobKind::ALL.into_iter().filter(|k| !seen.contains(k)).collect();
    assert!(missing.is_empty(), "undocumented kinds: {missing:?}");
}
