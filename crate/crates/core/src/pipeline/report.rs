//! Rendering an [`EvalReport`] into report files. Pure: same report, same bytes.

use std::fmt::Write as _;

use crate::eval::{EvalReport, Rate, Stage3Scores};

pub struct RenderedFile {
    pub rel_path: String,
    pub contents: Vec<u8>,
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn rate_cells(r: Option<Rate>) -> [String; 2] {
    match r {
        Some(r) => [format!("{:.6}", r.as_f64()), format!("{}/{}", r.0.numer(), r.0.denom())],
        None => [String::new(), String::new()],
    }
}

/// One row per (stage, metric, level), ready for bar charts.
fn accuracy_table(report: &EvalReport) -> Vec<u8> {
    let mut rows = vec![vec![
        "model_id".to_string(),
        "stage".into(),
        "metric".into(),
        "level".into(),
        "value".into(),
        "fraction".into(),
    ]];
    let model = &report.run_meta.model_id;
    let mut push = |stage: &str, metric: &str, level: String, r: Option<Rate>| {
        let [v, f] = rate_cells(r);
        rows.push(vec![model.clone(), stage.into(), metric.into(), level, v, f]);
    };
    if let Some(p) = &report.stage1 {
        push("stage1", "recall", String::new(), Some(p.recall));
    }
    if let Some(s) = &report.stage2 {
        push("stage2", "accuracy", String::new(), Some(s.accuracy));
        push("stage2", "precision", String::new(), s.precision);
        push("stage2", "recall", String::new(), s.recall);
    }
    for (name, scores) in [
        ("stage3_symptom", &report.stage3_symptom),
        ("stage3_root_cause", &report.stage3_rootcause),
    ] {
        if let Some(s) = scores {
            for l in &s.per_level {
                push(name, "accuracy", format!("L{}", l.level), Some(l.accuracy));
            }
        }
    }
    csv_bytes(rows)
}

fn usage_table(report: &EvalReport) -> Vec<u8> {
    let mut rows = vec![vec![
        "model_id".to_string(),
        "calls".into(),
        "input_tokens".into(),
        "output_tokens".into(),
    ]];
    for (model, u) in &report.run_meta.usage.per_model {
        rows.push(vec![
            model.clone(),
            u.calls.to_string(),
            u.input_tokens.to_string(),
            u.output_tokens.to_string(),
        ]);
    }
    csv_bytes(rows)
}

fn fmt_rate(r: Option<Rate>) -> String {
    r.map_or_else(|| "n/a".to_string(), |r| r.to_string())
}

fn summary_stage3(out: &mut String, title: &str, s: &Option<Stage3Scores>) {
    let _ = writeln!(out, "\n## {title}\n");
    match s {
        None => out.push_str("No scored items.\n"),
        Some(s) => {
            let _ = writeln!(out, "- scored items: {}", s.scored);
            let _ = writeln!(out, "- invalid labels: {}", s.invalid);
            let _ = writeln!(out, "- accuracy at L{}: {}", s.granularity, s.accuracy);
            for l in &s.per_level {
                let _ = writeln!(out, "- L{}: {}", l.level, l.accuracy);
            }
        }
    }
}

fn summary(report: &EvalReport) -> Vec<u8> {
    let m = &report.run_meta;
    let mut out = String::from("# Fault study run summary\n\n");
    let _ = writeln!(out, "- model: `{}` ({} mode)", m.model_id, m.mode);
    let _ = writeln!(out, "- wall time: {:.1} s", m.wall_time_ms as f64 / 1000.0);
    let _ = writeln!(
        out,
        "- tokens: {} in / {} out ({} total)",
        m.input_tokens, m.output_tokens, m.total_tokens
    );
    let _ = writeln!(out, "- provider failures: {}", m.provider_failures);
    let _ = writeln!(
        out,
        "- unscored (no gold): filter {}, symptom {}, root cause {}",
        m.unscored_stage2, m.unscored_stage3_symptom, m.unscored_stage3_root_cause
    );

    if let Some(p) = &report.stage1 {
        out.push_str("\n## Study definition\n\n");
        let _ = writeln!(out, "- project recall: {}", p.recall);
        let _ = writeln!(out, "- matched: {}", p.hits.join(", "));
        let _ = writeln!(out, "- missed: {}", p.misses.join(", "));
        let _ = writeln!(out, "- research questions proposed: {}", p.research_questions.len());
    }

    out.push_str("\n## Issue filtering\n\n");
    match &report.stage2 {
        None => out.push_str("No scored items.\n"),
        Some(s) => {
            let _ = writeln!(out, "- scored items: {}", s.scored);
            let _ = writeln!(out, "- accuracy: {}", s.accuracy);
            let _ = writeln!(out, "- precision: {}", fmt_rate(s.precision));
            let _ = writeln!(out, "- recall: {}", fmt_rate(s.recall));
        }
    }
    summary_stage3(&mut out, "Symptom classification", &report.stage3_symptom);
    summary_stage3(&mut out, "Root-cause classification", &report.stage3_rootcause);

    if !report.notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in &report.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out.into_bytes()
}

/// Every file the `report` stage emits, in a fixed order.
pub fn render(report: &EvalReport) -> Vec<RenderedFile> {
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    let mut files = vec![
        RenderedFile {
            rel_path: super::artifacts::REPORT.into(),
            contents: json,
        },
        RenderedFile {
            rel_path: super::artifacts::SUMMARY.into(),
            contents: summary(report),
        },
        RenderedFile {
            rel_path: "tables/accuracy.csv".into(),
            contents: accuracy_table(report),
        },
        RenderedFile {
            rel_path: "tables/usage.csv".into(),
            contents: usage_table(report),
        },
    ];
    let matrices = [
        ("tables/stage2_confusion.csv", report.stage2.as_ref().map(|s| &s.confusion)),
        (
            "tables/stage3_symptom_confusion.csv",
            report.stage3_symptom.as_ref().map(|s| &s.confusion),
        ),
        (
            "tables/stage3_root_cause_confusion.csv",
            report.stage3_rootcause.as_ref().map(|s| &s.confusion),
        ),
    ];
    for (rel, m) in matrices {
        if let Some(m) = m {
            files.push(RenderedFile {
                rel_path: rel.into(),
                contents: m.to_csv().into_bytes(),
            });
        }
    }
    files
}
