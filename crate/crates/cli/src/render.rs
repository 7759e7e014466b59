//! Markdown renderings of command outputs.

use std::fmt::Write as _;

use dsattr_core::io::similarity_markdown;
use dsattr_core::selection::{DecisionLog, GuidanceRow, LadderOutcome};
use dsattr_core::{ColorChoice, Recommendation};

use crate::workspace::{ColorOutcome, ColorSelection, Evaluation, LadderSelection};

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "undefined".into())
}

pub fn color_choice(c: &ColorChoice) -> String {
    match c {
        ColorChoice::Color => "color".into(),
        ColorChoice::Gray => "gray".into(),
        ColorChoice::PerClass(m) => {
            let gray: Vec<&str> = m
                .iter()
                .filter(|(_, mode)| **mode == dsattr_core::ColorMode::Gray)
                .map(|(c, _)| c.as_str())
                .collect();
            format!("per-class (gray: {})", if gray.is_empty() { "none".into() } else { gray.join(", ") })
        }
    }
}

pub fn guidance(rows: &[GuidanceRow<f64>]) -> String {
    let mut md = String::from("## Guidance (least homogeneous first)\n\n| class | size | S1 | sigma2 | flag |\n|---|---:|---:|---:|---|\n");
    for r in rows {
        let (s1, var) = match &r.stats {
            Some(s) => (format!("{:.6}", s.s1), format!("{:.6}", s.sigma2)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(md, "| {} | {} | {s1} | {var} | {} |", r.class_id, r.size, r.flag.as_deref().unwrap_or(""));
    }
    md
}

pub fn evaluation(e: &Evaluation) -> String {
    let mut md = similarity_markdown(&e.report);
    let _ = writeln!(
        md,
        "\nLogged as entry {}; {}.\n",
        e.seq,
        if e.is_best_so_far {
            "best grouping so far".to_string()
        } else {
            format!("best grouping so far is entry {}", e.best_seq)
        }
    );
    md.push_str(&guidance(&e.guidance));
    md
}

pub fn color_selection(c: &ColorSelection) -> String {
    let mut md = format!(
        "# Color selection: {} at {} px\n\nDecision: **{}** (log entry {}{}).\n\n",
        c.grouping_name,
        c.resolution,
        color_choice(&c.color_mode),
        c.seq,
        if c.is_best_so_far { ", current" } else { "" }
    );
    match &c.outcome {
        ColorOutcome::Whole(d) => {
            let _ = writeln!(md, "| mode | S2 max | delta S2 |\n|---|---:|---:|");
            let _ = writeln!(md, "| color | {:.6} | {} |", d.s2_max_color, opt(d.color_report.delta_s2));
            let _ = writeln!(md, "| gray | {:.6} | {} |", d.s2_max_gray, opt(d.gray_report.delta_s2));
        }
        ColorOutcome::PerClass(pc) => {
            let _ = writeln!(
                md,
                "Worst-case S2 per anchor/other mode:\n\n| class | gray,gray | gray,color | color,gray | color,color | mode |\n|---|---:|---:|---:|---:|---|"
            );
            for r in &pc.rows {
                let _ = writeln!(
                    md,
                    "| {} | {:.6} | {:.6} | {:.6} | {:.6} | {} |",
                    r.class_id, r.gray_gray, r.gray_color, r.color_gray, r.color_color, r.mode
                );
            }
            let _ = writeln!(md, "\nNote: {}.", pc.note);
        }
    }
    md
}

pub fn ladder(outcome: &LadderOutcome<f64>) -> String {
    let mut md = format!(
        "# Resolution ladder: {}\n\n| resolution | S2 max | delta S2 | |\n|---:|---:|---:|---|\n",
        outcome.grouping_name
    );
    for r in &outcome.rungs {
        let mark = if r.resolution == outcome.chosen { "chosen" } else { "" };
        let _ = writeln!(md, "| {} | {:.6} | {} | {mark} |", r.resolution, r.s2_max, opt(r.delta_s2));
    }
    for w in &outcome.warnings {
        let _ = writeln!(md, "\nWarning: {w}");
    }
    md
}

pub fn ladder_selection(l: &LadderSelection) -> String {
    let mut md = ladder(&l.outcome);
    let seqs: Vec<String> = l.seqs.iter().map(u64::to_string).collect();
    let _ = writeln!(
        md,
        "\nColor handling: {}. Logged as entries {}.",
        color_choice(&l.color_mode),
        seqs.join(", ")
    );
    md
}

pub fn recommendation(r: &Recommendation) -> String {
    let mut md = String::from("# Recommendation\n\n");
    let _ = writeln!(md, "- grouping: {} ({})", r.config.grouping_name, r.grouped_classes.join(", "));
    let _ = writeln!(md, "- color: {}", color_choice(&r.config.color_mode));
    let _ = writeln!(md, "- resolution: {} px", r.config.resolution);
    let _ = writeln!(md, "- S2 max: {:.6}, delta S2: {}", r.s2_max, opt(r.delta_s2));
    let _ = writeln!(
        md,
        "- largest object: scale {:.4}, {} px at this resolution",
        r.max_object_scale, r.b_max_at_resolution
    );
    let _ = writeln!(md, "- minimum layers: {}", r.min_layers);
    if let (Some(m), Some(f)) = (&r.model, r.flops_estimate) {
        let _ = writeln!(md, "- {m} estimate: {} kFLOPS", dsattr_core::flops::format_kflops(f));
    }
    for w in &r.warnings {
        let _ = writeln!(md, "\nWarning: {w}");
    }
    md
}

pub fn log(log: &DecisionLog<f64>) -> String {
    let mut md = String::from("| seq | procedure | grouping | color | resolution | delta S2 | best |\n|---:|---|---|---|---:|---:|---|\n");
    for e in log.entries() {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} |",
            e.seq,
            e.procedure.as_str(),
            e.config.grouping_name,
            color_choice(&e.config.color_mode),
            e.config.resolution,
            opt(e.report.delta_s2),
            if e.is_best_so_far { "yes" } else { "" }
        );
    }
    md
}
