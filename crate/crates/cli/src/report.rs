use lingmark::eval::render_table;
use lingmark::formulation::Strategy;
use lingmark::markers::MarkerKind;
use lingmark::registry::Registry;
use lingmark::stats::Behaviour;

use crate::error::CliError;
use crate::layout::{write_text, Layout};

fn absent(what: &str, command: &str) -> String {
    format!("_Absent: no {what} found. Run `{command}` to produce it._\n")
}

/// Collects every available artifact into one markdown document.
pub fn report(layout: &Layout) -> Result<String, CliError> {
    let mut out = String::from("# Language-disorder marker report\n\n## Data\n\n");
    match std::fs::read_to_string(layout.class_counts_md()) {
        Ok(t) => out.push_str(&t),
        Err(_) => out.push_str(&absent("prepared corpus", "lingmark prepare")),
    }

    out.push_str("\n## Classification\n\n");
    let entries = if layout.registry().is_dir() {
        Registry::open(layout.registry())?.entries()?
    } else {
        Vec::new()
    };
    if entries.is_empty() {
        out.push_str(&absent("evaluated runs", "lingmark evaluate"));
    } else {
        let mut reports: Vec<_> = entries.iter().map(|e| e.report.clone()).collect();
        reports.sort_by_key(|r| Strategy::ALL.iter().position(|s| *s == r.strategy));
        let reference = entries
            .iter()
            .rev()
            .find(|e| e.strategy() == Strategy::StandardFinetune)
            .map(|e| &e.report);
        out.push_str(&render_table(&reports, reference));
        out.push_str("\nRuns: ");
        out.push_str(
            &entries
                .iter()
                .map(|e| format!("`{}`", e.run_id))
                .collect::<Vec<_>>()
                .join(", "),
        );
        out.push('\n');
    }

    out.push_str("\n## Markers\n\n");
    let mut any = false;
    for kind in MarkerKind::ALL {
        if let Ok(t) = std::fs::read_to_string(layout.marker_summary_md(kind)) {
            any = true;
            out.push_str(&t);
            out.push('\n');
        }
    }
    if !any {
        out.push_str(&absent("marker tables", "lingmark markers"));
    }

    out.push_str("\n## Longitudinal analysis\n\n");
    let mut any = false;
    for kind in MarkerKind::ALL {
        for behaviour in [Behaviour::Mmse, Behaviour::Cdr] {
            if let Ok(t) = std::fs::read_to_string(layout.longitudinal(kind, behaviour, "md")) {
                any = true;
                out.push_str(&t.replacen("## ", "### ", 1));
                out.push_str(&format!(
                    "\n![scatter](longitudinal/{kind}-{behaviour}.svg)\n\n"
                ));
            }
        }
    }
    if !any {
        out.push_str(&absent("longitudinal results", "lingmark longitudinal"));
    }
    write_text(&layout.report(), &out)?;
    Ok(out)
}
