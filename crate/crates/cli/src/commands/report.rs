use annoforge::concreteness::{histogram_csv, score_histogram, ConcretenessReport};
use annoforge::labelgen::read_labels;
use annoforge::report::{emit_report, label_distribution_csv, ReportKind};
use annoforge::Error;

use super::{Context, Run};
use crate::args::ReportArgs;
use crate::{CliError, CliResult};

fn read_text(path: &std::path::Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn report(ctx: &Context, a: &ReportArgs) -> CliResult<()> {
    let kind: ReportKind = a
        .kind
        .parse()
        .map_err(|e: Error| CliError::usage(e.to_string()))?;
    let mut run = Run::new(ctx, "report", a, &a.out)?;
    let input = run.input(&a.input)?;
    let is_jsonl = input.extension().is_some_and(|e| e == "jsonl");
    let csv = match kind {
        ReportKind::Concreteness if is_jsonl => {
            if a.bins == 0 {
                return Err(CliError::usage("--bins must be positive"));
            }
            histogram_csv(&score_histogram(&ConcretenessReport::load(&input)?, a.bins))
        }
        ReportKind::LabelDistribution => label_distribution_csv(&read_labels(&input)?)?,
        _ => read_text(&input)?,
    };
    let svg = emit_report(kind, &csv)?;
    run.write_text(&format!("{}.csv", a.kind), &csv)?;
    run.write_text(&format!("{}.svg", a.kind), &svg)?;
    run.finish()
}
