use pfmix::eval::{heldout_metrics, EvalData, FittedModel, MetricsReport, Provenance};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::csv_io::{read_table, Table};
use crate::error::{data, CliResult};
use crate::model_file::ModelFile;
use crate::run_dir::{to_json, RunDir};
use crate::simulate::Truth;

/// Held-out metrics of `model` on `test`. Row models see sequences as rows.
pub fn evaluate(
    model: &FittedModel,
    test: &Table,
    provenance: Provenance,
    mask: Option<&[bool]>,
) -> CliResult<MetricsReport> {
    let report = match test {
        Table::Sequences(s) if model.is_sequential() => heldout_metrics(model, EvalData::Sequences(s), provenance, mask)?,
        Table::Flat(_) if model.is_sequential() => {
            return Err(data("sequence model needs sequence data (seq_id,t columns)"));
        }
        _ => heldout_metrics(model, EvalData::Flat(&test.flat()), provenance, mask)?,
    };
    Ok(report)
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    #[serde(flatten)]
    report: &'a MetricsReport,
    config_digest: String,
    library_version: &'a str,
}

pub fn cmd_eval(cfg: &ExperimentConfig, run: &mut RunDir) -> CliResult<()> {
    let file = ModelFile::load(ExperimentConfig::require(&cfg.model, "model")?)?;
    let test = read_table(ExperimentConfig::require(&cfg.test, "test")?)?;
    let truth = cfg.truth.as_deref().map(Truth::load).transpose()?;
    let mask = truth.as_ref().map(|t| t.ground_truth.relevance.as_slice());
    let report = evaluate(&file.model, &test, file.provenance(), mask)?;
    let out = MetricsFile {
        report: &report,
        config_digest: cfg.digest(),
        library_version: pfmix::VERSION,
    };
    run.write("metrics.json", to_json(&out).as_bytes())
}
