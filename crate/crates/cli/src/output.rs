use std::fs;
use std::path::{Path, PathBuf};

use ergolab::entropy::ExperimentRow;
use ergolab::scenario::RunRecord;
use serde::Serialize;

/// One CSV line per schedule value. Column meanings live in docs/csv_schema.md.
#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    scenario: &'a str,
    t: f64,
    map: &'a str,
    weak_star_to_base: Option<f64>,
    lambda_sigma_plus: Option<f64>,
    lambda_plus: Option<f64>,
    lambda_minus: Option<f64>,
    lambda_center: Option<f64>,
    entropy: Option<f64>,
    entropy_std_err: Option<f64>,
    entropy_depth: Option<usize>,
    beta: Option<f64>,
    gamma: Option<f64>,
    component_lambda_plus: Option<f64>,
    ruelle_residual: Option<f64>,
    bound_lhs: Option<f64>,
    bound_total: Option<f64>,
    bound_bracket: Option<f64>,
    bound_holds: Option<bool>,
    warnings: usize,
}

impl<'a> CsvRow<'a> {
    fn new(scenario: &'a str, r: &'a ExperimentRow) -> Self {
        Self {
            scenario,
            t: r.t,
            map: &r.map,
            weak_star_to_base: r.weak_star_to_base,
            lambda_sigma_plus: r.lambda_sigma_plus,
            lambda_plus: r.lambda_plus,
            lambda_minus: r.lambda_minus,
            lambda_center: r.lambda_center,
            entropy: r.entropy,
            entropy_std_err: r.entropy_std_err,
            entropy_depth: r.entropy_depth,
            beta: r.beta,
            gamma: r.gamma,
            component_lambda_plus: r.component_lambda_plus,
            ruelle_residual: r.ruelle_residual,
            bound_lhs: r.bound.as_ref().map(|b| b.lhs),
            bound_total: r.bound.as_ref().map(|b| b.total),
            bound_bracket: r.bound.as_ref().map(|b| b.bracket),
            bound_holds: r.bound.as_ref().map(|b| b.bound_holds),
            warnings: r.warnings.len(),
        }
    }
}

pub struct Artifacts {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub gnuplot: PathBuf,
}

pub fn csv_text(record: &RunRecord) -> Result<String, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &record.rows {
        w.serialize(CsvRow::new(&record.scenario.name, r)).map_err(|e| e.to_string())?;
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|e| e.to_string())
}

fn gnuplot_text(record: &RunRecord, csv_name: &str) -> String {
    let name = &record.scenario.name;
    format!(
        "# plots {csv_name}; run from this directory with `gnuplot {name}.gp`\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 900,600\n\
         set output '{name}.png'\n\
         set xlabel 't'\n\
         set ylabel 'nats per iterate'\n\
         set title '{name}'\n\
         plot '{csv_name}' using 2:9 with linespoints title 'entropy', \\\n\
         \x20    '' using 2:5 with linespoints title 'lambda_sigma_plus', \\\n\
         \x20    '' using 2:6 with linespoints title 'lambda_plus'\n"
    )
}

pub fn write_all(record: &RunRecord, dir: &Path) -> Result<Artifacts, String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let name = &record.scenario.name;
    let csv_name = format!("{name}.csv");
    let out = Artifacts {
        csv: dir.join(&csv_name),
        json: dir.join(format!("{name}.json")),
        gnuplot: dir.join(format!("{name}.gp")),
    };
    let json = serde_json::to_string_pretty(record).map_err(|e| e.to_string())?;
    for (path, text) in [(&out.csv, csv_text(record)?), (&out.json, json), (&out.gnuplot, gnuplot_text(record, &csv_name))] {
        fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(out)
}
