//! CSV ingestion: header row required, one unit per record.

use std::path::Path;

use nalgebra::DMatrix;

use ordinal_causal::Dataset;

use crate::config::Columns;
use crate::error::{CliError, CliResult};

pub fn read_dataset(path: &Path, columns: &Columns, outcome_levels: Option<&[String]>) -> CliResult<Dataset> {
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot open {name}: {e}")))?;
    let header = reader.headers().map_err(|e| CliError::Config(format!("{name}: {e}")))?.clone();
    let index = |col: &str| {
        header
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| CliError::Config(format!("{name}: column '{col}' not found in header")))
    };
    let yi = index(&columns.outcome)?;
    let ai = index(&columns.treatment)?;
    let xi = columns.covariates.iter().map(|c| index(c)).collect::<CliResult<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut x = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{name}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = |col: &str, msg: String| CliError::Config(format!("{name} line {line}, column '{col}': {msg}"));
        let raw_y = &rec[yi];
        let level = match outcome_levels {
            Some(levels) => levels
                .iter()
                .position(|l| l == raw_y)
                .ok_or_else(|| at(&columns.outcome, format!("'{raw_y}' is not in outcome_levels")))?,
            None => raw_y
                .parse::<usize>()
                .map_err(|_| at(&columns.outcome, format!("'{raw_y}' is not a level in 0, 1, 2, ...")))?,
        };
        y.push(level);
        let raw_a = &rec[ai];
        let t = match raw_a.parse::<f64>() {
            Ok(v) if v == 0.0 => 0,
            Ok(v) if v == 1.0 => 1,
            _ => return Err(at(&columns.treatment, format!("'{raw_a}' is not 0 or 1"))),
        };
        a.push(t);
        for (c, &j) in columns.covariates.iter().zip(&xi) {
            let v = rec[j].parse::<f64>().ok().filter(|v| v.is_finite());
            x.push(v.ok_or_else(|| at(c, format!("'{}' is not a finite number", &rec[j])))?);
        }
    }
    if y.is_empty() {
        return Err(CliError::Config(format!("{name}: no data rows")));
    }
    let declared = outcome_levels.map_or_else(|| y.iter().max().map_or(1, |m| m + 1), |l| l.len());
    let p = columns.covariates.len();
    let n = y.len();
    let x = DMatrix::from_row_slice(n, p, &x);
    Dataset::new(y, a, x, declared).map_err(|e| CliError::Config(format!("{name}: {e}")))
}
