//! CSV ingestion, run configuration and canonical JSON reports.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::aggregation::Method;
use crate::error::{invalid, Error, Result};
use crate::model::{DesignMatrix, ResponseVector};
use crate::pipelines::GridMode;
use crate::simulation::{NoiseKind, SigmaMode};

/// Reads a numeric CSV into rows. Cells must parse as finite decimals.
pub fn read_csv_rows(path: &Path, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv_at(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                column: 0,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    column: j + 1,
                    message: format!("expected a finite number, found {cell:?}"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    line,
                    column: row.len().min(first.len()) + 1,
                    message: format!("row has {} fields, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("{} has no data rows", path.display()),
        });
    }
    Ok(rows)
}

/// Loads an `n × p` design, one observation per row.
pub fn load_matrix_csv(path: &Path, header: bool) -> Result<DesignMatrix> {
    let x = DesignMatrix::from_rows(&read_csv_rows(path, header)?)?;
    log::info!("loaded {}: n = {}, p = {}", path.display(), x.n(), x.p());
    Ok(x)
}

/// Loads a response, either one value per row or a single row.
pub fn load_vector_csv(path: &Path, header: bool) -> Result<ResponseVector> {
    let rows = read_csv_rows(path, header)?;
    let values = match (rows.len(), rows[0].len()) {
        (_, 1) => rows.into_iter().map(|r| r[0]).collect(),
        (1, _) => rows.into_iter().next().expect("one row"),
        (_, k) => {
            return invalid(format!(
                "{} has {k} columns; a vector needs one",
                path.display()
            ))
        }
    };
    ResponseVector::new(values)
}

fn write_rows(path: &Path, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::csv_at(path, e);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

/// Writes a matrix with shortest round-trip float text.
pub fn save_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_rows(path, m.row_iter().map(|r| r.iter().copied().collect()))
}

/// Writes a vector, one value per row.
pub fn save_vector_csv(path: &Path, v: &[f64]) -> Result<()> {
    write_rows(path, v.iter().map(|x| vec![*x]))
}

/// Settings for one run. Every field is optional so that command-line flags
/// can be layered over a file, which is layered over the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub header: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    /// Noise level `σ`; the variance estimate is `σ²`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_mode: Option<SigmaMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cd_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_knots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_mode: Option<GridMode>,
    /// Worker threads. Not part of the results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DesignName {
    IidGaussian,
    Equicorrelated,
    Orthonormal,
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        RunConfig { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl RunConfig {
    /// Reads TOML or JSON, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| {
                let (line, column) = e.span().map(|s| line_col(&text, s.start)).unwrap_or((0, 0));
                Error::Parse {
                    line,
                    column,
                    message: e.message().to_string(),
                }
            })
        }
    }

    /// Fields set in `self` win over those in `lower`.
    pub fn over(self, lower: RunConfig) -> RunConfig {
        layer!(
            self,
            lower,
            x_csv,
            y_csv,
            betas_csv,
            header,
            method,
            sigma,
            sigma_mode,
            n,
            p,
            s,
            design,
            rho,
            noise,
            x_level,
            reps,
            seed,
            tol_gap,
            cd_tol,
            max_knots,
            lambda_min,
            grid_size,
            grid_mode,
            threads,
            out,
            profile_csv
        )
    }

    /// Positive tolerances and sizes, finite levels.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma.map(|s| s >= 0.0)),
            ("x_level", self.x_level.map(|v| v > 0.0)),
            ("tol_gap", self.tol_gap.map(|v| v > 0.0)),
            ("cd_tol", self.cd_tol.map(|v| v > 0.0)),
            ("lambda_min", self.lambda_min.map(|v| v > 0.0)),
            ("rho", self.rho.map(|v| (0.0..1.0).contains(&v))),
        ];
        for (name, ok) in positive {
            if ok == Some(false) {
                return invalid(format!("{name} is out of range"));
            }
        }
        if self.reps == Some(0) {
            return invalid("reps must be at least 1");
        }
        if self.threads == Some(0) {
            return invalid("threads must be at least 1");
        }
        Ok(())
    }
}

fn line_col(text: &str, offset: usize) -> (u64, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() as u64 + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1)
        + 1;
    (line, column)
}

pub const SCHEMA_VERSION: &str = "1";

/// Top-level report. `results` is reproducible; `environment` is not.
#[derive(Clone, Debug, Serialize)]
pub struct ReportJson<R: Serialize> {
    pub schema_version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub results: R,
    pub environment: Environment,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Environment {
    pub version: String,
    pub threads: usize,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<crate::pipelines::StageTiming>,
}

/// JSON with object keys sorted and floats in shortest round-trip form.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's Map is ordered by key, so going through Value sorts.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Canonical JSON of the `results` member alone.
pub fn canonical_results<R: Serialize>(report: &ReportJson<R>) -> Result<String> {
    canonical_json(&report.results)
}

pub fn write_report<R: Serialize>(report: &ReportJson<R>, out: Option<&Path>) -> Result<()> {
    let mut text = canonical_json(report)?;
    text.push('\n');
    match out {
        Some(path) => File::create(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| Error::io_at(path, e))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn two_by_two() {
        let dir = tempfile::tempdir().unwrap();
        let x = load_matrix_csv(&write(&dir, "x.csv", "1,0\n0,1"), false).unwrap();
        assert_eq!((x.n(), x.p()), (2, 2));
        assert_eq!(x.matrix()[(1, 1)], 1.0);
    }

    #[test]
    fn header_row_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let y = load_vector_csv(&write(&dir, "y.csv", "y\n1.5\n-2\n"), true).unwrap();
        assert_eq!(y.as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn nan_cell_names_position() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_matrix_csv(&write(&dir, "x.csv", "1,2\n3,nan\n"), false).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_and_empty_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_matrix_csv(&write(&dir, "x.csv", "1,2\n3\n"), false).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = load_matrix_csv(&write(&dir, "e.csv", ""), false).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = load_matrix_csv(&write(&dir, "t.csv", "1,abc\n"), false).unwrap_err();
        assert!(matches!(
            err,
            Error::Parse {
                line: 1,
                column: 2,
                ..
            }
        ));
    }

    #[test]
    fn config_layers() {
        let dir = tempfile::tempdir().unwrap();
        let file = RunConfig::from_file(&write(
            &dir,
            "c.toml",
            "sigma = 2.0\nreps = 10\nmethod = \"crit\"\n",
        ))
        .unwrap();
        let cli = RunConfig {
            sigma: Some(0.5),
            ..Default::default()
        };
        let merged = cli.over(file);
        assert_eq!(merged.sigma, Some(0.5));
        assert_eq!(merged.reps, Some(10));
        assert_eq!(merged.method, Some(Method::Crit));
        let json =
            RunConfig::from_file(&write(&dir, "c.json", r#"{"grid_mode": "paper-literal"}"#))
                .unwrap();
        assert_eq!(json.grid_mode, Some(GridMode::PaperLiteral));
    }

    #[test]
    fn config_errors_have_positions() {
        let dir = tempfile::tempdir().unwrap();
        let err =
            RunConfig::from_file(&write(&dir, "c.toml", "sigma = 1.0\nbogus = 3\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let bad = RunConfig {
            tol_gap: Some(-1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn keys_are_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: f64,
            alpha: Vec<f64>,
        }
        let text = canonical_json(&S {
            zeta: 0.1,
            alpha: vec![1.0, 1e-20],
        })
        .unwrap();
        assert!(text.find("alpha").unwrap() < text.find("zeta").unwrap());
        assert!(text.contains("1e-20"));
        assert!(text.contains("0.1"));
    }
}
