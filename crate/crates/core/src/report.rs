//! CSV ingestion, analysis configuration and report rendering.
//!
//! [`analyze`] runs the whole pipeline on a CSV file and returns a
//! [`Report`] with two tables: per-part quantities (average weight, partial
//! and total variance shares, R²) and the pairs with the largest partial
//! correlations together with their permutation q-values.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::composition::{close, CompositionMatrix};
use crate::error::{Error, Result};
use crate::inference::{run_inference, PermutationConfig, PermuteMode, Tail, RNG_NAME};
use crate::linalg::Divisor;
use crate::partial::{AssociationOptions, PartialAssociation, R2Variant};

/// What to do with zero cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "policy", content = "epsilon")]
pub enum ZeroPolicy {
    #[default]
    Reject,
    /// Replace exact zeros by this positive value before closure.
    Pseudocount(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format {other:?} (expected text, csv or json)")),
        }
    }
}

/// Which mean of the raw values is printed as the average weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AverageKind {
    #[default]
    Arithmetic,
    Geometric,
}

impl std::str::FromStr for AverageKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "arithmetic" => Ok(AverageKind::Arithmetic),
            "geometric" => Ok(AverageKind::Geometric),
            other => Err(format!("unknown average {other:?} (expected arithmetic or geometric)")),
        }
    }
}

/// Everything [`analyze`] needs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    /// Columns to analyse, in order; all columns when `None`.
    pub columns: Option<Vec<String>>,
    pub zero_policy: ZeroPolicy,
    /// Label of the reference part for the alr columns of the first table.
    pub reference: Option<String>,
    pub divisor: Divisor,
    pub shrinkage: Option<f64>,
    pub r2_variant: R2Variant,
    pub permutation: PermutationConfig,
    pub format: OutputFormat,
    pub top_k: usize,
    pub average: AverageKind,
    /// Output file (text, JSON) or file prefix (CSV); standard output when
    /// `None` for text and JSON.
    pub output: Option<PathBuf>,
}

impl AnalysisConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            columns: None,
            zero_policy: ZeroPolicy::Reject,
            reference: None,
            divisor: Divisor::Unbiased,
            shrinkage: None,
            r2_variant: R2Variant::Uncorrected,
            permutation: PermutationConfig::default(),
            format: OutputFormat::Text,
            top_k: 10,
            average: AverageKind::Arithmetic,
            output: None,
        }
    }

    /// Sets one option from its textual key and value. Keys are the long
    /// command-line flag names without dashes (`permutations`, `seed`,
    /// `r2-variant`, ...).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| Error::InvalidConfig(format!("{key}: {e}"));
        fn num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value.parse::<T>().map_err(|e| format!("{value:?}: {e}"))
        }
        match key {
            "input" => self.input = PathBuf::from(value),
            "columns" => {
                self.columns = Some(value.split(',').map(|s| s.trim().to_string()).collect())
            }
            "ref" | "reference" => self.reference = Some(value.to_string()),
            "divisor" => self.divisor = value.parse().map_err(bad)?,
            "shrinkage" => {
                let lambda: f64 = num(value).map_err(bad)?;
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(Error::LambdaOutOfRange(lambda));
                }
                self.shrinkage = Some(lambda);
                self.permutation.shrinkage = Some(lambda);
            }
            "r2-variant" => self.r2_variant = value.parse().map_err(bad)?,
            "permutations" => self.permutation.n_randomizations = num(value).map_err(bad)?,
            "seed" => self.permutation.seed = num(value).map_err(bad)?,
            "step" => self.permutation.cutoff_step = num(value).map_err(bad)?,
            "permute-mode" => self.permutation.mode = value.parse::<PermuteMode>().map_err(bad)?,
            "format" => self.format = value.parse().map_err(bad)?,
            "top-k" => self.top_k = num(value).map_err(bad)?,
            "average" => self.average = value.parse().map_err(bad)?,
            "pseudocount" => {
                let eps: f64 = num(value).map_err(bad)?;
                if !(eps > 0.0 && eps.is_finite()) {
                    return Err(bad(format!("{eps} is not a positive number")));
                }
                self.zero_policy = ZeroPolicy::Pseudocount(eps);
            }
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(Error::InvalidConfig(format!("unknown option {other:?}"))),
        }
        self.permutation.divisor = self.divisor;
        Ok(())
    }

    /// Applies a flat `key = value` configuration text. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", number + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| e.context(format!("config line {}", number + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.permutation.validate()?;
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top-k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parsed numeric table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Reads a CSV with a header row, keeping the `columns` (all when `None`)
/// in the given order. Line and column numbers in errors are one-based.
pub fn read_table<R: Read>(reader: R, columns: Option<&[String]>) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let labels: Vec<String> = header.iter().map(str::to_string).collect();
    for (k, label) in labels.iter().enumerate() {
        if label.is_empty() {
            return Err(Error::Parse {
                line: 1,
                column: k + 1,
                message: "empty column header".into(),
            });
        }
        if labels[..k].contains(label) {
            return Err(Error::DuplicateHeader(label.clone()));
        }
    }
    let selected: Vec<usize> = match columns {
        None => (0..labels.len()).collect(),
        Some(wanted) => wanted
            .iter()
            .map(|w| {
                labels
                    .iter()
                    .position(|l| l == w)
                    .ok_or_else(|| Error::UnknownColumn(w.clone()))
            })
            .collect::<Result<_>>()?,
    };
    let mut data = Vec::new();
    let mut n_rows = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for &c in &selected {
            let cell = record.get(c).unwrap_or("");
            let value = cell.parse::<f64>().map_err(|_| Error::Parse {
                line,
                column: c + 1,
                message: format!("{cell:?} is not a number"),
            })?;
            data.push(value);
        }
        n_rows += 1;
    }
    Ok(RawTable {
        headers: selected.iter().map(|&c| labels[c].clone()).collect(),
        values: DMatrix::from_row_slice(n_rows, selected.len(), &data),
    })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => Error::Parse {
            line,
            column: len as usize + 1,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        csv::ErrorKind::Utf8 { err, .. } => Error::Parse {
            line,
            column: err.field() + 1,
            message: "invalid UTF-8".into(),
        },
        other => Error::Parse {
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

impl RawTable {
    /// Applies the zero policy and closes the rows.
    pub fn to_composition(&self, policy: ZeroPolicy) -> Result<CompositionMatrix> {
        let mut values = self.values.clone();
        if let ZeroPolicy::Pseudocount(eps) = policy {
            values.iter_mut().filter(|v| **v == 0.0).for_each(|v| *v = eps);
        }
        close(&values)?.with_names(self.headers.clone())
    }
}

/// Reads and closes a CSV of compositions.
pub fn ingest_csv(path: &Path, config: &AnalysisConfig) -> Result<CompositionMatrix> {
    load_table(path, config)?
        .to_composition(config.zero_policy)
        .map_err(|e| e.context(format!("reading {}", path.display())))
}

fn load_table(path: &Path, config: &AnalysisConfig) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
    read_table(file, config.columns.as_deref())
        .map_err(|e| e.context(format!("reading {}", path.display())))
}

/// One row of the per-part table. Shares and R² are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub label: String,
    /// Mean of the raw values, arithmetic or geometric as configured.
    pub average_weight: f64,
    pub average_weight_arithmetic: f64,
    pub average_weight_geometric: f64,
    /// `100 / (γ⁻_jj trace(Γ))`.
    pub partial_variance_pct: f64,
    /// `100 γ_jj / trace(Γ)`.
    pub variance_pct: f64,
    /// R² of the clr coordinate, in the configured variant.
    pub r2_mean_pct: f64,
    pub r2_mean_uncorrected_pct: f64,
    pub r2_mean_corrected_pct: f64,
    /// `100 τ_{j,ref} / trace(Σ_ref)`; empty at the reference itself.
    pub var_ref_over_trace_sigma_pct: Option<f64>,
    /// `100 τ_{j,ref} / trace(Γ)`.
    pub var_ref_over_trace_gamma_pct: Option<f64>,
    /// R² of the alr coordinate against the reference part.
    pub r2_ref_pct: Option<f64>,
}

/// One pair of the partial-correlation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub part_a: String,
    pub part_b: String,
    pub r: f64,
    /// Capped at 1.
    pub q: f64,
    pub q_raw: f64,
    pub tail: Tail,
    pub randomized_exceedances: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub input: String,
    pub n_samples: usize,
    pub n_parts: usize,
    pub labels: Vec<String>,
    pub divisor: Divisor,
    pub shrinkage: Option<f64>,
    pub r2_variant: R2Variant,
    /// Largest absolute difference between the two R² variants, in percent.
    pub r2_variant_max_gap_pct: f64,
    pub reference: Option<String>,
    pub average_weight: AverageKind,
    pub zero_policy: ZeroPolicy,
    pub seed: u64,
    pub permutations: usize,
    pub successful_permutations: u64,
    pub cutoff_step: f64,
    pub permute_mode: PermuteMode,
    pub rng: String,
    pub q_value_kind: String,
    pub total_variance: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metadata: Metadata,
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    pub partial_corr_matrix: Vec<Vec<f64>>,
    pub q_matrix: Vec<Vec<Option<f64>>>,
}

/// Runs ingestion, estimation and inference.
pub fn analyze(config: &AnalysisConfig) -> Result<Report> {
    config.validate()?;
    let table = load_table(&config.input, config)?;
    let x = table
        .to_composition(config.zero_policy)
        .map_err(|e| e.context(format!("reading {}", config.input.display())))?;
    analyze_composition(&x, &table.values, config)
}

/// Runs estimation and inference on an already closed composition; `raw`
/// holds the values before closure for the average-weight column.
pub fn analyze_composition(
    x: &CompositionMatrix,
    raw: &DMatrix<f64>,
    config: &AnalysisConfig,
) -> Result<Report> {
    config.validate()?;
    let d = x.n_parts();
    if d < 3 {
        return Err(Error::DimensionTooSmall {
            what: "number of parts",
            found: d,
            min: 3,
        });
    }
    let labels = x.names().to_vec();
    let reference = match &config.reference {
        Some(label) => Some(
            labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::UnknownColumn(label.clone()).context("--ref"))?,
        ),
        None => None,
    };
    let assoc = PartialAssociation::estimate(
        x,
        AssociationOptions {
            divisor: config.divisor,
            shrinkage: config.shrinkage,
            alr_reference: reference,
        },
    )?;
    let mut permutation = config.permutation;
    permutation.divisor = config.divisor;
    permutation.shrinkage = config.shrinkage;
    let qtable = run_inference(x, &permutation)?;

    let trace = assoc.total_variance;
    let gamma = &assoc.gamma.gamma;
    let trace_sigma = reference.map(|k| {
        (0..d)
            .filter(|&j| j != k)
            .map(|j| gamma[(j, j)] + gamma[(k, k)] - 2.0 * gamma[(j, k)])
            .sum::<f64>()
    });
    let selected_r2 = assoc.r2(config.r2_variant);
    let mut table1: Vec<Table1Row> = (0..d)
        .map(|j| {
            let column = raw.column(j);
            let arithmetic = column.mean();
            let geometric = (column.iter().map(|v| v.ln()).sum::<f64>() / column.len() as f64).exp();
            let tau = reference
                .filter(|&k| k != j)
                .map(|k| gamma[(j, j)] + gamma[(k, k)] - 2.0 * gamma[(j, k)]);
            Table1Row {
                label: labels[j].clone(),
                average_weight: match config.average {
                    AverageKind::Arithmetic => arithmetic,
                    AverageKind::Geometric => geometric,
                },
                average_weight_arithmetic: arithmetic,
                average_weight_geometric: geometric,
                partial_variance_pct: 100.0 * assoc.partial_variance[j] / trace,
                variance_pct: 100.0 * gamma[(j, j)] / trace,
                r2_mean_pct: 100.0 * selected_r2[j],
                r2_mean_uncorrected_pct: 100.0 * assoc.r2_clr[j],
                r2_mean_corrected_pct: 100.0 * assoc.r2_clr_corrected[j],
                var_ref_over_trace_sigma_pct: tau.zip(trace_sigma).map(|(t, s)| 100.0 * t / s),
                var_ref_over_trace_gamma_pct: tau.map(|t| 100.0 * t / trace),
                r2_ref_pct: assoc
                    .r2_alr
                    .as_ref()
                    .and_then(|r2| r2[j])
                    .map(|v| 100.0 * v),
            }
        })
        .collect();
    table1.sort_by(|a, b| b.r2_mean_pct.total_cmp(&a.r2_mean_pct));

    let mut pairs: Vec<_> = qtable.pairs.iter().collect();
    pairs.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()).then((a.i, a.j).cmp(&(b.i, b.j))));
    let table2 = pairs
        .into_iter()
        .take(config.top_k)
        .map(|p| Table2Row {
            part_a: labels[p.i].clone(),
            part_b: labels[p.j].clone(),
            r: p.r,
            q: p.q.q,
            q_raw: p.q.raw,
            tail: p.q.tail,
            randomized_exceedances: p.q.randomized_exceedances,
        })
        .collect();

    let r2_gap = (&assoc.r2_clr - &assoc.r2_clr_corrected).amax() * 100.0;
    let mut warnings = Vec::new();
    warnings.extend(qtable.warning.clone());
    let metadata = Metadata {
        input: config.input.display().to_string(),
        n_samples: x.n_samples(),
        n_parts: d,
        labels,
        divisor: config.divisor,
        shrinkage: config.shrinkage,
        r2_variant: config.r2_variant,
        r2_variant_max_gap_pct: r2_gap,
        reference: config.reference.clone(),
        average_weight: config.average,
        zero_policy: config.zero_policy,
        seed: permutation.seed,
        permutations: permutation.n_randomizations,
        successful_permutations: qtable.successful_replicates(),
        cutoff_step: permutation.cutoff_step,
        permute_mode: permutation.mode,
        rng: RNG_NAME.to_string(),
        q_value_kind: "plug-in FDR q-value".to_string(),
        total_variance: trace,
        warnings,
    };
    let partial_corr_matrix = (0..d)
        .map(|i| (0..d).map(|j| assoc.partial_corr[(i, j)]).collect())
        .collect();
    Ok(Report {
        metadata,
        table1,
        table2,
        partial_corr_matrix,
        q_matrix: qtable.q_matrix(),
    })
}

/// Rounds to two significant figures and prints without exponent, keeping
/// trailing zeros that are significant (`0.30`, `72`, `1.9`).
pub fn format_sig2(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = |v: f64| v.abs().log10().floor() as i32;
    let scale = 10f64.powi(1 - magnitude(x));
    let rounded = (x * scale).round() / scale;
    let decimals = 1 - magnitude(rounded);
    if decimals > 0 {
        format!("{rounded:.prec$}", prec = decimals as usize)
    } else {
        format!("{rounded:.0}")
    }
}

/// q-value for display: `<1/B` when no randomized pair exceeded.
pub fn format_q(q: f64, replicates: u64) -> String {
    if q == 0.0 {
        format!("<{:e}", 1.0 / replicates.max(1) as f64)
    } else {
        format_sig2(q)
    }
}

fn opt_sig2(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), format_sig2)
}

/// Plain-text rendering with two significant figures.
pub fn render_text(report: &Report) -> String {
    use std::fmt::Write;
    let m = &report.metadata;
    let mut out = String::new();
    let _ = writeln!(out, "input: {}  N = {}  D = {}", m.input, m.n_samples, m.n_parts);
    let _ = writeln!(
        out,
        "divisor: {}  shrinkage: {}  R² variant: {}  seed: {}  permutations: {} ({} used)",
        m.divisor,
        m.shrinkage.map_or("none".to_string(), |l| l.to_string()),
        m.r2_variant,
        m.seed,
        m.permutations,
        m.successful_permutations
    );
    for w in &m.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    let reference = m.reference.as_deref().unwrap_or("ref");
    let _ = writeln!(out);
    let width = report
        .table1
        .iter()
        .map(|r| r.label.len())
        .chain(m.labels.iter().map(|l| l.len()))
        .max()
        .unwrap_or(4)
        .max(5);
    let _ = writeln!(
        out,
        "{:<width$} {:>10} {:>12} {:>10} {:>9} {:>14} {:>10}",
        "part",
        "av.weight",
        "res.var/tot",
        "var/tot",
        "R²(mean)",
        format!("var/tot({reference})"),
        format!("R²({reference})"),
    );
    for r in &report.table1 {
        let _ = writeln!(
            out,
            "{:<width$} {:>10} {:>12} {:>10} {:>9} {:>14} {:>10}",
            r.label,
            format_sig2(r.average_weight),
            format_sig2(r.partial_variance_pct),
            format_sig2(r.variance_pct),
            format_sig2(r.r2_mean_pct),
            opt_sig2(r.var_ref_over_trace_sigma_pct),
            opt_sig2(r.r2_ref_pct),
        );
    }
    let _ = writeln!(out);
    let pair_width = report
        .table2
        .iter()
        .map(|r| r.part_a.len() + r.part_b.len() + 1)
        .max()
        .unwrap_or(4)
        .max(4);
    let _ = writeln!(out, "{:<pair_width$} {:>6} {:>8}", "pair", "r", "q");
    for r in &report.table2 {
        let _ = writeln!(
            out,
            "{:<pair_width$} {:>6} {:>8}",
            format!("{}-{}", r.part_a, r.part_b),
            format_sig2(r.r),
            format_q(r.q, m.successful_permutations),
        );
    }
    out
}

pub fn render_json(report: &Report) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Paths written by [`write_csv`].
pub fn csv_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut name = prefix.as_os_str().to_owned();
        name.push(suffix);
        PathBuf::from(name)
    };
    (with("_table1.csv"), with("_table2.csv"))
}

/// Writes `<prefix>_table1.csv` and `<prefix>_table2.csv` at full precision.
pub fn write_csv(report: &Report, prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let (p1, p2) = csv_paths(prefix);
    write_rows(&p1, &report.table1)?;
    write_rows(&p2, &report.table2)?;
    Ok((p1, p2))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidConfig(format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back a table written by [`write_csv`].
pub fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}
