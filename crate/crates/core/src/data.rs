//! Fused samples: one right-censored arm and one current-status arm sharing
//! the covariate space.

use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("invalid rows: {}", format_rows(.0))]
    InvalidRows(Vec<RowIssue>),
    #[error("no {0} observations")]
    EmptySource(Source),
    #[error("degenerate inspection window: c_l = c_u = {0}")]
    DegenerateWindow(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// One rejected row; `row` counts data rows from 1 (the header is row 0).
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    pub row: usize,
    pub message: String,
}

fn format_rows(rows: &[RowIssue]) -> String {
    let shown: Vec<String> = rows
        .iter()
        .take(10)
        .map(|r| format!("row {}: {}", r.row, r.message))
        .collect();
    let more = if rows.len() > 10 {
        format!(" (and {} more)", rows.len() - 10)
    } else {
        String::new()
    };
    format!("{}{}", shown.join("; "), more)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// S = 0
    CurrentStatus,
    /// S = 1
    RightCensored,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::CurrentStatus => write!(f, "current-status"),
            Source::RightCensored => write!(f, "right-censored"),
        }
    }
}

/// The coarsened outcome carried by one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Outcome {
    /// `Y = min(T, R)` and `Δ_R = 1(T <= R)`.
    RightCensored { y: f64, delta_r: bool },
    /// Inspection time `C` and `Δ_C = 1(T <= C)`.
    CurrentStatus { c: f64, delta_c: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedObservation {
    pub covariates: Vec<f64>,
    pub outcome: Outcome,
}

impl FusedObservation {
    pub fn right_censored(covariates: Vec<f64>, y: f64, delta_r: bool) -> Self {
        Self {
            covariates,
            outcome: Outcome::RightCensored { y, delta_r },
        }
    }

    pub fn current_status(covariates: Vec<f64>, c: f64, delta_c: bool) -> Self {
        Self {
            covariates,
            outcome: Outcome::CurrentStatus { c, delta_c },
        }
    }

    pub fn source(&self) -> Source {
        match self.outcome {
            Outcome::RightCensored { .. } => Source::RightCensored,
            Outcome::CurrentStatus { .. } => Source::CurrentStatus,
        }
    }

    pub fn is_right_censored(&self) -> bool {
        matches!(self.outcome, Outcome::RightCensored { .. })
    }

    fn check(&self, dim: usize) -> Option<String> {
        if self.covariates.len() != dim {
            return Some(format!(
                "covariate dimension {} differs from {dim}",
                self.covariates.len()
            ));
        }
        if self.covariates.iter().any(|v| !v.is_finite()) {
            return Some("non-finite covariate".into());
        }
        let t = match self.outcome {
            Outcome::RightCensored { y, .. } => y,
            Outcome::CurrentStatus { c, .. } => c,
        };
        if !t.is_finite() || t < 0.0 {
            return Some(format!("time must be finite and non-negative, got {t}"));
        }
        None
    }
}

/// An immutable fused sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedSample {
    observations: Vec<FusedObservation>,
    pi: f64,
    pi_is_design: bool,
    covariate_dim: usize,
}

impl FusedSample {
    /// Validates the records and sets `π = n_1 / n`.
    pub fn new(observations: Vec<FusedObservation>) -> Result<Self, DataError> {
        let Some(first) = observations.first() else {
            return Err(DataError::InvalidArgument(
                "sample has no observations".into(),
            ));
        };
        let covariate_dim = first.covariates.len();
        if covariate_dim == 0 {
            return Err(DataError::InvalidArgument(
                "at least one covariate is required".into(),
            ));
        }
        let issues: Vec<RowIssue> = observations
            .iter()
            .enumerate()
            .filter_map(|(i, o)| {
                o.check(covariate_dim).map(|message| RowIssue {
                    row: i + 1,
                    message,
                })
            })
            .collect();
        if !issues.is_empty() {
            return Err(DataError::InvalidRows(issues));
        }
        let n1 = observations
            .iter()
            .filter(|o| o.is_right_censored())
            .count();
        let pi = n1 as f64 / observations.len() as f64;
        Ok(Self {
            observations,
            pi,
            pi_is_design: false,
            covariate_dim,
        })
    }

    /// Pins `π` to a design value instead of the empirical proportion.
    pub fn with_design_pi(mut self, pi: f64) -> Result<Self, DataError> {
        if !(pi > 0.0 && pi <= 1.0) {
            return Err(DataError::InvalidArgument(format!(
                "design pi must lie in (0, 1], got {pi}"
            )));
        }
        self.pi = pi;
        self.pi_is_design = true;
        Ok(self)
    }

    pub fn observations(&self) -> &[FusedObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn pi_is_design(&self) -> bool {
        self.pi_is_design
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariate_dim
    }

    pub fn n_right_censored(&self) -> usize {
        self.observations
            .iter()
            .filter(|o| o.is_right_censored())
            .count()
    }

    pub fn n_current_status(&self) -> usize {
        self.len() - self.n_right_censored()
    }

    /// Right-censored rows as `(w, y, Δ_R)`.
    pub fn right_censored(&self) -> impl Iterator<Item = (&[f64], f64, bool)> {
        self.observations.iter().filter_map(|o| match o.outcome {
            Outcome::RightCensored { y, delta_r } => Some((o.covariates.as_slice(), y, delta_r)),
            _ => None,
        })
    }

    /// Current-status rows as `(w, c, Δ_C)`.
    pub fn current_status(&self) -> impl Iterator<Item = (&[f64], f64, bool)> {
        self.observations.iter().filter_map(|o| match o.outcome {
            Outcome::CurrentStatus { c, delta_c } => Some((o.covariates.as_slice(), c, delta_c)),
            _ => None,
        })
    }

    /// Largest observed `Y` or `C`.
    pub fn max_time(&self) -> f64 {
        self.observations
            .iter()
            .map(|o| match o.outcome {
                Outcome::RightCensored { y, .. } => y,
                Outcome::CurrentStatus { c, .. } => c,
            })
            .fold(0.0, f64::max)
    }

    /// Requires both sources with at least two rows each.
    pub fn require_fusion(&self) -> Result<(), DataError> {
        if self.n_right_censored() < 2 {
            return Err(DataError::EmptySource(Source::RightCensored));
        }
        if self.n_current_status() < 2 {
            return Err(DataError::EmptySource(Source::CurrentStatus));
        }
        Ok(())
    }

    /// Drops current-status rows whose inspection time lies outside the
    /// window. Returns the restricted sample and the number of rows dropped.
    pub fn restrict_to_window(
        &self,
        window: &InspectionWindow,
    ) -> Result<(Self, usize), DataError> {
        let kept: Vec<FusedObservation> = self
            .observations
            .iter()
            .filter(|o| match o.outcome {
                Outcome::CurrentStatus { c, .. } => window.contains(c),
                _ => true,
            })
            .cloned()
            .collect();
        let dropped = self.len() - kept.len();
        if dropped > 0 {
            warn!(
                "dropped {dropped} current-status rows with C outside [{}, {}]",
                window.c_lower, window.c_upper
            );
        }
        let mut sample = Self::new(kept)?;
        if self.pi_is_design {
            sample = sample.with_design_pi(self.pi)?;
        }
        Ok((sample, dropped))
    }

    /// Writes the sample in the CSV schema read by [`ingest_csv`].
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_path(path)?;
        self.write_records(&mut wtr)?;
        wtr.flush()?;
        Ok(())
    }

    pub fn write_records<W: std::io::Write>(
        &self,
        wtr: &mut csv::Writer<W>,
    ) -> Result<(), DataError> {
        let mut header = vec!["source".to_string()];
        header.extend((1..=self.covariate_dim).map(|k| format!("w{k}")));
        header.extend(["y", "delta_r", "c", "delta_c"].map(String::from));
        wtr.write_record(&header)?;
        for o in &self.observations {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            rec.push(if o.is_right_censored() { "1" } else { "0" }.into());
            rec.extend(o.covariates.iter().map(|v| v.to_string()));
            match o.outcome {
                Outcome::RightCensored { y, delta_r } => {
                    rec.extend([
                        y.to_string(),
                        (delta_r as u8).to_string(),
                        String::new(),
                        String::new(),
                    ]);
                }
                Outcome::CurrentStatus { c, delta_c } => {
                    rec.extend([
                        String::new(),
                        String::new(),
                        c.to_string(),
                        (delta_c as u8).to_string(),
                    ]);
                }
            }
            wtr.write_record(&rec)?;
        }
        Ok(())
    }
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub source: String,
    /// Covariate columns; when empty, every column named `w<k>` is used in
    /// increasing `k`.
    pub covariates: Vec<String>,
    pub y: String,
    pub delta_r: String,
    pub c: String,
    pub delta_c: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            source: "source".into(),
            covariates: Vec::new(),
            y: "y".into(),
            delta_r: "delta_r".into(),
            c: "c".into(),
            delta_c: "delta_c".into(),
        }
    }
}

fn parse_binary(s: &str) -> Option<bool> {
    match s.trim() {
        "0" | "0.0" => Some(false),
        "1" | "1.0" => Some(true),
        _ => None,
    }
}

fn parse_time(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse `{s}` as a number"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value `{s}`"));
    }
    if v < 0.0 {
        return Err(format!("negative time {v}"));
    }
    Ok(v)
}

/// Reads a fused sample from a CSV file.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<FusedSample, DataError> {
    let rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    read_sample(rdr, schema)
}

pub fn read_sample<R: std::io::Read>(
    mut rdr: csv::Reader<R>,
    schema: &CsvSchema,
) -> Result<FusedSample, DataError> {
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let source = col(&schema.source)?;
    let y = col(&schema.y)?;
    let delta_r = col(&schema.delta_r)?;
    let c = col(&schema.c)?;
    let delta_c = col(&schema.delta_c)?;
    let cov: Vec<usize> = if schema.covariates.is_empty() {
        let mut named: Vec<(usize, usize)> = headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| {
                h.trim()
                    .strip_prefix('w')
                    .and_then(|k| k.parse::<usize>().ok())
                    .map(|k| (k, i))
            })
            .collect();
        named.sort();
        if named.is_empty() {
            return Err(DataError::MissingColumn("w1".into()));
        }
        named.into_iter().map(|(_, i)| i).collect()
    } else {
        schema
            .covariates
            .iter()
            .map(|n| col(n))
            .collect::<Result<_, _>>()?
    };

    let mut observations = Vec::new();
    let mut issues = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let mut fail = |msg: String| issues.push(RowIssue { row, message: msg });

        let covariates: Result<Vec<f64>, String> = cov
            .iter()
            .map(|&i| {
                let s = field(i);
                if s.is_empty() {
                    return Err(format!("missing covariate `{}`", &headers[i]));
                }
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("invalid covariate `{}` = `{s}`", &headers[i]))
            })
            .collect();
        let covariates = match covariates {
            Ok(v) => v,
            Err(m) => {
                fail(m);
                continue;
            }
        };
        let Some(s) = parse_binary(field(source)) else {
            fail(format!("source must be 0 or 1, got `{}`", field(source)));
            continue;
        };
        let (own, other, own_names, other_names) = if s {
            (
                (y, delta_r),
                (c, delta_c),
                ("y", "delta_r"),
                ("c", "delta_c"),
            )
        } else {
            (
                (c, delta_c),
                (y, delta_r),
                ("c", "delta_c"),
                ("y", "delta_r"),
            )
        };
        if !field(other.0).is_empty() || !field(other.1).is_empty() {
            fail(format!(
                "source={} row must leave `{}` and `{}` empty",
                s as u8, other_names.0, other_names.1
            ));
            continue;
        }
        if field(own.0).is_empty() || field(own.1).is_empty() {
            fail(format!(
                "source={} row requires `{}` and `{}`",
                s as u8, own_names.0, own_names.1
            ));
            continue;
        }
        let t = match parse_time(field(own.0)) {
            Ok(t) => t,
            Err(m) => {
                fail(m);
                continue;
            }
        };
        let Some(d) = parse_binary(field(own.1)) else {
            fail(format!(
                "`{}` must be 0 or 1, got `{}`",
                own_names.1,
                field(own.1)
            ));
            continue;
        };
        observations.push(if s {
            FusedObservation::right_censored(covariates, t, d)
        } else {
            FusedObservation::current_status(covariates, t, d)
        });
    }
    if !issues.is_empty() {
        return Err(DataError::InvalidRows(issues));
    }
    FusedSample::new(observations)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InspectionWindow {
    pub c_lower: f64,
    pub c_upper: f64,
}

impl InspectionWindow {
    pub fn new(c_lower: f64, c_upper: f64) -> Result<Self, DataError> {
        if !c_lower.is_finite() || !c_upper.is_finite() || c_lower < 0.0 {
            return Err(DataError::InvalidArgument(format!(
                "invalid window [{c_lower}, {c_upper}]"
            )));
        }
        if c_lower == c_upper {
            return Err(DataError::DegenerateWindow(c_lower));
        }
        if c_lower > c_upper {
            return Err(DataError::InvalidArgument(format!(
                "window lower end {c_lower} exceeds upper end {c_upper}"
            )));
        }
        Ok(Self { c_lower, c_upper })
    }

    pub fn contains(&self, c: f64) -> bool {
        c >= self.c_lower && c <= self.c_upper
    }

    pub fn width(&self) -> f64 {
        self.c_upper - self.c_lower
    }
}

/// Linear-interpolation sample quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Trim quantiles of the current-status inspection times; `(0, 1)` gives the
/// observed range.
pub fn inspection_window(
    sample: &FusedSample,
    trim: (f64, f64),
) -> Result<InspectionWindow, DataError> {
    let (lo, hi) = trim;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(DataError::InvalidArgument(format!(
            "trim quantiles must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
        )));
    }
    let mut cs: Vec<f64> = sample.current_status().map(|(_, c, _)| c).collect();
    if cs.is_empty() {
        return Err(DataError::EmptySource(Source::CurrentStatus));
    }
    cs.sort_by(f64::total_cmp);
    InspectionWindow::new(quantile_sorted(&cs, lo), quantile_sorted(&cs, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn four_row_file() {
        let f = write("source,w1,y,delta_r,c,delta_c\n1,0.2,0.5,1,,\n1,0.4,0.9,0,,\n0,0.1,,,0.7,1\n0,0.3,,,0.8,0\n");
        let s = ingest_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.pi(), 0.5);
        assert_eq!(s.covariate_dim(), 1);
    }

    #[test]
    fn rc_row_with_status_is_rejected() {
        let f =
            write("source,w1,y,delta_r,c,delta_c\n1,0.2,0.5,1,,\n1,0.4,0.9,0,,1\n0,0.1,,,0.7,1\n");
        match ingest_csv(f.path(), &CsvSchema::default()) {
            Err(DataError::InvalidRows(rows)) => {
                assert_eq!(rows.len(), 1);
                assert_eq!(rows[0].row, 2);
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn other_schema_violations() {
        let cases = [
            "source,w1,y,delta_r,c,delta_c\n2,0.2,0.5,1,,\n",
            "source,w1,y,delta_r,c,delta_c\n1,0.2,-0.5,1,,\n",
            "source,w1,y,delta_r,c,delta_c\n1,0.2,0.5,3,,\n",
            "source,w1,y,delta_r,c,delta_c\n1,,0.5,1,,\n",
        ];
        for c in cases {
            let f = write(c);
            assert!(matches!(
                ingest_csv(f.path(), &CsvSchema::default()),
                Err(DataError::InvalidRows(_))
            ));
        }
        let f = write("source,w1,y,delta_r,c\n1,0.2,0.5,1,\n");
        assert!(matches!(
            ingest_csv(f.path(), &CsvSchema::default()),
            Err(DataError::MissingColumn(_))
        ));
    }

    #[test]
    fn window_min_max_and_degenerate() {
        let obs = [0.6, 0.7, 0.8]
            .iter()
            .map(|&c| FusedObservation::current_status(vec![0.0], c, true))
            .chain([FusedObservation::right_censored(vec![0.0], 1.0, true)])
            .collect();
        let s = FusedSample::new(obs).unwrap();
        let w = inspection_window(&s, (0.0, 1.0)).unwrap();
        assert_eq!((w.c_lower, w.c_upper), (0.6, 0.8));

        let obs = vec![FusedObservation::current_status(vec![0.0], 0.6, true); 3];
        let s = FusedSample::new(obs).unwrap();
        assert!(matches!(
            inspection_window(&s, (0.0, 1.0)),
            Err(DataError::DegenerateWindow(_))
        ));

        let s =
            FusedSample::new(vec![FusedObservation::right_censored(vec![0.0], 1.0, true)]).unwrap();
        assert!(matches!(
            inspection_window(&s, (0.0, 1.0)),
            Err(DataError::EmptySource(Source::CurrentStatus))
        ));
    }

    #[test]
    fn trimmed_window_quantiles() {
        let obs = (0..100)
            .map(|i| {
                FusedObservation::current_status(vec![0.0], 0.5 + 0.5 * i as f64 / 99.0, false)
            })
            .collect();
        let s = FusedSample::new(obs).unwrap();
        let w = inspection_window(&s, (0.05, 0.95)).unwrap();
        // oracle: position 0.05 * 99 = 4.95 between the 5th and 6th points
        let oracle_lo = 0.5 + 0.5 * 4.95 / 99.0;
        let oracle_hi = 0.5 + 0.5 * 94.05 / 99.0;
        assert!((w.c_lower - oracle_lo).abs() < 1e-12);
        assert!((w.c_upper - oracle_hi).abs() < 1e-12);
        assert!((w.c_lower - 0.525).abs() < 1e-3 && (w.c_upper - 0.975).abs() < 1e-3);
    }

    #[test]
    fn restriction_drops_outside_rows() {
        let obs = vec![
            FusedObservation::current_status(vec![0.0], 0.2, true),
            FusedObservation::current_status(vec![0.0], 0.6, true),
            FusedObservation::right_censored(vec![0.0], 5.0, false),
        ];
        let s = FusedSample::new(obs).unwrap();
        let (r, dropped) = s
            .restrict_to_window(&InspectionWindow::new(0.5, 1.0).unwrap())
            .unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(r.len(), 2);
        assert_eq!(r.pi(), 0.5);
    }
}
