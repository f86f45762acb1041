//! Pearson correlation, predictor selection and the RMSE / R² metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::CleanDataset;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Pearson correlation coefficient, computed from mean-subtracted sums.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "pearson",
            format!("{} samples", x.len()),
            format!("{} samples", y.len()),
        ));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 samples, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 || x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Symmetric matrix of pairwise Pearson coefficients with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    channel_names: Vec<String>,
    r: Matrix,
}

impl CorrelationMatrix {
    /// Validates symmetry, the unit diagonal and the `[-1, 1]` range.
    pub fn new(channel_names: Vec<String>, r: Matrix) -> Result<Self> {
        let n = channel_names.len();
        if r.shape() != (n, n) {
            return Err(Error::shape(
                "CorrelationMatrix::new",
                format!("{n} channels"),
                format!("{}x{}", r.rows(), r.cols()),
            ));
        }
        for i in 0..n {
            if r.get(i, i) != 1.0 {
                return Err(Error::Config(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..n {
                let v = r.get(i, j);
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("entry ({i}, {j}) = {v} outside [-1, 1]")));
                }
                if v != r.get(j, i) {
                    return Err(Error::Asymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { channel_names, r })
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn matrix(&self) -> &Matrix {
        &self.r
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_owned()))
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.r.get(self.index(a)?, self.index(b)?))
    }

    /// CSV with a leading `channel` column and one column per channel.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["channel".to_owned()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for (i, name) in self.channel_names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.r.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("correlation csv", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(src: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(src);
        let names: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .skip(1)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad correlation value `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(names, Matrix::from_rows(&rows)?)
    }

    pub fn to_json(&self) -> CorrelationJson {
        CorrelationJson {
            kind: "correlation".into(),
            channels: self.channel_names.clone(),
            r: (0..self.r.rows()).map(|i| self.r.row(i).to_vec()).collect(),
        }
    }
}

/// JSON export of a correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationJson {
    pub kind: String,
    pub channels: Vec<String>,
    pub r: Vec<Vec<f64>>,
}

impl TryFrom<CorrelationJson> for CorrelationMatrix {
    type Error = Error;

    fn try_from(j: CorrelationJson) -> Result<Self> {
        CorrelationMatrix::new(j.channels, Matrix::from_rows(&j.r)?)
    }
}

/// All pairwise Pearson coefficients of the dataset's channels.
pub fn correlation_matrix(d: &CleanDataset) -> Result<CorrelationMatrix> {
    let cols = d.columns();
    let n = cols.len();
    let mut r = Matrix::identity(n).into_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = pearson(&cols[i], &cols[j]).map_err(|e| match e {
                Error::UndefinedCorrelation(m) => Error::UndefinedCorrelation(format!(
                    "{} vs {}: {m}",
                    d.channel_names()[i],
                    d.channel_names()[j]
                )),
                other => other,
            })?;
            r[i * n + j] = v;
            r[j * n + i] = v;
        }
    }
    if n == 1 {
        // A lone channel still needs a defined, non-constant series.
        pearson(&cols[0], &cols[0])?;
    }
    CorrelationMatrix::new(d.channel_names().to_vec(), Matrix::new(n, n, r)?)
}

/// Thresholds and domain exclusions for predictor selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// Channels need `|R| >` this to be selected.
    pub strong_threshold: f64,
    /// Below this `|R|` a channel is reported as weakly correlated.
    pub weak_threshold: f64,
    /// Channels never selected, with the reason recorded in the report.
    pub exclude: Vec<PolicyExclusion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyExclusion {
    pub channel: String,
    pub reason: String,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        Self {
            strong_threshold: 0.8,
            weak_threshold: 0.5,
            exclude: Vec::new(),
        }
    }
}

impl SelectionPolicy {
    /// Default thresholds with `no_channel` excluded; NO₂ covers the same source.
    pub fn exclude_no(no_channel: &str) -> Self {
        Self {
            exclude: vec![PolicyExclusion {
                channel: no_channel.to_owned(),
                reason: "NO excluded in favour of NO2".into(),
            }],
            ..Self::default()
        }
    }

    pub fn with_threshold(mut self, strong: f64) -> Self {
        self.strong_threshold = strong;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    /// `weak <= |R| <= strong`.
    Moderate,
    /// `|R| < weak`.
    Weak,
    Policy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub channel: String,
    pub r: f64,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedPredictor {
    pub channel: String,
    pub r: f64,
}

/// Outcome of predictor selection against one target channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSelection {
    pub target: String,
    pub strong_threshold: f64,
    pub weak_threshold: f64,
    pub selected: Vec<SelectedPredictor>,
    pub excluded_with_reason: Vec<Exclusion>,
}

impl PredictorSelection {
    pub fn channels(&self) -> Vec<String> {
        self.selected.iter().map(|s| s.channel.clone()).collect()
    }
}

fn by_strength(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.abs()
        .partial_cmp(&a.1.abs())
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

/// Picks channels with `|R| > strong_threshold` against `target`, minus the
/// policy's exclusions, ordered by descending `|R|` then by name.
pub fn select_predictors(
    c: &CorrelationMatrix,
    target: &str,
    policy: &SelectionPolicy,
) -> Result<PredictorSelection> {
    let t = c.index(target)?;
    let mut candidates: Vec<(&str, f64)> = c
        .channel_names
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t)
        .map(|(i, name)| (name.as_str(), c.r.get(i, t)))
        .collect();
    candidates.sort_by(|a, b| by_strength(*a, *b));

    let mut selected = Vec::new();
    let mut excluded = Vec::new();
    for (name, r) in candidates {
        let policy_hit = policy.exclude.iter().find(|e| e.channel == name);
        let reason = if let Some(p) = policy_hit {
            Some(ExclusionReason::Policy(p.reason.clone()))
        } else if r.abs() > policy.strong_threshold {
            None
        } else if r.abs() < policy.weak_threshold {
            Some(ExclusionReason::Weak)
        } else {
            Some(ExclusionReason::Moderate)
        };
        match reason {
            None => selected.push(SelectedPredictor {
                channel: name.to_owned(),
                r,
            }),
            Some(reason) => excluded.push(Exclusion {
                channel: name.to_owned(),
                r,
                reason,
            }),
        }
    }
    if selected.is_empty() {
        return Err(Error::NoPredictors {
            target: target.to_owned(),
            threshold: policy.strong_threshold,
        });
    }
    Ok(PredictorSelection {
        target: target.to_owned(),
        strong_threshold: policy.strong_threshold,
        weak_threshold: policy.weak_threshold,
        selected,
        excluded_with_reason: excluded,
    })
}

/// Root mean square of `actual - predicted`.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::shape(
            "rmse",
            format!("{} actual", actual.len()),
            format!("{} predicted", predicted.len()),
        ));
    }
    let sse: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Squared Pearson correlation between actual and predicted values.
///
/// This is not `1 - SSE/SST`: a biased but perfectly correlated predictor
/// scores 1.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    let r = pearson(actual, predicted)?;
    Ok(r * r)
}
