//! Minimal evaluator for exported models over raw sensor frames.
//!
//! The forward pass here is written out as plain scalar loops and does not
//! use [`crate::numeric`]; it needs only addition, multiplication, division
//! and `exp`. Everything else in this module is I/O around that loop.
//!
//! Inputs outside the bounds a model was trained on still produce a
//! prediction, with the offending channels listed in
//! [`Prediction::out_of_range`].

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::ops::{Add, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::dataset::{Y_MAX, Y_MIN};
use crate::error::{Error, Result};
use crate::mlp::MlpModel;
use crate::stats;

/// One timestamped set of raw readings in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub timestamp: String,
    pub readings: BTreeMap<String, f64>,
}

impl SensorFrame {
    pub fn new(timestamp: impl Into<String>, readings: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            timestamp: timestamp.into(),
            readings: readings.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub timestamp: String,
    /// µg/m³.
    pub pm25: f64,
    pub normalized: f64,
    /// Predictor channels whose reading lies outside the model's input bounds.
    pub out_of_range: Vec<String>,
}

/// Arithmetic width of the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn is_nonneg(self) -> bool;
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn is_nonneg(self) -> bool {
        self >= 0.0
    }
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn is_nonneg(self) -> bool {
        self >= 0.0
    }
}

/// Flattened weights and bounds of a model with all bounds present.
#[derive(Debug, Clone, PartialEq)]
pub struct LiteModel {
    names: Vec<String>,
    in_min: Vec<f64>,
    in_max: Vec<f64>,
    t_min: f64,
    t_max: f64,
    n_hidden: usize,
    lw1: Vec<f64>,
    b1: Vec<f64>,
    lw2: Vec<f64>,
    b2: f64,
}

impl LiteModel {
    /// Fails with [`Error::Config`] if any input or target bounds are unset.
    pub fn new(model: &MlpModel) -> Result<Self> {
        let mut in_min = Vec::new();
        let mut in_max = Vec::new();
        for c in model.inputs() {
            let b = c
                .bounds
                .ok_or_else(|| Error::Config(format!("input bounds for `{}` are not set", c.name)))?;
            in_min.push(b.min);
            in_max.push(b.max);
        }
        let t = model
            .target()
            .bounds
            .ok_or_else(|| Error::Config(format!("target bounds for `{}` are not set", model.target().name)))?;
        Ok(Self {
            names: model.input_names(),
            in_min,
            in_max,
            t_min: t.min,
            t_max: t.max,
            n_hidden: model.n_hidden(),
            lw1: model.lw1().as_slice().to_vec(),
            b1: model.b1().as_slice().to_vec(),
            lw2: model.lw2().as_slice().to_vec(),
            b2: model.b2(),
        })
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.names
    }

    /// Normalized network output for already-normalized inputs.
    pub fn eval_normalized(&self, x_n: &[f64]) -> f64 {
        self.eval::<f64>(x_n.iter().copied()).to_f64()
    }

    fn eval<T: Scalar>(&self, x_n: impl Iterator<Item = T> + Clone) -> T {
        let one = T::of(1.0);
        let p = self.names.len();
        let mut y = T::of(self.b2);
        for j in 0..self.n_hidden {
            let mut z = T::of(self.b1[j]);
            for (k, x) in x_n.clone().enumerate().take(p) {
                z = z + T::of(self.lw1[j * p + k]) * x;
            }
            let h = if z.is_nonneg() {
                one / (one + (-z).exp())
            } else {
                let e = z.exp();
                e / (one + e)
            };
            y = y + T::of(self.lw2[j]) * h;
        }
        y
    }

    fn normalize<T: Scalar>(&self, k: usize, x: f64) -> T {
        let (lo, hi) = (T::of(self.in_min[k]), T::of(self.in_max[k]));
        T::of(Y_MAX - Y_MIN) * (T::of(x) - lo) / (hi - lo) + T::of(Y_MIN)
    }

    /// Same operation order as [`crate::dataset::ChannelBounds::denormalize`].
    fn denormalize(&self, y_n: f64) -> f64 {
        (y_n - Y_MIN) * (self.t_max - self.t_min) / (Y_MAX - Y_MIN) + self.t_min
    }

    pub fn predict(&self, frame: &SensorFrame, precision: Precision) -> Result<Prediction> {
        let mut raw = Vec::with_capacity(self.names.len());
        for name in &self.names {
            let v = *frame.readings.get(name).ok_or_else(|| {
                Error::Frame(format!("frame `{}` has no reading for `{name}`", frame.timestamp))
            })?;
            if !v.is_finite() {
                return Err(Error::Frame(format!("frame `{}`: non-finite `{name}`", frame.timestamp)));
            }
            raw.push(v);
        }
        let normalized = match precision {
            Precision::F64 => {
                let x: Vec<f64> = raw.iter().enumerate().map(|(k, v)| self.normalize(k, *v)).collect();
                self.eval::<f64>(x.into_iter())
            }
            Precision::F32 => {
                let x: Vec<f32> = raw.iter().enumerate().map(|(k, v)| self.normalize(k, *v)).collect();
                self.eval::<f32>(x.into_iter()).to_f64()
            }
        };
        let out_of_range = self
            .names
            .iter()
            .zip(&raw)
            .enumerate()
            .filter(|(k, (_, v))| **v < self.in_min[*k] || **v > self.in_max[*k])
            .map(|(_, (n, _))| n.clone())
            .collect();
        Ok(Prediction {
            timestamp: frame.timestamp.clone(),
            pm25: self.denormalize(normalized),
            normalized,
            out_of_range,
        })
    }
}

/// Evaluates one frame in 64-bit arithmetic.
pub fn predict_one(model: &MlpModel, frame: &SensorFrame) -> Result<Prediction> {
    LiteModel::new(model)?.predict(frame, Precision::F64)
}

/// RMSE and R² of predictions against measured values, in µg/m³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub n: usize,
    pub rmse: f64,
    /// `None` when either series is constant.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub predictions: Vec<Prediction>,
    pub summary: Option<StreamSummary>,
}

/// Evaluates every frame; with `targets`, also summarizes the error.
pub fn predict_stream(
    model: &MlpModel,
    frames: &[SensorFrame],
    targets: Option<&[f64]>,
    precision: Precision,
) -> Result<StreamOutput> {
    let lite = LiteModel::new(model)?;
    let predictions = frames
        .iter()
        .map(|f| lite.predict(f, precision))
        .collect::<Result<Vec<_>>>()?;
    let summary = match targets {
        Some(t) if t.len() != frames.len() => {
            return Err(Error::Frame(format!("{} targets for {} frames", t.len(), frames.len())))
        }
        Some(t) if !t.is_empty() => {
            let pred: Vec<f64> = predictions.iter().map(|p| p.pm25).collect();
            Some(StreamSummary {
                n: t.len(),
                rmse: stats::rmse(t, &pred)?,
                r2: match stats::r_squared(t, &pred) {
                    Ok(r2) => Some(r2),
                    Err(Error::UndefinedCorrelation(_)) => None,
                    Err(e) => return Err(e),
                },
            })
        }
        _ => None,
    };
    Ok(StreamOutput { predictions, summary })
}

/// Frames read from a file, with the optional measured target column.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTable {
    pub frames: Vec<SensorFrame>,
    pub targets: Option<Vec<f64>>,
}

fn parse_reading(row: usize, column: &str, field: &str) -> Result<f64> {
    if field.is_empty() || field == "NA" {
        return Err(Error::Frame(format!("row {row}: missing value in `{column}`")));
    }
    let v: f64 = field
        .parse()
        .map_err(|_| Error::Frame(format!("row {row}: unparseable number `{field}` in `{column}`")))?;
    if !v.is_finite() {
        return Err(Error::Frame(format!("row {row}: non-finite value in `{column}`")));
    }
    Ok(v)
}

/// Reads frames from CSV (timestamp first, then channel columns). Only the
/// `channels` columns and the optional target column are kept; each must be
/// present and complete.
pub fn read_frames_csv<R: Read>(source: R, channels: &[String], target: Option<&str>) -> Result<FrameTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = reader.headers()?.clone();
    let index = |name: &str| {
        header
            .iter()
            .skip(1)
            .position(|h| h == name)
            .map(|i| i + 1)
            .ok_or_else(|| Error::Frame(format!("frames have no column `{name}`")))
    };
    let cols = channels.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let target_col = target.map(index).transpose()?;

    let mut frames = Vec::new();
    let mut targets = target_col.map(|_| Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let mut readings = BTreeMap::new();
        for (name, &c) in channels.iter().zip(&cols) {
            readings.insert(name.clone(), parse_reading(row, name, rec.get(c).unwrap_or(""))?);
        }
        if let (Some(c), Some(t)) = (target_col, targets.as_mut()) {
            t.push(parse_reading(row, target.unwrap_or_default(), rec.get(c).unwrap_or(""))?);
        }
        frames.push(SensorFrame {
            timestamp: rec.get(0).unwrap_or_default().to_owned(),
            readings,
        });
    }
    Ok(FrameTable { frames, targets })
}

/// Reads line-delimited JSON objects of the form
/// `{"timestamp": "...", "CO": 1.2, ...}`. Blank lines are skipped.
pub fn read_frames_ndjson<R: BufRead>(source: R, channels: &[String], target: Option<&str>) -> Result<FrameTable> {
    let mut frames = Vec::new();
    let mut targets = target.map(|_| Vec::new());
    for (i, line) in source.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::Frame(format!("line {row}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| Error::Frame(format!("line {row}: {e}")))?;
        let get = |name: &str| -> Result<f64> {
            obj.get(name)
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| Error::Frame(format!("line {row}: missing numeric `{name}`")))
        };
        let readings = channels
            .iter()
            .map(|c| Ok((c.clone(), get(c)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        if let (Some(name), Some(t)) = (target, targets.as_mut()) {
            t.push(get(name)?);
        }
        let timestamp = match obj.get("timestamp") {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => return Err(Error::Frame(format!("line {row}: missing string `timestamp`"))),
        };
        frames.push(SensorFrame { timestamp, readings });
    }
    Ok(FrameTable { frames, targets })
}

/// `timestamp,pm25,normalized,flags`; flags are `;`-separated channel names.
pub fn write_predictions_csv<W: Write>(out: W, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "pm25", "normalized", "flags"])?;
    for p in predictions {
        w.write_record([
            p.timestamp.clone(),
            p.pm25.to_string(),
            p.normalized.to_string(),
            p.out_of_range.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    timestamp: &'a str,
    pm25: f64,
    normalized: f64,
    flags: &'a [String],
}

pub fn write_predictions_ndjson<W: Write>(mut out: W, predictions: &[Prediction]) -> Result<()> {
    for p in predictions {
        let line = PredictionLine {
            timestamp: &p.timestamp,
            pm25: p.pm25,
            normalized: p.normalized,
            flags: &p.out_of_range,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::Csv(e.into()))?;
    }
    Ok(())
}
