//! Self-contained model documents: the prediction equation's weights,
//! biases, transfer functions and normalization bounds.
//!
//! Two encodings carry the same content losslessly:
//!
//! * JSON, with every weight and bound written as a decimal string;
//! * a plain-text rendering that prints the equation and each matrix, one
//!   row per line.
//!
//! [`AnalyticalModelDocument::parse`] accepts either.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::ChannelBounds;
use crate::error::{Error, Result};
use crate::mlp::{ChannelSpec, MlpModel, RunMetrics, Transfer};
use crate::numeric::{Matrix, Vector};

pub const FORMAT_VERSION: u32 = 1;

/// Where a model came from. Every field is optional so hand-entered models
/// can omit it entirely.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProvenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scheme: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
}

/// A model plus its optional provenance; the unit of export and import.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticalModelDocument {
    pub format_version: u32,
    pub model: MlpModel,
    pub provenance: Option<ModelProvenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    name: String,
    unit: String,
    xmin: Option<String>,
    xmax: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    format_version: u32,
    predictors: Vec<RawChannel>,
    target: RawChannel,
    lw1: Vec<Vec<String>>,
    b1: Vec<String>,
    lw2: Vec<String>,
    b2: Vec<String>,
    hidden_transfer: String,
    output_transfer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<ModelProvenance>,
}

/// Shortest decimal that parses back to the same `f64`.
fn dec(v: f64) -> String {
    v.to_string()
}

fn parse_num(field: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::import(field, format!("`{s}` is not a decimal number")))?;
    if !v.is_finite() {
        return Err(Error::import(field, "non-finite value"));
    }
    Ok(v)
}

impl RawChannel {
    fn from_spec(c: &ChannelSpec) -> Self {
        Self {
            name: c.name.clone(),
            unit: c.unit.clone(),
            xmin: c.bounds.map(|b| dec(b.min)),
            xmax: c.bounds.map(|b| dec(b.max)),
        }
    }

    fn into_spec(self, field: &str) -> Result<ChannelSpec> {
        let bounds = match (self.xmin, self.xmax) {
            (None, None) => None,
            (Some(lo), Some(hi)) => {
                let lo = parse_num(&format!("{field}.xmin"), &lo)?;
                let hi = parse_num(&format!("{field}.xmax"), &hi)?;
                Some(ChannelBounds::new(lo, hi).map_err(|e| Error::import(field, e.to_string()))?)
            }
            _ => return Err(Error::import(field, "xmin and xmax must both be set or both be null")),
        };
        Ok(ChannelSpec::new(self.name, self.unit, bounds))
    }
}

impl RawDocument {
    fn from_document(doc: &AnalyticalModelDocument) -> Self {
        let m = &doc.model;
        Self {
            format_version: doc.format_version,
            predictors: m.inputs().iter().map(RawChannel::from_spec).collect(),
            target: RawChannel::from_spec(m.target()),
            lw1: (0..m.n_hidden())
                .map(|j| m.lw1().row(j).iter().copied().map(dec).collect())
                .collect(),
            b1: m.b1().as_slice().iter().copied().map(dec).collect(),
            lw2: m.lw2().as_slice().iter().copied().map(dec).collect(),
            b2: vec![dec(m.b2())],
            hidden_transfer: m.hidden_transfer().as_str().into(),
            output_transfer: m.output_transfer().as_str().into(),
            provenance: doc.provenance.clone(),
        }
    }

    fn into_document(self) -> Result<AnalyticalModelDocument> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::import(
                "format_version",
                format!("unsupported version {} (expected {FORMAT_VERSION})", self.format_version),
            ));
        }
        if Transfer::parse(&self.hidden_transfer) != Some(Transfer::Logsig) {
            return Err(Error::import("hidden_transfer", format!("unsupported `{}`", self.hidden_transfer)));
        }
        if Transfer::parse(&self.output_transfer) != Some(Transfer::Purelin) {
            return Err(Error::import("output_transfer", format!("unsupported `{}`", self.output_transfer)));
        }
        let p = self.predictors.len();
        let s = self.lw1.len();
        if p == 0 {
            return Err(Error::import("predictors", "at least one predictor is required"));
        }
        if s == 0 {
            return Err(Error::import("lw1", "at least one hidden neuron is required"));
        }
        let mut lw1 = Vec::with_capacity(s * p);
        for (j, row) in self.lw1.iter().enumerate() {
            if row.len() != p {
                return Err(Error::import(
                    format!("lw1[{j}]"),
                    format!("expected {p} columns (one per predictor), found {}", row.len()),
                ));
            }
            for (k, v) in row.iter().enumerate() {
                lw1.push(parse_num(&format!("lw1[{j}][{k}]"), v)?);
            }
        }
        let vector = |name: &str, values: &[String], len: usize| -> Result<Vec<f64>> {
            if values.len() != len {
                return Err(Error::import(name, format!("expected {len} entries, found {}", values.len())));
            }
            values
                .iter()
                .enumerate()
                .map(|(i, v)| parse_num(&format!("{name}[{i}]"), v))
                .collect()
        };
        let b1 = vector("b1", &self.b1, s)?;
        let lw2 = vector("lw2", &self.lw2, s)?;
        let b2 = vector("b2", &self.b2, 1)?[0];

        let inputs = self
            .predictors
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.into_spec(&format!("predictors[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let target = self.target.into_spec("target")?;
        let model = MlpModel::new(
            Matrix::new(s, p, lw1)?,
            Vector::new(b1)?,
            Matrix::new(1, s, lw2)?,
            b2,
        )?
        .with_channels(inputs, target)?;
        Ok(AnalyticalModelDocument {
            format_version: self.format_version,
            model,
            provenance: self.provenance,
        })
    }
}

/// Wraps a model for export.
pub fn export_model(m: &MlpModel, provenance: Option<ModelProvenance>) -> AnalyticalModelDocument {
    AnalyticalModelDocument {
        format_version: FORMAT_VERSION,
        model: m.clone(),
        provenance,
    }
}

/// Parses a JSON or text document and returns the model.
pub fn import_model(bytes: &[u8]) -> Result<MlpModel> {
    Ok(AnalyticalModelDocument::parse(bytes)?.model)
}

const BLOCKS: [&str; 4] = ["LW1", "LW2", "b1", "b2"];

impl AnalyticalModelDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&RawDocument::from_document(self))
            .expect("document serialization cannot fail");
        s.push('\n');
        s
    }

    /// Detects the encoding from the first non-blank character.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::import("document", e.to_string()))?;
        if text.trim_start().starts_with('{') {
            Self::from_json(text)
        } else {
            Self::from_text(text)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawDocument = serde_json::from_str(text).map_err(|e| {
            Error::import(
                "document",
                format!("invalid JSON at line {} column {}: {e}", e.line(), e.column()),
            )
        })?;
        raw.into_document()
    }

    /// Human-readable rendering: header lines, the equations, then each
    /// matrix with one row per line (`LW1` and `b1` have one row per hidden
    /// neuron).
    pub fn render_text(&self) -> String {
        let raw = RawDocument::from_document(self);
        let m = &self.model;
        let t = &m.target().name;
        let mut s = String::new();
        let json = |v: &RawChannel| serde_json::to_string(v).expect("channel serialization cannot fail");
        let _ = writeln!(s, "# analytical prediction model for {t}");
        let _ = writeln!(s, "format_version: {}", raw.format_version);
        let _ = writeln!(s, "hidden_transfer: {}", raw.hidden_transfer);
        let _ = writeln!(s, "output_transfer: {}", raw.output_transfer);
        for p in &raw.predictors {
            let _ = writeln!(s, "predictor: {}", json(p));
        }
        let _ = writeln!(s, "target: {}", json(&raw.target));
        if let Some(p) = &raw.provenance {
            let _ = writeln!(s, "provenance: {}", serde_json::to_string(p).expect("provenance serializes"));
        }
        s.push('\n');
        let _ = writeln!(s, "# x_n = 2 * (x - xmin) / (xmax - xmin) - 1, per predictor, stacked as a {}xN matrix", m.n_inputs());
        let _ = writeln!(s, "# B1 = [b1 b1 ... b1], b1 repeated once per column of x_n");
        let _ = writeln!(s, "# {t}_n = b2 + LW2 * {}(B1 + LW1 * x_n)", m.hidden_transfer().as_str());
        match m.target().bounds {
            Some(b) => {
                let _ = writeln!(s, "# {t} = ({t}_n + 1) * ({} - {}) / 2 + {}", dec(b.max), dec(b.min), dec(b.min));
            }
            None => {
                let _ = writeln!(s, "# {t} = ({t}_n + 1) * (xmax - xmin) / 2 + xmin, target bounds not set");
            }
        }
        let block = |s: &mut String, name: &str, rows: Vec<Vec<String>>| {
            let _ = writeln!(s, "\n{name} =");
            for r in rows {
                let _ = writeln!(s, "  {}", r.join("  "));
            }
        };
        block(&mut s, "LW1", raw.lw1.clone());
        block(&mut s, "LW2", vec![raw.lw2.clone()]);
        block(&mut s, "b1", raw.b1.iter().map(|v| vec![v.clone()]).collect());
        block(&mut s, "b2", vec![raw.b2.clone()]);
        s
    }

    /// Parses the output of [`AnalyticalModelDocument::render_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut version = None;
        let mut hidden = None;
        let mut output = None;
        let mut predictors = Vec::new();
        let mut target = None;
        let mut provenance = None;
        let mut blocks: [Option<Vec<Vec<String>>>; 4] = Default::default();
        let mut current: Option<usize> = None;

        for (ln, line) in text.lines().enumerate() {
            let field = |name: &str| format!("line {}: {name}", ln + 1);
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                if line.is_empty() {
                    current = None;
                }
                continue;
            }
            if let Some(name) = line.strip_suffix('=').map(str::trim) {
                let idx = BLOCKS
                    .iter()
                    .position(|b| *b == name)
                    .ok_or_else(|| Error::import(field(name), "unknown matrix block"))?;
                if blocks[idx].is_some() {
                    return Err(Error::import(field(name), "matrix given twice"));
                }
                blocks[idx] = Some(Vec::new());
                current = Some(idx);
                continue;
            }
            if let Some(idx) = current {
                let row = line.split_whitespace().map(str::to_owned).collect();
                blocks[idx].as_mut().expect("open block").push(row);
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::import(field("header"), format!("unrecognized line `{line}`")))?;
            let value = value.trim();
            let channel = |v: &str| -> Result<RawChannel> {
                serde_json::from_str(v).map_err(|e| Error::import(field(key), e.to_string()))
            };
            match key.trim() {
                "format_version" => {
                    version = Some(
                        value
                            .parse::<u32>()
                            .map_err(|_| Error::import("format_version", format!("`{value}` is not an integer")))?,
                    )
                }
                "hidden_transfer" => hidden = Some(value.to_owned()),
                "output_transfer" => output = Some(value.to_owned()),
                "predictor" => predictors.push(channel(value)?),
                "target" => target = Some(channel(value)?),
                "provenance" => {
                    provenance = Some(
                        serde_json::from_str(value).map_err(|e| Error::import("provenance", e.to_string()))?,
                    )
                }
                other => return Err(Error::import(field(other), "unknown header key")),
            }
        }

        let missing = |name: &str| Error::import(name, "missing");
        let [lw1, lw2, b1, b2] = blocks;
        let column = |rows: Vec<Vec<String>>, name: &str| -> Result<Vec<String>> {
            rows.into_iter()
                .map(|r| match <[String; 1]>::try_from(r) {
                    Ok([v]) => Ok(v),
                    Err(r) => Err(Error::import(name, format!("expected one value per row, found {}", r.len()))),
                })
                .collect()
        };
        let single_row = |rows: Vec<Vec<String>>, name: &str| -> Result<Vec<String>> {
            match <[Vec<String>; 1]>::try_from(rows) {
                Ok([r]) => Ok(r),
                Err(r) => Err(Error::import(name, format!("expected one row, found {}", r.len()))),
            }
        };
        RawDocument {
            format_version: version.ok_or_else(|| missing("format_version"))?,
            predictors,
            target: target.ok_or_else(|| missing("target"))?,
            lw1: lw1.ok_or_else(|| missing("LW1"))?,
            b1: column(b1.ok_or_else(|| missing("b1"))?, "b1")?,
            lw2: single_row(lw2.ok_or_else(|| missing("LW2"))?, "lw2")?,
            b2: column(b2.ok_or_else(|| missing("b2"))?, "b2")?,
            hidden_transfer: hidden.ok_or_else(|| missing("hidden_transfer"))?,
            output_transfer: output.ok_or_else(|| missing("output_transfer"))?,
            provenance,
        }
        .into_document()
    }
}

/// Hidden-layer weights of the 8-predictor reference model, one row per neuron.
pub const EIGHT_LW1: [[f64; 8]; 8] = [
    [-25.978, -31.063, 17.505, 38.446, -37.353, 97.708, -92.951, 65.964],
    [3.295, 6.460, 0.203, -1.981, 10.078, -10.281, 3.352, -3.782],
    [-2.661, 2.503, -1.075, -1.011, -0.194, 1.702, -2.768, 1.690],
    [-6.069, 6.142, -2.212, -3.593, 1.800, -3.002, 0.222, 2.803],
    [-9.788, -7.748, -4.424, 27.227, -4.406, 0.016, -6.279, 8.460],
    [3.821, -6.233, 1.243, -1.449, 5.600, 1.846, 1.801, -5.862],
    [3.149, 6.319, 0.368, -0.825, 10.746, -11.220, 2.650, -3.428],
    [-2.127, 1.991, -1.116, -0.032, 0.038, 4.094, -4.882, 1.330],
];
pub const EIGHT_LW2: [f64; 8] = [0.158, -17.591, -6.481, 1.614, -0.369, -0.817, 17.345, 4.950];
pub const EIGHT_B1: [f64; 8] = [34.474, 4.001, -1.015, -2.615, 5.700, -0.148, 4.383, -1.959];
pub const EIGHT_B2: f64 = 1.593;

/// The recalibrated 3-predictor reference model (CO, NO2, Benzene).
pub const THREE_LW1: [[f64; 3]; 3] = [
    [26.281, 3.456, -12.391],
    [17.898, -0.863, 11.305],
    [-0.996, -0.502, -1.205],
];
pub const THREE_LW2: [f64; 3] = [-1.008, 1.379, -1.665];
pub const THREE_B1: [f64; 3] = [9.934, 21.939, 1.101];
pub const THREE_B2: f64 = 0.689;

/// PM2.5 bounds (µg/m³) of the smoothed reference dataset.
pub const REFERENCE_PM25_BOUNDS: (f64, f64) = (2.228, 180.052);

pub const EIGHT_PREDICTORS: [(&str, &str); 8] = [
    ("CO", "mg/m³"),
    ("NO2", "µg/m³"),
    ("SO2", "µg/m³"),
    ("Benzene", "µg/m³"),
    ("Toluene", "µg/m³"),
    ("Ethyl-Benzene", "µg/m³"),
    ("M-P-Xylene", "µg/m³"),
    ("O-Xylene", "µg/m³"),
];
pub const THREE_PREDICTORS: [(&str, &str); 3] = [("CO", "mg/m³"), ("NO2", "µg/m³"), ("Benzene", "µg/m³")];

/// Both published reference models.
#[derive(Debug, Clone)]
pub struct BundledModels {
    pub eight_predictor: MlpModel,
    pub three_predictor: MlpModel,
}

fn reference_model<const P: usize>(
    lw1: &[[f64; P]],
    b1: &[f64],
    lw2: &[f64],
    b2: f64,
    predictors: &[(&str, &str)],
) -> MlpModel {
    let s = lw1.len();
    let target_bounds = ChannelBounds::new(REFERENCE_PM25_BOUNDS.0, REFERENCE_PM25_BOUNDS.1)
        .expect("reference bounds are ordered");
    let inputs = predictors
        .iter()
        .map(|(n, u)| ChannelSpec::new(*n, *u, None))
        .collect();
    MlpModel::new(
        Matrix::new(s, P, lw1.iter().flatten().copied().collect()).expect("reference LW1"),
        Vector::new(b1.to_vec()).expect("reference b1"),
        Matrix::new(1, s, lw2.to_vec()).expect("reference LW2"),
        b2,
    )
    .and_then(|m| m.with_channels(inputs, ChannelSpec::new("PM2.5", "µg/m³", Some(target_bounds))))
    .expect("reference model shapes are consistent")
}

/// The 8- and 3-predictor reference models. Input bounds are not published,
/// so they are left unset and must be supplied before inference.
pub fn bundled_paper_models() -> BundledModels {
    BundledModels {
        eight_predictor: reference_model(&EIGHT_LW1, &EIGHT_B1, &EIGHT_LW2, EIGHT_B2, &EIGHT_PREDICTORS),
        three_predictor: reference_model(&THREE_LW1, &THREE_B1, &THREE_LW2, THREE_B2, &THREE_PREDICTORS),
    }
}

/// Looks up a bundled model by short name (`eight` / `three`).
pub fn bundled_by_name(name: &str) -> Option<MlpModel> {
    let b = bundled_paper_models();
    match name {
        "eight" | "8" | "eight-predictor" => Some(b.eight_predictor),
        "three" | "3" | "three-predictor" => Some(b.three_predictor),
        _ => None,
    }
}
