//! Hourly sensor ingestion, gap removal, smoothing, min-max normalization
//! and the SET1/SET2 split.

use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::rng::seeded;

/// Lower end of the normalized range.
pub const Y_MIN: f64 = -1.0;
/// Upper end of the normalized range.
pub const Y_MAX: f64 = 1.0;

/// Moving-average window used when none is given.
pub const DEFAULT_WINDOW: usize = 500;

const TIMESTAMP_OUT: &str = "%Y-%m-%dT%H:%M:%S";
const TIMESTAMP_IN: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 timestamp. Values with an offset are converted to UTC.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    TIMESTAMP_IN
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_OUT).to_string()
}

/// Timestamped multi-channel readings; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    channel_names: Vec<String>,
    timestamps: Vec<NaiveDateTime>,
    values: Vec<Vec<Option<f64>>>,
    source_rows: usize,
}

impl SensorSeries {
    /// `values` holds one vector per channel.
    pub fn new(
        channel_names: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if channel_names.len() != values.len() {
            return Err(Error::shape(
                "SensorSeries::new",
                format!("{} channel names", channel_names.len()),
                format!("{} value columns", values.len()),
            ));
        }
        for (name, col) in channel_names.iter().zip(&values) {
            if col.len() != timestamps.len() {
                return Err(Error::shape(
                    "SensorSeries::new",
                    format!("{} timestamps", timestamps.len()),
                    format!("channel {name} with {} values", col.len()),
                ));
            }
            if col.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("sensor series"));
            }
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Ingest {
                row: i + 2,
                message: "timestamps are not strictly increasing".into(),
            });
        }
        let source_rows = timestamps.len();
        Ok(Self {
            channel_names,
            timestamps,
            values,
            source_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn channel(&self, name: &str) -> Option<&[Option<f64>]> {
        let i = self.channel_names.iter().position(|c| c == name)?;
        Some(&self.values[i])
    }

    /// Rows originally ingested, before any rows were dropped.
    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|c| c.iter().all(Option::is_some))
    }

    fn complete_columns(&self) -> Result<Vec<Vec<f64>>> {
        self.values
            .iter()
            .zip(&self.channel_names)
            .map(|(col, name)| {
                col.iter()
                    .enumerate()
                    .map(|(row, v)| {
                        v.ok_or_else(|| Error::Ingest {
                            row: row + 1,
                            message: format!("missing value in channel {name}"),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "NA"
}

/// Reads a CSV with a timestamp first column and one column per channel.
///
/// When `schema` is given every header column must be one of its channels and
/// every schema channel must be present. Empty fields and `NA` become missing
/// cells. Row numbers in errors are 1-based data rows (the header is row 0).
pub fn ingest_csv<R: Read>(source: R, schema: Option<&[&str]>) -> Result<SensorSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(|e| Error::Ingest {
        row: 0,
        message: e.to_string(),
    })?;
    if header.len() < 2 {
        return Err(Error::Ingest {
            row: 0,
            message: "expected a timestamp column and at least one channel".into(),
        });
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if let Some(schema) = schema {
        if let Some(unknown) = names.iter().find(|n| !schema.contains(&n.as_str())) {
            return Err(Error::Ingest {
                row: 0,
                message: format!("unknown column `{unknown}`"),
            });
        }
        if let Some(absent) = schema.iter().find(|s| !names.iter().any(|n| n == *s)) {
            return Err(Error::Ingest {
                row: 0,
                message: format!("missing column `{absent}`"),
            });
        }
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Ingest {
                row: 0,
                message: format!("duplicate column `{n}`"),
            });
        }
    }

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Ingest {
            row,
            message: e.to_string(),
        })?;
        let ts_field = record.get(0).unwrap_or_default();
        let ts = parse_timestamp(ts_field).ok_or_else(|| Error::Ingest {
            row,
            message: format!("unparseable timestamp `{ts_field}`"),
        })?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(Error::Ingest {
                    row,
                    message: format!("timestamp `{ts_field}` does not increase (duplicate or out of order)"),
                });
            }
        }
        timestamps.push(ts);
        for (c, field) in record.iter().skip(1).enumerate() {
            let cell = if is_missing(field) {
                None
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Ingest {
                    row,
                    message: format!("unparseable number `{field}` in column `{}`", names[c]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingest {
                        row,
                        message: format!("non-finite number in column `{}`", names[c]),
                    });
                }
                Some(v)
            };
            values[c].push(cell);
        }
    }
    SensorSeries::new(names, timestamps, values)
}

/// Keeps only rows where every channel has a value, preserving order.
pub fn drop_incomplete_rows(s: &SensorSeries) -> Result<SensorSeries> {
    let keep: Vec<usize> = (0..s.len())
        .filter(|&r| s.values.iter().all(|c| c[r].is_some()))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyDataset("dropping incomplete rows"));
    }
    Ok(SensorSeries {
        channel_names: s.channel_names.clone(),
        timestamps: keep.iter().map(|&r| s.timestamps[r]).collect(),
        values: s
            .values
            .iter()
            .map(|c| keep.iter().map(|&r| c[r]).collect())
            .collect(),
        source_rows: s.source_rows,
    })
}

/// Row accounting from raw ingestion to the retained dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub raw_rows: usize,
    pub dropped_missing: usize,
    pub dropped_warmup: usize,
    pub retained: usize,
}

/// Gap-free real-valued channels, one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanDataset {
    channel_names: Vec<String>,
    timestamps: Vec<NaiveDateTime>,
    columns: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl CleanDataset {
    /// Wraps an already complete series without smoothing.
    pub fn from_complete(s: &SensorSeries) -> Result<Self> {
        let columns = s.complete_columns()?;
        if s.is_empty() {
            return Err(Error::EmptyDataset("ingestion"));
        }
        Ok(Self {
            channel_names: s.channel_names.clone(),
            timestamps: s.timestamps.clone(),
            columns,
            provenance: Provenance {
                raw_rows: s.source_rows,
                dropped_missing: s.source_rows - s.len(),
                dropped_warmup: 0,
                retained: s.len(),
            },
        })
    }

    /// Builds a dataset from columns directly; provenance counts every row as
    /// retained.
    pub fn from_columns(
        channel_names: Vec<String>,
        timestamps: Vec<NaiveDateTime>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let values = columns
            .into_iter()
            .map(|c| c.into_iter().map(Some).collect())
            .collect();
        Self::from_complete(&SensorSeries::new(channel_names, timestamps, values)?)
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_owned()))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.columns[self.channel_index(name)?])
    }

    /// Writes `timestamp,<channels...>` CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_owned()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![format_timestamp(&self.timestamps[r])];
            rec.extend(self.columns.iter().map(|c| c[r].to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

/// Trailing moving average over `window` samples. The first `window` outputs
/// are discarded, so the result has `len - window` rows.
pub fn smooth(s: &SensorSeries, window: usize) -> Result<CleanDataset> {
    if window == 0 {
        return Err(Error::Config("smoothing window must be at least 1".into()));
    }
    let columns = s.complete_columns()?;
    let n = s.len();
    if n <= window {
        return Err(Error::InsufficientData {
            len: n,
            needed: window,
        });
    }
    let smoothed = columns.iter().map(|c| trailing_mean(c, window)).collect();
    let provenance = Provenance {
        raw_rows: s.source_rows,
        dropped_missing: s.source_rows - n,
        dropped_warmup: window,
        retained: n - window,
    };
    Ok(CleanDataset {
        channel_names: s.channel_names.clone(),
        timestamps: s.timestamps[window..].to_vec(),
        columns: smoothed,
        provenance,
    })
}

/// Mean of `x[t-window+1..=t]` for `t = window..len`.
fn trailing_mean(x: &[f64], window: usize) -> Vec<f64> {
    let w = window as f64;
    let mut sum: f64 = x[..window].iter().sum();
    let mut out = Vec::with_capacity(x.len() - window);
    for t in window..x.len() {
        if (t - window).is_multiple_of(window) {
            // Re-anchor periodically so the running sum cannot drift.
            sum = x[t + 1 - window..=t].iter().sum();
        } else {
            sum += x[t] - x[t - window];
        }
        out.push(sum / w);
    }
    out
}

/// Min/max of one channel in original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelBounds {
    pub min: f64,
    pub max: f64,
}

impl ChannelBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::NonFinite("channel bounds"));
        }
        if max <= min {
            return Err(Error::Config(format!("bounds require max > min, got ({min}, {max})")));
        }
        Ok(Self { min, max })
    }

    /// `(Y_MAX - Y_MIN)(x - min)/(max - min) + Y_MIN`; no clipping.
    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (Y_MAX - Y_MIN) * (x - self.min) / (self.max - self.min) + Y_MIN
    }

    /// Inverse of [`ChannelBounds::normalize`].
    #[inline]
    pub fn denormalize(&self, x_n: f64) -> f64 {
        (x_n - Y_MIN) * (self.max - self.min) / (Y_MAX - Y_MIN) + self.min
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

/// Bounds of one named channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedBounds {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl NamedBounds {
    pub fn bounds(&self) -> ChannelBounds {
        ChannelBounds {
            min: self.min,
            max: self.max,
        }
    }
}

/// Per-channel normalization bounds; the target range is always `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub channels: Vec<NamedBounds>,
}

impl NormalizationBounds {
    pub fn get(&self, name: &str) -> Option<ChannelBounds> {
        self.channels.iter().find(|c| c.name == name).map(NamedBounds::bounds)
    }

    pub fn require(&self, name: &str) -> Result<ChannelBounds> {
        self.get(name)
            .ok_or_else(|| Error::UnknownChannel(name.to_owned()))
    }
}

/// Per-channel min and max over the dataset.
pub fn fit_bounds(d: &CleanDataset) -> Result<NormalizationBounds> {
    let channels = d
        .channel_names
        .iter()
        .zip(&d.columns)
        .map(|(name, col)| {
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= min {
                return Err(Error::DegenerateChannel(name.clone()));
            }
            Ok(NamedBounds {
                name: name.clone(),
                min,
                max,
            })
        })
        .collect::<Result<_>>()?;
    Ok(NormalizationBounds { channels })
}

/// Count of values outside the fitted range, per channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeFlag {
    pub channel: String,
    pub below: usize,
    pub above: usize,
}

/// Normalized channels as a `channels × rows` matrix plus range flags.
#[derive(Debug, Clone)]
pub struct NormalizedData {
    pub channel_names: Vec<String>,
    pub matrix: Matrix,
    pub out_of_range: Vec<RangeFlag>,
}

impl NormalizedData {
    /// Rows of `matrix` for the named channels, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Matrix> {
        let idx = names
            .iter()
            .map(|n| {
                self.channel_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| Error::UnknownChannel(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let cols = self.matrix.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(self.matrix.row(i));
        }
        Ok(Matrix::from_raw(idx.len(), cols, data))
    }
}

/// Applies min-max normalization to every channel. Values outside the bounds
/// extrapolate linearly and are counted in `out_of_range`.
pub fn normalize(d: &CleanDataset, b: &NormalizationBounds) -> Result<NormalizedData> {
    let n = d.n_rows();
    let mut data = Vec::with_capacity(n * d.channel_names.len());
    let mut flags = Vec::new();
    for (name, col) in d.channel_names.iter().zip(&d.columns) {
        let cb = b.require(name)?;
        let (mut below, mut above) = (0, 0);
        for &x in col {
            if x < cb.min {
                below += 1;
            } else if x > cb.max {
                above += 1;
            }
            data.push(cb.normalize(x));
        }
        if below + above > 0 {
            flags.push(RangeFlag {
                channel: name.clone(),
                below,
                above,
            });
        }
    }
    Ok(NormalizedData {
        channel_names: d.channel_names.clone(),
        matrix: Matrix::new(d.channel_names.len(), n, data)?,
        out_of_range: flags,
    })
}

pub fn denormalize(x_n: f64, bounds: &ChannelBounds) -> f64 {
    bounds.denormalize(x_n)
}

/// Fraction of rows held out as the unseen set, in percent.
pub const SET2_PERCENT: usize = 10;
/// Validation and test shares of SET1, in percent each. Training takes the rest.
pub const VALIDATION_PERCENT: usize = 15;
pub const TEST_PERCENT: usize = 15;

/// Row indices of the four partitions.
///
/// Sizes use floor division; the rounding remainder goes to training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub set2: Vec<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn n_rows(&self) -> usize {
        self.set2.len() + self.set1_len()
    }

    pub fn set1_len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn set1(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .copied()
            .collect();
        all.sort_unstable();
        all
    }

    /// Keeps SET2 and redraws the training/validation/test partition of SET1.
    pub fn resplit_set1(&self, seed: u64) -> SplitPlan {
        let mut set1 = self.set1();
        let mut rng = seeded(seed);
        set1.shuffle(&mut rng);
        let (train, validation, test) = partition_set1(set1);
        SplitPlan {
            seed,
            set2: self.set2.clone(),
            train,
            validation,
            test,
        }
    }
}

fn partition_set1(shuffled: Vec<usize>) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let n1 = shuffled.len();
    let n_val = n1 * VALIDATION_PERCENT / 100;
    let n_test = n1 * TEST_PERCENT / 100;
    let mut validation = shuffled[..n_val].to_vec();
    let mut test = shuffled[n_val..n_val + n_test].to_vec();
    let mut train = shuffled[n_val + n_test..].to_vec();
    validation.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    (train, validation, test)
}

/// Random permutation of `0..n_rows` split into SET2 (10%) and a 70/15/15
/// partition of the remaining SET1.
pub fn make_split(n_rows: usize, seed: u64) -> Result<SplitPlan> {
    if n_rows < 10 {
        return Err(Error::InsufficientData {
            len: n_rows,
            needed: 9,
        });
    }
    let mut rng = seeded(seed);
    let mut perm: Vec<usize> = (0..n_rows).collect();
    perm.shuffle(&mut rng);
    let n2 = n_rows * SET2_PERCENT / 100;
    let mut set2 = perm[..n2].to_vec();
    set2.sort_unstable();
    let (train, validation, test) = partition_set1(perm[n2..].to_vec());
    Ok(SplitPlan {
        seed,
        set2,
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(i: usize) -> NaiveDateTime {
        parse_timestamp("2016-01-01T00:00:00").unwrap() + chrono::Duration::hours(i as i64)
    }

    fn series(cols: Vec<Vec<Option<f64>>>) -> SensorSeries {
        let n = cols[0].len();
        let names = (0..cols.len()).map(|i| format!("c{i}")).collect();
        SensorSeries::new(names, (0..n).map(ts).collect(), cols).unwrap()
    }

    fn complete(cols: Vec<Vec<f64>>) -> SensorSeries {
        series(cols.into_iter().map(|c| c.into_iter().map(Some).collect()).collect())
    }

    const CSV3: &str = "timestamp,CO,PM2.5\n\
        2016-01-01T00:00:00,1.2,40\n\
        2016-01-01T01:00:00,1.4,42.5\n\
        2016-01-01 02:00:00,1.1,39\n";

    #[test]
    fn ingest_well_formed() {
        let s = ingest_csv(CSV3.as_bytes(), Some(&["CO", "PM2.5"])).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.channel("PM2.5").unwrap()[1], Some(42.5));
    }

    #[test]
    fn ingest_marks_missing() {
        let src = "timestamp,CO,PM2.5\n2016-01-01T00:00:00,NA,40\n2016-01-01T01:00:00,1.0,\n";
        let s = ingest_csv(src.as_bytes(), None).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.channel("CO").unwrap()[0], None);
        assert_eq!(s.channel("PM2.5").unwrap()[1], None);
    }

    #[test]
    fn ingest_rejects_duplicate_timestamp_with_row() {
        let src = "timestamp,CO\n2016-01-01T00:00:00,1\n2016-01-01T01:00:00,2\n2016-01-01T01:00:00,3\n";
        match ingest_csv(src.as_bytes(), None) {
            Err(Error::Ingest { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_unknown_column_and_bad_number() {
        assert!(matches!(
            ingest_csv(CSV3.as_bytes(), Some(&["CO"])),
            Err(Error::Ingest { row: 0, .. })
        ));
        let src = "timestamp,CO\n2016-01-01T00:00:00,1\n2016-01-01T01:00:00,abc\n";
        assert!(matches!(ingest_csv(src.as_bytes(), None), Err(Error::Ingest { row: 2, .. })));
    }

    #[test]
    fn drop_keeps_complete_series_identical() {
        let s = complete(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(drop_incomplete_rows(&s).unwrap(), s);
    }

    #[test]
    fn drop_counts_match_planted_gaps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (n, channels) = (2000, 13);
        let cols: Vec<Vec<Option<f64>>> = (0..channels)
            .map(|_| {
                (0..n)
                    .map(|_| (!rng.random_bool(0.03)).then(|| rng.random_range(0.0..100.0)))
                    .collect()
            })
            .collect();
        // Counting oracle: rows with every channel present.
        let expected = (0..n).filter(|&r| cols.iter().all(|c| c[r].is_some())).count();
        let s = series(cols);
        let kept = drop_incomplete_rows(&s).unwrap();
        assert_eq!(kept.len(), expected);
        assert!(kept.is_complete());
        assert_eq!(kept.source_rows(), n);
    }

    #[test]
    fn drop_all_incomplete_is_error() {
        let s = series(vec![vec![Some(1.0), Some(2.0)], vec![None, None]]);
        assert!(matches!(drop_incomplete_rows(&s), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn smoothing_constant_ramp_and_counts() {
        let s = complete(vec![vec![3.7; 50]]);
        let d = smooth(&s, 7).unwrap();
        assert!(d.columns()[0].iter().all(|v| (v - 3.7).abs() < 1e-12));

        let ramp = complete(vec![(0..20).map(|t| t as f64).collect()]);
        let d = smooth(&ramp, 3).unwrap();
        assert_eq!(d.n_rows(), 17);
        for (k, v) in d.columns()[0].iter().enumerate() {
            let t = (k + 3) as f64;
            assert!((v - (t - 1.0)).abs() < 1e-12);
        }
        assert_eq!(d.timestamps()[0], ts(3));
        let p = d.provenance();
        assert_eq!((p.raw_rows, p.dropped_missing, p.dropped_warmup, p.retained), (20, 0, 3, 17));
    }

    #[test]
    fn smoothing_needs_more_rows_than_window() {
        let s = complete(vec![vec![1.0, 2.0, 3.0]]);
        assert!(matches!(smooth(&s, 3), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn bounds_fit_and_degenerate() {
        let d = CleanDataset::from_complete(&complete(vec![vec![2.0, 5.0, 3.0]])).unwrap();
        let b = fit_bounds(&d).unwrap();
        assert_eq!(b.get("c0"), Some(ChannelBounds { min: 2.0, max: 5.0 }));
        let d = CleanDataset::from_complete(&complete(vec![vec![7.0; 3]])).unwrap();
        assert!(matches!(fit_bounds(&d), Err(Error::DegenerateChannel(_))));
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let b = ChannelBounds::new(2.228, 180.052).unwrap();
        assert_eq!(b.normalize(2.228), -1.0);
        assert_eq!(b.normalize(180.052), 1.0);
        assert!(b.normalize(91.14).abs() < 1e-12);
        assert_eq!(denormalize(-1.0, &b), 2.228);
        assert_eq!(denormalize(1.0, &b), 180.052);
    }

    #[test]
    fn normalize_flags_out_of_range() {
        let d = CleanDataset::from_complete(&complete(vec![vec![0.0, 10.0, 20.0]])).unwrap();
        let b = NormalizationBounds {
            channels: vec![NamedBounds { name: "c0".into(), min: 5.0, max: 15.0 }],
        };
        let n = normalize(&d, &b).unwrap();
        assert_eq!(n.matrix.row(0), &[-2.0, 0.0, 2.0]);
        assert_eq!(n.out_of_range, vec![RangeFlag { channel: "c0".into(), below: 1, above: 1 }]);
    }

    #[test]
    fn split_sizes() {
        let p = make_split(18_380, 1).unwrap();
        assert_eq!(p.set2.len(), 1838);
        let p = make_split(10, 5).unwrap();
        assert_eq!(
            (p.set2.len(), p.train.len(), p.validation.len(), p.test.len()),
            (1, 7, 1, 1)
        );
        assert_eq!(make_split(10, 5).unwrap(), p);
        assert!(make_split(9, 0).is_err());
    }

    #[test]
    fn resplit_keeps_set2() {
        let p = make_split(500, 3).unwrap();
        let q = p.resplit_set1(99);
        assert_eq!(p.set2, q.set2);
        assert_eq!(p.set1(), q.set1());
        assert_ne!(p.train, q.train);
    }

    proptest! {
        #[test]
        fn smooth_length_contract(len in 2usize..200, frac in 0.0f64..1.0) {
            let window = 1 + ((len - 2) as f64 * frac) as usize;
            let s = complete(vec![(0..len).map(|i| (i as f64).sin()).collect()]);
            prop_assert_eq!(smooth(&s, window).unwrap().n_rows(), len - window);
        }

        #[test]
        fn normalized_training_values_in_range(values in proptest::collection::vec(-1e3f64..1e3, 2..100)) {
            prop_assume!(values.iter().any(|v| *v != values[0]));
            let d = CleanDataset::from_complete(&complete(vec![values])).unwrap();
            let b = fit_bounds(&d).unwrap();
            let n = normalize(&d, &b).unwrap();
            let row = n.matrix.row(0);
            prop_assert!(row.iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert!(row.contains(&-1.0) && row.contains(&1.0));
            prop_assert!(n.out_of_range.is_empty());
        }

        #[test]
        fn round_trip_within_ten_ranges(min in -100.0f64..200.0, width in 0.1f64..500.0, x_n in -21.0f64..21.0) {
            let b = ChannelBounds::new(min, min + width).unwrap();
            prop_assert!((b.normalize(b.denormalize(x_n)) - x_n).abs() <= 1e-12);
            let x = b.denormalize(x_n);
            prop_assert!((b.denormalize(b.normalize(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn split_is_disjoint_partition(n in 10usize..3000, seed in any::<u64>()) {
            let p = make_split(n, seed).unwrap();
            let mut all: Vec<usize> = p.set2.iter().chain(&p.train).chain(&p.validation).chain(&p.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let n1 = n - n / 10;
            prop_assert_eq!(p.set2.len(), n / 10);
            prop_assert!((p.validation.len() as f64 - 0.15 * n1 as f64).abs() <= 1.0);
            prop_assert!((p.test.len() as f64 - 0.15 * n1 as f64).abs() <= 1.0);
            // Training absorbs both floor remainders.
            prop_assert!((p.train.len() as f64 - 0.70 * n1 as f64).abs() < 2.0);
        }
    }
}
