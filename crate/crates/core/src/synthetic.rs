//! Synthetic station data for tests, demos and the acceptance suite.
//!
//! Two generators:
//!
//! * [`station_series`] draws hourly readings for the thirteen station
//!   channels. The pollutant channels and PM2.5 are affine functions of one
//!   slowly varying latent series plus noise. Temperature, humidity and
//!   part of ozone follow a second, independent series. Maintenance gaps are
//!   planted as blocks of missing cells.
//! * [`teacher_dataset`] samples a random network and records its outputs on
//!   uniform inputs, so a trainer can be checked against a known answer.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CleanDataset, SensorSeries};
use crate::error::{Error, Result};
use crate::mlp::{forward, init_weights, MlpModel};
use crate::numeric::Matrix;
use crate::rng::seeded;

/// Station channels in file order; PM2.5 last.
pub const STATION_CHANNELS: [&str; 13] = [
    "CO",
    "NO",
    "NO2",
    "SO2",
    "O3",
    "T",
    "RH",
    "Benzene",
    "Toluene",
    "Ethyl-Benzene",
    "M-P-Xylene",
    "O-Xylene",
    "PM2.5",
];

pub const TARGET_CHANNEL: &str = "PM2.5";

/// Parameters of [`station_series`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationConfig {
    pub rows: usize,
    pub seed: u64,
    /// Noise standard deviation relative to each channel's latent gain.
    pub noise: f64,
    /// Number of maintenance gaps to plant.
    pub gaps: usize,
    /// Longest gap in rows.
    pub max_gap: usize,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            rows: 5000,
            seed: 0,
            noise: 0.3,
            gaps: 20,
            max_gap: 48,
        }
    }
}

fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2013, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date")
}

pub fn hourly_timestamps(n: usize) -> Vec<NaiveDateTime> {
    let t0 = start_time();
    (0..n).map(|i| t0 + Duration::hours(i as i64)).collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 is kept away from zero.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Latent driver in roughly `[0, 1]`: a yearly cycle of amplitude
/// `seasonal`, a daily cycle and an AR(1) process with coefficient `memory`.
fn latent(rng: &mut ChaCha8Rng, n: usize, seasonal: f64, memory: f64) -> Vec<f64> {
    let mut walk = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64;
            walk = memory * walk + 0.02 * gaussian(rng);
            let year = (std::f64::consts::TAU * t / 8760.0).cos();
            let day = (std::f64::consts::TAU * t / 24.0).sin();
            (0.5 + seasonal * year + 0.05 * day + 0.15 * walk).clamp(0.0, 1.2)
        })
        .collect()
}

/// `(offset, gain)` in channel units for each pollutant channel.
fn affine(name: &str) -> (f64, f64) {
    match name {
        "CO" => (0.3, 2.5),
        "NO" => (5.0, 60.0),
        "NO2" => (10.0, 70.0),
        "SO2" => (4.0, 25.0),
        "O3" => (10.0, 30.0),
        "Benzene" => (0.5, 8.0),
        "Toluene" => (1.0, 25.0),
        "Ethyl-Benzene" => (0.5, 6.0),
        "M-P-Xylene" => (0.8, 12.0),
        "O-Xylene" => (0.3, 5.0),
        _ => (5.0, 150.0),
    }
}

/// Hourly readings for [`STATION_CHANNELS`] with planted gaps.
pub fn station_series(cfg: &StationConfig) -> Result<SensorSeries> {
    if cfg.rows == 0 {
        return Err(Error::Config("station series needs at least one row".into()));
    }
    let mut rng = seeded(cfg.seed);
    let n = cfg.rows;
    let z = latent(&mut rng, n, 0.3, 0.999);
    // Meteorology and ozone follow a second, independent driver.
    let w = latent(&mut rng, n, 0.0, 0.98);
    let mut values: Vec<Vec<Option<f64>>> = STATION_CHANNELS
        .iter()
        .map(|&name| match name {
            "T" => (0..n)
                .map(|i| {
                    let day = (std::f64::consts::TAU * (i as f64 - 9.0) / 24.0).sin();
                    Some(20.0 + 15.0 * w[i] + 4.0 * day + gaussian(&mut rng))
                })
                .collect(),
            "RH" => (0..n)
                .map(|i| Some((85.0 - 40.0 * w[i] + 5.0 * gaussian(&mut rng)).clamp(5.0, 100.0)))
                .collect(),
            _ => {
                let (a, b) = affine(name);
                let sigma = cfg.noise * b * 0.1;
                let mix = if name == "O3" { 0.97 } else { 0.0 };
                (0..n)
                    .map(|i| {
                        let d = (1.0 - mix) * z[i] + mix * w[i];
                        Some((a + b * d + sigma * gaussian(&mut rng)).max(0.01))
                    })
                    .collect()
            }
        })
        .collect();

    for _ in 0..cfg.gaps {
        let len = rng.random_range(1..=cfg.max_gap.max(1));
        let start = rng.random_range(0..n);
        let whole_station = rng.random_bool(0.3);
        let channel = rng.random_range(0..STATION_CHANNELS.len());
        for r in start..(start + len).min(n) {
            if whole_station {
                values.iter_mut().for_each(|c| c[r] = None);
            } else {
                values[channel][r] = None;
            }
        }
    }
    let names = STATION_CHANNELS.iter().map(|s| s.to_string()).collect();
    SensorSeries::new(names, hourly_timestamps(n), values)
}

/// Writes a [`SensorSeries`] as CSV with `NA` for missing cells.
pub fn write_series_csv<W: std::io::Write>(s: &SensorSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(s.channel_names().iter().cloned());
    w.write_record(&header)?;
    let cols: Vec<&[Option<f64>]> = s
        .channel_names()
        .iter()
        .map(|n| s.channel(n).expect("own channel"))
        .collect();
    for (r, t) in s.timestamps().iter().enumerate() {
        let mut rec = vec![crate::dataset::format_timestamp(t)];
        rec.extend(cols.iter().map(|c| c[r].map_or_else(|| "NA".to_string(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// A random teacher network and `n` noise-free samples of it.
#[derive(Debug, Clone)]
pub struct TeacherData {
    pub teacher: MlpModel,
    /// `P × n`, uniform on `[-1, 1]`.
    pub x_n: Matrix,
    pub t: Vec<f64>,
}

pub fn teacher_dataset(n_inputs: usize, n_hidden: usize, n: usize, seed: u64) -> Result<TeacherData> {
    let mut rng = seeded(seed);
    // Larger weights than the initializer uses, so the target is not nearly linear.
    let base = init_weights(n_inputs, n_hidden, rng.random())?;
    let w: Vec<f64> = base.params().iter().map(|v| v * 2.0).collect();
    let teacher = base.with_params(&w)?;
    let x: Vec<f64> = (0..n_inputs * n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let x_n = Matrix::new(n_inputs, n, x)?;
    let t = forward(&teacher, &x_n)?.into_vec();
    Ok(TeacherData { teacher, x_n, t })
}

impl TeacherData {
    /// The samples as a dataset with channels `x1..xP` and `y`, mapped from
    /// `[-1, 1]` to `[0, 100]` so they look like raw readings.
    pub fn to_dataset(&self) -> Result<CleanDataset> {
        let (p, n) = self.x_n.shape();
        let mut names: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
        names.push("y".into());
        let mut cols: Vec<Vec<f64>> = (0..p)
            .map(|k| self.x_n.row(k).iter().map(|v| 50.0 * (v + 1.0)).collect())
            .collect();
        cols.push(self.t.iter().map(|v| 50.0 * (v + 1.0)).collect());
        CleanDataset::from_columns(names, hourly_timestamps(n), cols)
    }
}
