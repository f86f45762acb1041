//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use pm25net::dataset::{
    drop_incomplete_rows, smooth, ChannelBounds, NamedBounds, NormalizationBounds, SensorSeries,
};
use pm25net::exchange::{bundled_paper_models, export_model, AnalyticalModelDocument};
use pm25net::lite::LiteModel;
use pm25net::mlp::{forward, init_weights, jacobian, run_ensemble, train_weights, ChannelSpec, MlpModel, TrainingConfig, TrainingSet};
use pm25net::numeric::Matrix;
use pm25net::stats::{correlation_matrix, pearson, select_predictors, SelectionPolicy};
use pm25net::synthetic::{hourly_timestamps, station_series, teacher_dataset, StationConfig};
use pm25net::rng::seeded;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(elapsed < limit, format!("{detail}; {:.2?} (limit {:?})", elapsed, limit))
}

fn bundled_fidelity() -> Outcome {
    let lw1_8: [[f64; 8]; 8] = [
        [-25.978, -31.063, 17.505, 38.446, -37.353, 97.708, -92.951, 65.964],
        [3.295, 6.460, 0.203, -1.981, 10.078, -10.281, 3.352, -3.782],
        [-2.661, 2.503, -1.075, -1.011, -0.194, 1.702, -2.768, 1.690],
        [-6.069, 6.142, -2.212, -3.593, 1.800, -3.002, 0.222, 2.803],
        [-9.788, -7.748, -4.424, 27.227, -4.406, 0.016, -6.279, 8.460],
        [3.821, -6.233, 1.243, -1.449, 5.600, 1.846, 1.801, -5.862],
        [3.149, 6.319, 0.368, -0.825, 10.746, -11.220, 2.650, -3.428],
        [-2.127, 1.991, -1.116, -0.032, 0.038, 4.094, -4.882, 1.330],
    ];
    let lw2_8 = [0.158, -17.591, -6.481, 1.614, -0.369, -0.817, 17.345, 4.950];
    let b1_8 = [34.474, 4.001, -1.015, -2.615, 5.700, -0.148, 4.383, -1.959];
    let lw1_3: [[f64; 3]; 3] = [[26.281, 3.456, -12.391], [17.898, -0.863, 11.305], [-0.996, -0.502, -1.205]];
    let lw2_3 = [-1.008, 1.379, -1.665];
    let b1_3 = [9.934, 21.939, 1.101];

    let b = bundled_paper_models();
    let (e, t) = (&b.eight_predictor, &b.three_predictor);
    let mut ok = e.lw1().shape() == (8, 8) && t.lw1().shape() == (3, 3);
    ok &= (0..8).all(|j| e.lw1().row(j) == lw1_8[j]);
    ok &= e.lw2().as_slice() == lw2_8 && e.b1().as_slice() == b1_8 && e.b2() == 1.593;
    ok &= (0..3).all(|j| t.lw1().row(j) == lw1_3[j]);
    ok &= t.lw2().as_slice() == lw2_3 && t.b1().as_slice() == b1_3 && t.b2() == 0.689;
    // The exported text must carry the same decimals.
    let json = export_model(e, None).to_json();
    ok &= json.contains("\"97.708\"") && json.contains("\"1.593\"");
    check(ok, "8-predictor and 3-predictor weights match element-wise".into())
}

fn prediction_oracle() -> Outcome {
    let start = Instant::now();
    let mut three = bundled_paper_models().three_predictor;
    let y = forward(&three, &Matrix::zeros(3, 1)).map_err(|e| e.to_string())?.get(0);
    // Hand evaluation at x_n = 0: only the biases reach the hidden layer.
    let hand: f64 = 0.689
        + [(-1.008, 9.934), (1.379, 21.939), (-1.665, 1.101)]
            .iter()
            .map(|(w, b): &(f64, f64)| w / (1.0 + (-b).exp()))
            .sum::<f64>();
    let bounds = NormalizationBounds {
        channels: ["CO", "NO2", "Benzene"]
            .iter()
            .map(|n| NamedBounds { name: n.to_string(), min: 0.0, max: 1.0 })
            .collect(),
    };
    three.set_input_bounds(&bounds).map_err(|e| e.to_string())?;
    let lite = LiteModel::new(&three).map_err(|e| e.to_string())?.eval_normalized(&[0.0; 3]);
    let ok = (y + 0.18945).abs() <= 1e-4 && (lite - y).abs() <= 1e-9 && (hand - y).abs() <= 1e-12;
    within(
        start.elapsed(),
        Duration::from_secs(1),
        format!("forward {y:.7}, scalar loop differs by {:.1e}, hand oracle {hand:.7}", (lite - y).abs()),
    )
    .and_then(|d| check(ok, d))
}

fn denormalization_constants() -> Outcome {
    let b = ChannelBounds::new(2.228, 180.052).map_err(|e| e.to_string())?;
    let lo = b.denormalize(-1.0);
    let hi = b.denormalize(1.0);
    check(lo == 2.228 && hi == 180.052, format!("-1 -> {lo}, +1 -> {hi}"))
}

fn smoothing_count() -> Outcome {
    let start = Instant::now();
    let n = 18_880;
    let mut rng = seeded(4);
    let values = vec![(0..n).map(|_| Some(rng.random_range(0.0..100.0))).collect()];
    let s = SensorSeries::new(vec!["PM2.5".into()], hourly_timestamps(n), values).map_err(|e| e.to_string())?;
    let rows = smooth(&s, 500).map_err(|e| e.to_string())?.n_rows();
    within(start.elapsed(), Duration::from_secs(5), format!("{n} rows -> {rows} smoothed rows"))
        .and_then(|d| check(rows == 18_380, d))
}

/// Single-pass raw-moment form of the correlation coefficient.
fn raw_moment_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn pearson_oracle() -> Outcome {
    let mut rng = seeded(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let slope = rng.random_range(-2.0..2.0);
        let noise = rng.random_range(0.0..2.0);
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + noise * rng.random_range(-1.0..1.0)).collect();
        let r = pearson(&x, &y).map_err(|e| e.to_string())?;
        worst = worst.max((r - raw_moment_r(&x, &y)).abs());
    }
    let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-5.0..5.0)).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let same = pearson(&x, &x).map_err(|e| e.to_string())?;
    let opposite = pearson(&x, &neg).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-10 && same == 1.0 && opposite == -1.0,
        format!("max |two-pass - raw-moment| = {worst:.1e}; identical {same}, negated {opposite}"),
    )
}

/// `|a - f| / max(|a|, |f|, 1e-3)`: relative for ordinary entries, absolute
/// (scaled by 1e3) for entries near zero where finite differences carry only
/// round-off.
fn jacobian_error(p: usize, s: usize, seed: u64) -> Result<f64, String> {
    let h = 1e-6;
    let mut rng = seeded(seed);
    let base = init_weights(p, s, seed).map_err(|e| e.to_string())?;
    let w: Vec<f64> = base.params().iter().map(|_| rng.random_range(-3.0..3.0)).collect();
    let m = base.with_params(&w).map_err(|e| e.to_string())?;
    let n = 20;
    let x = Matrix::new(p, n, (0..p * n).map(|_| rng.random_range(-1.0..1.0)).collect()).map_err(|e| e.to_string())?;
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, jac) = jacobian(&m, &x, &t).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in 0..w.len() {
        let eval = |delta: f64| -> Result<Vec<f64>, String> {
            let mut wk = w.clone();
            wk[k] += delta;
            let mk = m.with_params(&wk).map_err(|e| e.to_string())?;
            Ok(forward(&mk, &x).map_err(|e| e.to_string())?.into_vec())
        };
        let (yp, ym) = (eval(h)?, eval(-h)?);
        for i in 0..n {
            // e = t - y, so de/dw = -dy/dw.
            let fd = -(yp[i] - ym[i]) / (2.0 * h);
            let a = jac.get(i, k);
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-3));
        }
    }
    Ok(worst)
}

fn jacobian_check() -> Outcome {
    let start = Instant::now();
    let small = jacobian_error(3, 3, 31)?;
    let large = jacobian_error(8, 8, 81)?;
    within(
        start.elapsed(),
        Duration::from_secs(10),
        format!("max relative error 3-3-1 {small:.1e}, 8-8-1 {large:.1e}"),
    )
    .and_then(|d| check(small <= 1e-5 && large <= 1e-5, d))
}

fn teacher_recovery() -> Outcome {
    let start = Instant::now();
    let data = teacher_dataset(3, 3, 2000, 7).map_err(|e| e.to_string())?;
    let set = TrainingSet::new(data.x_n.clone(), data.t.clone()).map_err(|e| e.to_string())?;
    let cfg = TrainingConfig { max_epochs: 1000, ..Default::default() };
    let mut best = f64::INFINITY;
    for r in 0..10 {
        let init = init_weights(3, 3, 1000 + r).map_err(|e| e.to_string())?;
        let out = train_weights(init, &set, None, &cfg).map_err(|e| e.to_string())?;
        let y = forward(&out.model, &set.x).map_err(|e| e.to_string())?;
        let rmse = pm25net::stats::rmse(&set.t, y.as_slice()).map_err(|e| e.to_string())?;
        best = best.min(rmse);
    }
    within(start.elapsed(), Duration::from_secs(120), format!("best training RMSE {best:.2e} (normalized)"))
        .and_then(|d| check(best <= 1e-2, d))
}

fn pipeline_end_to_end() -> Outcome {
    let start = Instant::now();
    let raw = station_series(&StationConfig { rows: 3000, seed: 1, ..Default::default() }).map_err(|e| e.to_string())?;
    let complete = drop_incomplete_rows(&raw).map_err(|e| e.to_string())?;
    let clean = smooth(&complete, 48).map_err(|e| e.to_string())?;
    let corr = correlation_matrix(&clean).map_err(|e| e.to_string())?;
    let selection = select_predictors(&corr, "PM2.5", &SelectionPolicy::exclude_no("NO")).map_err(|e| e.to_string())?;
    let predictors = selection.channels();
    let cfg = TrainingConfig { restarts: 20, seed: 2024, ..Default::default() };
    let ensemble = run_ensemble(&clean, &predictors, "PM2.5", &cfg).map_err(|e| e.to_string())?;
    let r2 = ensemble.best_run().metrics.unseen.r2;
    within(
        start.elapsed(),
        Duration::from_secs(600),
        format!("{} predictors, {} rows, unseen R² {r2:.5}", predictors.len(), clean.n_rows()),
    )
    .and_then(|d| check(predictors.len() == 8 && r2 >= 0.95, d))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = teacher_dataset(3, 3, 400, 9).map_err(|e| e.to_string())?;
    let csv = dir.path().join("teacher.csv");
    let mut buf = Vec::new();
    data.to_dataset().and_then(|d| d.write_csv(&mut buf)).map_err(|e| e.to_string())?;
    std::fs::write(&csv, buf).map_err(|e| e.to_string())?;
    let mut boards = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_pm25net"))
            .args(["train", csv.to_str().unwrap(), "--predictors", "x1,x2,x3", "--target", "y"])
            .args(["--restarts", "4", "--seed", "77", "--max-epochs", "200", "--out", out.to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        boards.push(std::fs::read(out.join("leaderboard.json")).map_err(|e| e.to_string())?);
    }
    check(
        boards[0] == boards[1] && !boards[0].is_empty(),
        format!("two runs with seed 77: leaderboard.json {} bytes, identical = {}", boards[0].len(), boards[0] == boards[1]),
    )
}

fn random_model(rng: &mut rand_chacha::ChaCha8Rng, i: u64) -> MlpModel {
    let p = rng.random_range(1..=9);
    let s = rng.random_range(1..=9);
    let base = init_weights(p, s, i).unwrap();
    let scale = 10f64.powi(rng.random_range(-6..=4));
    let w: Vec<f64> = base.params().iter().map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    let bounds = |rng: &mut rand_chacha::ChaCha8Rng| {
        rng.random_bool(0.7).then(|| {
            let lo: f64 = rng.random_range(-100.0..100.0);
            ChannelBounds::new(lo, lo + rng.random_range(1e-3..500.0)).unwrap()
        })
    };
    let inputs = (0..p).map(|k| ChannelSpec::new(format!("c{k}"), "µg/m³", bounds(rng))).collect();
    let target = ChannelSpec::new("PM2.5", "µg/m³", bounds(rng));
    base.with_params(&w).unwrap().with_channels(inputs, target).unwrap()
}

fn export_round_trip() -> Outcome {
    let mut rng = seeded(10);
    let mut identical = 0;
    for i in 0..100 {
        let doc = export_model(&random_model(&mut rng, i), None);
        let json = doc.to_json();
        let text = doc.render_text();
        let again = AnalyticalModelDocument::parse(json.as_bytes()).map_err(|e| e.to_string())?;
        let from_text = AnalyticalModelDocument::parse(text.as_bytes()).map_err(|e| e.to_string())?;
        if again.to_json() == json && from_text.to_json() == json && from_text.render_text() == text {
            identical += 1;
        }
    }
    check(identical == 100, format!("{identical}/100 documents byte-identical after export -> import -> export"))
}

fn normalization_round_trip() -> Outcome {
    let mut rng = seeded(11);
    let mut worst = 0.0f64;
    let mut outside = 0;
    for _ in 0..100_000 {
        let lo: f64 = rng.random_range(-1e3..1e3);
        let b = ChannelBounds::new(lo, lo + rng.random_range(1e-2..1e3)).unwrap();
        let span = b.max - b.min;
        let x = rng.random_range(b.min - 2.0 * span..b.max + 2.0 * span);
        if !b.contains(x) {
            outside += 1;
        }
        let x_n = b.normalize(x);
        // Compare in the normalized domain, where one unit is half the range.
        let err = (b.normalize(b.denormalize(x_n)) - x_n).abs().max(((b.denormalize(x_n) - x) / span).abs());
        worst = worst.max(err);
    }
    check(worst <= 1e-12, format!("max round-trip error {worst:.1e} over 1e5 pairs ({outside} out of range)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("bundled-model fidelity", bundled_fidelity),
        ("prediction-equation oracle", prediction_oracle),
        ("denormalization constants", denormalization_constants),
        ("smoothing count contract", smoothing_count),
        ("pearson oracle", pearson_oracle),
        ("jacobian check", jacobian_check),
        ("synthetic-teacher recovery", teacher_recovery),
        ("pipeline end-to-end", pipeline_end_to_end),
        ("determinism", determinism),
        ("export round trip", export_round_trip),
        ("normalization round trip", normalization_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2}. {name}: {detail}", i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
