//! Levenberg-Marquardt training with validation early stopping.

use serde::{Deserialize, Serialize};

use super::{forward, jacobian, MlpModel, INIT_SCHEME};
use crate::dataset::{ChannelBounds, SplitPlan};
use crate::error::{Error, Result};
use crate::numeric::{solve_spd, Matrix};
use crate::rng::RNG_ALGORITHM;
use crate::stats::{r_squared, rmse};

/// Damping never drops below this, so repeated decreases cannot reach zero.
const MU_FLOOR: f64 = 1e-20;

/// LM and restart settings. Defaults follow the usual `trainlm` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub mu_init: f64,
    pub mu_inc: f64,
    pub mu_dec: f64,
    pub mu_max: f64,
    pub validation_patience: usize,
    pub goal_mse: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Hidden layer size; `None` uses the number of predictors.
    pub hidden_neurons: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            mu_init: 1e-3,
            mu_inc: 10.0,
            mu_dec: 0.1,
            mu_max: 1e10,
            validation_patience: 6,
            goal_mse: 0.0,
            restarts: 100,
            seed: 0,
            hidden_neurons: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.mu_inc > 1.0) {
            return bad("mu_inc must be > 1");
        }
        if !(self.mu_dec > 0.0 && self.mu_dec < 1.0) {
            return bad("mu_dec must be in (0, 1)");
        }
        if !(self.mu_init > 0.0 && self.mu_max > self.mu_init) {
            return bad("need 0 < mu_init < mu_max");
        }
        if self.validation_patience == 0 {
            return bad("validation_patience must be at least 1");
        }
        if !(self.goal_mse >= 0.0) {
            return bad("goal_mse must be non-negative");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if self.hidden_neurons == Some(0) {
            return bad("hidden_neurons must be at least 1");
        }
        Ok(())
    }
}

/// Normalized inputs (`P × N`) and targets (`N`).
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Matrix,
    pub t: Vec<f64>,
}

impl TrainingSet {
    pub fn new(x: Matrix, t: Vec<f64>) -> Result<Self> {
        if x.cols() != t.len() {
            return Err(Error::shape(
                "TrainingSet::new",
                format!("x {}x{}", x.rows(), x.cols()),
                format!("{} targets", t.len()),
            ));
        }
        Ok(Self { x, t })
    }

    /// Columns `idx` of `x` and the matching targets.
    pub fn gather(x: &Matrix, t: &[f64], idx: &[usize]) -> Self {
        Self {
            x: x.select_columns(idx),
            t: idx.iter().map(|&i| t[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// The four partitions of one run plus the target bounds used to report
/// metrics in original units.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub plan: SplitPlan,
    pub train: TrainingSet,
    pub validation: TrainingSet,
    pub test: TrainingSet,
    pub unseen: TrainingSet,
    pub target_bounds: ChannelBounds,
}

impl DataSplits {
    pub fn from_plan(x: &Matrix, t: &[f64], plan: SplitPlan, target_bounds: ChannelBounds) -> Self {
        Self {
            train: TrainingSet::gather(x, t, &plan.train),
            validation: TrainingSet::gather(x, t, &plan.validation),
            test: TrainingSet::gather(x, t, &plan.test),
            unseen: TrainingSet::gather(x, t, &plan.set2),
            plan,
            target_bounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    MuExceeded,
    ValidationPatience,
    Goal,
}

/// Training state after an accepted step (epoch 0 is the initial state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub model: MlpModel,
    pub epochs_used: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<EpochRecord>,
}

fn sse(model: &MlpModel, set: &TrainingSet) -> Result<f64> {
    let y = forward(model, &set.x)?;
    Ok(set
        .t
        .iter()
        .zip(y.as_slice())
        .map(|(t, y)| (t - y) * (t - y))
        .sum())
}

fn mse(model: &MlpModel, set: &TrainingSet) -> Result<f64> {
    Ok(sse(model, set)? / set.len() as f64)
}

/// Runs Levenberg-Marquardt on `train`, minimizing `½‖e‖²`.
///
/// Each epoch solves `(JᵀJ + μI)·Δ = Jᵀe` and tries `w - Δ`. A step that
/// lowers the training SSE is accepted and `μ` shrinks by `mu_dec`; otherwise
/// `μ` grows by `mu_inc` and the solve is retried. A failed factorization is
/// treated like a rejected step. When `validation` is non-empty, training
/// stops after `validation_patience` accepted steps without a new best
/// validation MSE and the best-validation weights are returned.
pub fn train_weights(
    model: MlpModel,
    train: &TrainingSet,
    validation: Option<&TrainingSet>,
    config: &TrainingConfig,
) -> Result<LmOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("splitting (training set)"));
    }
    let validation = validation.filter(|v| !v.is_empty());
    let n = train.len() as f64;

    let mut w = model.params();
    let mut current = model;
    let (mut e, mut jac) = jacobian(&current, &train.x, &train.t)?;
    let mut train_sse = e.dot(&e);
    if !train_sse.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0 });
    }
    let mut mu = config.mu_init;

    let mut best_val = match validation {
        Some(v) => mse(&current, v)?,
        None => f64::INFINITY,
    };
    let mut best = current.clone();
    let mut fails = 0;
    let mut trace = vec![EpochRecord {
        epoch: 0,
        train_mse: train_sse / n,
        validation_mse: validation.map(|_| best_val),
        mu,
    }];

    let mut epochs_used = 0;
    let mut stop = StopReason::MaxEpochs;
    'epochs: for epoch in 1..=config.max_epochs {
        if train_sse / n <= config.goal_mse {
            stop = StopReason::Goal;
            break;
        }
        let hessian = jac.gram();
        let gradient = jac.transpose_mul_vec(&e)?;
        loop {
            match solve_spd(&hessian.add_diagonal(mu), &gradient) {
                Ok(step) => {
                    let trial: Vec<f64> = w.iter().zip(step.as_slice()).map(|(a, d)| a - d).collect();
                    if let Ok(candidate) = current.with_params(&trial) {
                        let sse_new = sse(&candidate, train)?;
                        if !sse_new.is_finite() {
                            return Err(Error::TrainingDiverged { epoch });
                        }
                        if sse_new < train_sse {
                            (e, jac) = jacobian(&candidate, &train.x, &train.t)?;
                            w = trial;
                            current = candidate;
                            train_sse = sse_new;
                            mu = (mu * config.mu_dec).max(MU_FLOOR);
                            break;
                        }
                    }
                }
                Err(Error::NotPositiveDefinite { .. })
                | Err(Error::IllConditioned { .. })
                | Err(Error::NonFinite(_)) => {}
                Err(other) => return Err(other),
            }
            mu *= config.mu_inc;
            if mu > config.mu_max {
                stop = StopReason::MuExceeded;
                break 'epochs;
            }
        }

        epochs_used = epoch;
        let val_mse = match validation {
            Some(v) => {
                let m = mse(&current, v)?;
                if m < best_val {
                    best_val = m;
                    best = current.clone();
                    fails = 0;
                } else {
                    fails += 1;
                }
                Some(m)
            }
            None => {
                best = current.clone();
                None
            }
        };
        trace.push(EpochRecord {
            epoch,
            train_mse: train_sse / n,
            validation_mse: val_mse,
            mu,
        });
        if validation.is_some() && fails >= config.validation_patience {
            stop = StopReason::ValidationPatience;
            break;
        }
    }

    Ok(LmOutcome {
        model: best,
        epochs_used,
        stop_reason: stop,
        trace,
    })
}

/// Error statistics of one partition. `rmse` and `r2` are in target units;
/// `r2` is 0 when it is undefined (fewer than two samples or a constant
/// series).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub n: usize,
    pub rmse: f64,
    pub r2: f64,
    pub rmse_normalized: f64,
}

impl SetMetrics {
    pub fn evaluate(model: &MlpModel, set: &TrainingSet, target: &ChannelBounds) -> Result<Self> {
        if set.is_empty() {
            return Ok(Self {
                n: 0,
                rmse: 0.0,
                r2: 0.0,
                rmse_normalized: 0.0,
            });
        }
        let y = forward(model, &set.x)?;
        let rmse_normalized = rmse(&set.t, y.as_slice())?;
        let actual: Vec<f64> = set.t.iter().map(|v| target.denormalize(*v)).collect();
        let predicted: Vec<f64> = y.as_slice().iter().map(|v| target.denormalize(*v)).collect();
        Ok(Self {
            n: set.len(),
            rmse: rmse(&actual, &predicted)?,
            r2: r_squared(&actual, &predicted).unwrap_or(0.0),
            rmse_normalized,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub train: SetMetrics,
    pub validation: SetMetrics,
    pub test: SetMetrics,
    pub unseen: SetMetrics,
}

/// One train/validate/test/unseen cycle.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub run: usize,
    pub seed: u64,
    pub rng: &'static str,
    pub init_scheme: &'static str,
    pub split: SplitPlan,
    pub model: MlpModel,
    pub metrics: RunMetrics,
    pub epochs_used: usize,
    pub stop_reason: StopReason,
    pub trace: Vec<EpochRecord>,
}

/// Trains `model` on `splits.train` with early stopping on
/// `splits.validation`, then scores all four partitions.
pub fn train_lm(model: MlpModel, splits: &DataSplits, config: &TrainingConfig) -> Result<TrainingRun> {
    let outcome = train_weights(model, &splits.train, Some(&splits.validation), config)?;
    let tb = &splits.target_bounds;
    let metrics = RunMetrics {
        train: SetMetrics::evaluate(&outcome.model, &splits.train, tb)?,
        validation: SetMetrics::evaluate(&outcome.model, &splits.validation, tb)?,
        test: SetMetrics::evaluate(&outcome.model, &splits.test, tb)?,
        unseen: SetMetrics::evaluate(&outcome.model, &splits.unseen, tb)?,
    };
    Ok(TrainingRun {
        run: 0,
        seed: config.seed,
        rng: RNG_ALGORITHM,
        init_scheme: INIT_SCHEME,
        split: splits.plan.clone(),
        model: outcome.model,
        metrics,
        epochs_used: outcome.epochs_used,
        stop_reason: outcome.stop_reason,
        trace: outcome.trace,
    })
}

impl TrainingRun {
    /// Convergence trace as CSV: `epoch,train_mse,validation_mse,mu`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,validation_mse,mu\n");
        for r in &self.trace {
            let v = r.validation_mse.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_mse, v, r.mu));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_split;
    use crate::mlp::init_weights;
    use rand::{Rng, SeedableRng};

    fn teacher_data(n: usize, seed: u64) -> (MlpModel, TrainingSet) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let teacher = init_weights(3, 3, seed ^ 0xABCD).unwrap();
        let x = Matrix::new(3, n, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let t = forward(&teacher, &x).unwrap().into_vec();
        (teacher, TrainingSet::new(x, t).unwrap())
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let (_, data) = teacher_data(50, 1);
        let init = init_weights(3, 3, 7).unwrap();
        let cfg = TrainingConfig { max_epochs: 0, ..Default::default() };
        let out = train_weights(init.clone(), &data, None, &cfg).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.stop_reason, StopReason::MaxEpochs);
        assert_eq!(out.epochs_used, 0);
    }

    #[test]
    fn constant_target_is_fitted_by_output_bias() {
        let (_, mut data) = teacher_data(200, 2);
        data.t = vec![0.37; 200];
        let init = init_weights(3, 3, 5).unwrap();
        let out = train_weights(init, &data, None, &TrainingConfig::default()).unwrap();
        let y = forward(&out.model, &data.x).unwrap();
        let err = rmse(&data.t, y.as_slice()).unwrap();
        assert!(err <= 1e-6, "rmse {err}");
    }

    #[test]
    fn accepted_steps_strictly_decrease_training_mse() {
        let (_, data) = teacher_data(300, 3);
        let out = train_weights(init_weights(3, 3, 11).unwrap(), &data, None, &TrainingConfig {
            max_epochs: 200,
            ..Default::default()
        })
        .unwrap();
        assert!(out.trace.len() > 2);
        for w in out.trace.windows(2) {
            assert!(w[1].train_mse < w[0].train_mse, "{:?}", w);
        }
    }

    #[test]
    fn early_stopping_restores_best_validation_weights() {
        // Noisy targets with a small training set overfit quickly.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let (_, mut data) = teacher_data(120, 4);
        for t in &mut data.t {
            *t += rng.random_range(-0.3..0.3);
        }
        let idx: Vec<usize> = (0..120).collect();
        let train = TrainingSet::gather(&data.x, &data.t, &idx[..40]);
        let val = TrainingSet::gather(&data.x, &data.t, &idx[40..]);
        let out = train_weights(init_weights(3, 8, 1).unwrap(), &train, Some(&val), &TrainingConfig::default()).unwrap();
        let best = out
            .trace
            .iter()
            .filter_map(|r| r.validation_mse)
            .fold(f64::INFINITY, f64::min);
        let got = mse(&out.model, &val).unwrap();
        assert_eq!(got, best);
        if out.stop_reason == StopReason::ValidationPatience {
            let tail = &out.trace[out.trace.len() - 6..];
            assert!(tail.iter().all(|r| r.validation_mse.unwrap() >= best));
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainingConfig { mu_inc: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig { mu_dec: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig { validation_patience: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(TrainingConfig::default().validate().is_ok());
    }

    #[test]
    fn train_lm_reports_all_partitions() {
        let (_, data) = teacher_data(400, 6);
        let plan = make_split(400, 6).unwrap();
        let splits = DataSplits::from_plan(&data.x, &data.t, plan, ChannelBounds::new(0.0, 100.0).unwrap());
        let cfg = TrainingConfig { max_epochs: 50, ..Default::default() };
        let run = train_lm(init_weights(3, 3, 2).unwrap(), &splits, &cfg).unwrap();
        let m = run.metrics;
        for s in [m.train, m.validation, m.test, m.unseen] {
            assert!(s.rmse >= 0.0 && (0.0..=1.0).contains(&s.r2));
            // Target range 100 maps to normalized width 2.
            assert!((s.rmse - 50.0 * s.rmse_normalized).abs() < 1e-9);
        }
        assert_eq!(m.unseen.n, 40);
        assert!(run.trace_csv().starts_with("epoch,train_mse"));
    }
}
