//! Repeated train/validate/test cycles and selection of the best network.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lm::{train_lm, DataSplits, SetMetrics, StopReason, TrainingConfig, TrainingRun};
use super::{init_weights, ChannelSpec, INIT_SCHEME};
use crate::dataset::{fit_bounds, make_split, normalize, CleanDataset, NormalizationBounds, SplitPlan};
use crate::error::{Error, Result};
use crate::rng::{derive_seeds, seeded, RNG_ALGORITHM};

#[derive(Debug, Clone)]
pub enum RunOutcome {
    Completed(Box<TrainingRun>),
    Diverged { run: usize, seed: u64, epoch: usize },
}

impl RunOutcome {
    pub fn completed(&self) -> Option<&TrainingRun> {
        match self {
            RunOutcome::Completed(r) => Some(r),
            RunOutcome::Diverged { .. } => None,
        }
    }
}

/// What selection looks at for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub run: usize,
    pub unseen_rmse: f64,
    pub unseen_r2: f64,
}

/// Position of the candidate with the lowest unseen RMSE; ties go to the
/// higher unseen R², then to the lower run index.
pub fn select_best(candidates: &[Candidate]) -> Option<usize> {
    candidates
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.unseen_rmse
                .total_cmp(&b.unseen_rmse)
                .then(b.unseen_r2.total_cmp(&a.unseen_r2))
                .then(a.run.cmp(&b.run))
        })
        .map(|(i, _)| i)
}

/// All runs of one ensemble and the selected network.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub master_seed: u64,
    pub predictors: Vec<String>,
    pub target: String,
    pub bounds: NormalizationBounds,
    pub base_split: SplitPlan,
    pub config: TrainingConfig,
    pub runs: Vec<RunOutcome>,
    /// Index into `runs`.
    pub best: usize,
}

impl Ensemble {
    pub fn best_run(&self) -> &TrainingRun {
        self.runs[self.best]
            .completed()
            .expect("best run is always a completed run")
    }

    /// Completed run with the lowest SET1 test RMSE, for comparison with the
    /// unseen-set selection.
    pub fn best_by_test(&self) -> &TrainingRun {
        self.runs
            .iter()
            .filter_map(RunOutcome::completed)
            .min_by(|a, b| {
                a.metrics
                    .test
                    .rmse
                    .total_cmp(&b.metrics.test.rmse)
                    .then(a.run.cmp(&b.run))
            })
            .expect("ensemble has at least one completed run")
    }

    pub fn leaderboard(&self) -> Leaderboard {
        let best = self.best_run();
        let by_test = self.best_by_test();
        let rows = self
            .runs
            .iter()
            .map(|r| match r {
                RunOutcome::Completed(run) => LeaderboardRow {
                    run: run.run,
                    seed: run.seed,
                    status: "completed".into(),
                    diverged_at_epoch: None,
                    epochs_used: Some(run.epochs_used),
                    stop_reason: Some(run.stop_reason),
                    train: Some(run.metrics.train),
                    validation: Some(run.metrics.validation),
                    test: Some(run.metrics.test),
                    unseen: Some(run.metrics.unseen),
                },
                RunOutcome::Diverged { run, seed, epoch } => LeaderboardRow {
                    run: *run,
                    seed: *seed,
                    status: "diverged".into(),
                    diverged_at_epoch: Some(*epoch),
                    epochs_used: None,
                    stop_reason: None,
                    train: None,
                    validation: None,
                    test: None,
                    unseen: None,
                },
            })
            .collect();
        Leaderboard {
            kind: "leaderboard".into(),
            master_seed: self.master_seed,
            rng: RNG_ALGORITHM.into(),
            init_scheme: INIT_SCHEME.into(),
            target: self.target.clone(),
            predictors: self.predictors.clone(),
            hidden_neurons: best.model.n_hidden(),
            config: self.config.clone(),
            unseen_rows: self.base_split.set2.len(),
            selected_run: best.run,
            selected_unseen_rmse: best.metrics.unseen.rmse,
            selected_unseen_r2: best.metrics.unseen.r2,
            best_by_test_run: by_test.run,
            best_by_test_unseen_rmse: by_test.metrics.unseen.rmse,
            rows,
        }
    }
}

/// Serializable summary of an ensemble, one row per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub kind: String,
    pub master_seed: u64,
    pub rng: String,
    pub init_scheme: String,
    pub target: String,
    pub predictors: Vec<String>,
    pub hidden_neurons: usize,
    pub config: TrainingConfig,
    pub unseen_rows: usize,
    pub selected_run: usize,
    pub selected_unseen_rmse: f64,
    pub selected_unseen_r2: f64,
    pub best_by_test_run: usize,
    pub best_by_test_unseen_rmse: f64,
    pub rows: Vec<LeaderboardRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub run: usize,
    pub seed: u64,
    pub status: String,
    pub diverged_at_epoch: Option<usize>,
    pub epochs_used: Option<usize>,
    pub stop_reason: Option<StopReason>,
    pub train: Option<SetMetrics>,
    pub validation: Option<SetMetrics>,
    pub test: Option<SetMetrics>,
    pub unseen: Option<SetMetrics>,
}

/// Trains `config.restarts` networks and keeps the one with the best unseen
/// (SET2) score.
///
/// Bounds are fitted on the predictor and target channels of `dataset`. SET2
/// is drawn once from the master seed; every run re-splits SET1 and
/// initializes its weights from its own seed, so runs are independent and
/// are trained in parallel without affecting the result.
pub fn run_ensemble(
    dataset: &CleanDataset,
    predictors: &[String],
    target: &str,
    config: &TrainingConfig,
) -> Result<Ensemble> {
    config.validate()?;
    if predictors.is_empty() {
        return Err(Error::Config("at least one predictor is required".into()));
    }
    if predictors.iter().any(|p| p == target) {
        return Err(Error::Config(format!("target `{target}` cannot also be a predictor")));
    }
    let mut channels: Vec<String> = predictors.to_vec();
    channels.push(target.to_owned());
    let columns = channels
        .iter()
        .map(|c| dataset.column(c).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let subset = CleanDataset::from_columns(channels.clone(), dataset.timestamps().to_vec(), columns)?;
    let bounds = fit_bounds(&subset)?;
    let normalized = normalize(&subset, &bounds)?;
    let x = normalized.select(predictors)?;
    let t = normalized.matrix.row(predictors.len()).to_vec();
    let target_bounds = bounds.require(target)?;

    let p = predictors.len();
    let s = config.hidden_neurons.unwrap_or(p);
    let (split_seed, run_seeds) = derive_seeds(config.seed, config.restarts);
    let base = make_split(subset.n_rows(), split_seed)?;
    let inputs: Vec<ChannelSpec> = predictors
        .iter()
        .map(|name| Ok(ChannelSpec::new(name.clone(), "", Some(bounds.require(name)?))))
        .collect::<Result<_>>()?;
    let target_spec = ChannelSpec::new(target, "", Some(target_bounds));

    let runs: Vec<RunOutcome> = run_seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut rng = seeded(seed);
            let plan = base.resplit_set1(rng.random());
            let init = init_weights(p, s, rng.random())?
                .with_channels(inputs.clone(), target_spec.clone())?;
            let splits = DataSplits::from_plan(&x, &t, plan, target_bounds);
            match train_lm(init, &splits, config) {
                Ok(mut run) => {
                    run.run = i;
                    run.seed = seed;
                    Ok(RunOutcome::Completed(Box::new(run)))
                }
                Err(Error::TrainingDiverged { epoch }) => Ok(RunOutcome::Diverged { run: i, seed, epoch }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let (positions, candidates): (Vec<usize>, Vec<Candidate>) = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            r.completed().map(|run| {
                (
                    i,
                    Candidate {
                        run: run.run,
                        unseen_rmse: run.metrics.unseen.rmse,
                        unseen_r2: run.metrics.unseen.r2,
                    },
                )
            })
        })
        .unzip();
    let best = select_best(&candidates)
        .map(|k| positions[k])
        .ok_or(Error::EnsembleFailure(runs.len()))?;

    Ok(Ensemble {
        master_seed: config.seed,
        predictors: predictors.to_vec(),
        target: target.to_owned(),
        bounds,
        base_split: base,
        config: config.clone(),
        runs,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(run: usize, rmse: f64, r2: f64) -> Candidate {
        Candidate {
            run,
            unseen_rmse: rmse,
            unseen_r2: r2,
        }
    }

    #[test]
    fn select_argmin_and_ties() {
        assert_eq!(select_best(&[]), None);
        assert_eq!(select_best(&[cand(0, 3.0, 0.5)]), Some(0));
        let c = [cand(0, 2.0, 0.9), cand(1, 1.5, 0.9), cand(2, 1.9, 0.9)];
        assert_eq!(select_best(&c), Some(1));
        let c = [cand(0, 1.5, 0.90), cand(1, 1.5, 0.95), cand(2, 1.5, 0.95)];
        assert_eq!(select_best(&c), Some(1));
    }
}
