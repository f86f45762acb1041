//! Single-hidden-layer feed-forward network with a logsig hidden layer and a
//! linear output.
//!
//! The prediction for a `P × N` block of normalized inputs `x` is
//!
//! ```text
//! y = b2 + LW2 · logsig(b1 ⊕ LW1 · x)
//! ```
//!
//! where `⊕` adds the hidden bias to every column. The flat parameter vector
//! used by the Levenberg-Marquardt trainer is `[LW1 (row-major), b1, LW2, b2]`,
//! `S·P + S + S + 1` entries in total.

mod ensemble;
mod lm;

pub use ensemble::{
    run_ensemble, select_best, Candidate, Ensemble, Leaderboard, LeaderboardRow, RunOutcome,
};
pub use lm::{train_lm, train_weights, DataSplits, EpochRecord, LmOutcome, RunMetrics, SetMetrics,
    StopReason, TrainingConfig, TrainingRun, TrainingSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ChannelBounds;
use crate::error::{Error, Result};
use crate::numeric::{broadcast_add_col, mat_mul, Matrix, Vector};
use crate::rng::seeded;

/// Logistic sigmoid `1 / (1 + e^-m)`, evaluated without overflow.
#[inline]
pub fn logsig(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Transfer function tag of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    Logsig,
    Purelin,
}

impl Transfer {
    pub fn as_str(self) -> &'static str {
        match self {
            Transfer::Logsig => "logsig",
            Transfer::Purelin => "purelin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logsig" => Some(Transfer::Logsig),
            "purelin" => Some(Transfer::Purelin),
            _ => None,
        }
    }
}

/// Name, unit and (optional) normalization bounds of a model channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    pub unit: String,
    /// `None` means the bounds must be supplied before inference.
    pub bounds: Option<ChannelBounds>,
}

impl ChannelSpec {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, bounds: Option<ChannelBounds>) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            bounds,
        }
    }
}

/// Trained (or hand-entered) network together with its channel metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    lw1: Matrix,
    b1: Vector,
    lw2: Matrix,
    b2: f64,
    hidden_transfer: Transfer,
    output_transfer: Transfer,
    inputs: Vec<ChannelSpec>,
    target: ChannelSpec,
}

impl MlpModel {
    /// Builds a model with placeholder channel names `x1..xP` and target `y`.
    pub fn new(lw1: Matrix, b1: Vector, lw2: Matrix, b2: f64) -> Result<Self> {
        let (s, p) = lw1.shape();
        if s == 0 || p == 0 {
            return Err(Error::shape("MlpModel::new", "LW1", format!("{s}x{p}")));
        }
        if b1.len() != s {
            return Err(Error::shape("MlpModel::new", format!("LW1 {s}x{p}"), format!("b1 of {}", b1.len())));
        }
        if lw2.shape() != (1, s) {
            return Err(Error::shape(
                "MlpModel::new",
                format!("LW1 {s}x{p}"),
                format!("LW2 {}x{}", lw2.rows(), lw2.cols()),
            ));
        }
        if !b2.is_finite() {
            return Err(Error::NonFinite("b2"));
        }
        let inputs = (1..=p)
            .map(|i| ChannelSpec::new(format!("x{i}"), "", None))
            .collect();
        Ok(Self {
            lw1,
            b1,
            lw2,
            b2,
            hidden_transfer: Transfer::Logsig,
            output_transfer: Transfer::Purelin,
            inputs,
            target: ChannelSpec::new("y", "", None),
        })
    }

    /// Attaches channel metadata; `inputs` must have one entry per column of LW1.
    pub fn with_channels(mut self, inputs: Vec<ChannelSpec>, target: ChannelSpec) -> Result<Self> {
        if inputs.len() != self.n_inputs() {
            return Err(Error::shape(
                "MlpModel::with_channels",
                format!("{} inputs", self.n_inputs()),
                format!("{} channel specs", inputs.len()),
            ));
        }
        self.inputs = inputs;
        self.target = target;
        Ok(self)
    }

    pub fn n_inputs(&self) -> usize {
        self.lw1.cols()
    }

    pub fn n_hidden(&self) -> usize {
        self.lw1.rows()
    }

    /// `S·P + S + S + 1`.
    pub fn n_params(&self) -> usize {
        let (s, p) = self.lw1.shape();
        s * p + 2 * s + 1
    }

    pub fn lw1(&self) -> &Matrix {
        &self.lw1
    }

    pub fn b1(&self) -> &Vector {
        &self.b1
    }

    pub fn lw2(&self) -> &Matrix {
        &self.lw2
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn hidden_transfer(&self) -> Transfer {
        self.hidden_transfer
    }

    pub fn output_transfer(&self) -> Transfer {
        self.output_transfer
    }

    pub fn inputs(&self) -> &[ChannelSpec] {
        &self.inputs
    }

    pub fn target(&self) -> &ChannelSpec {
        &self.target
    }

    pub fn input_names(&self) -> Vec<String> {
        self.inputs.iter().map(|c| c.name.clone()).collect()
    }

    /// Replaces the input bounds, matched by channel name.
    pub fn set_input_bounds(&mut self, bounds: &crate::dataset::NormalizationBounds) -> Result<()> {
        for c in &mut self.inputs {
            c.bounds = Some(bounds.require(&c.name)?);
        }
        Ok(())
    }

    pub fn set_target_bounds(&mut self, bounds: ChannelBounds) {
        self.target.bounds = Some(bounds);
    }

    /// Flat parameter vector `[LW1, b1, LW2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.n_params());
        w.extend_from_slice(self.lw1.as_slice());
        w.extend_from_slice(self.b1.as_slice());
        w.extend_from_slice(self.lw2.as_slice());
        w.push(self.b2);
        w
    }

    /// Copy of the model with the flat parameter vector `w`.
    pub fn with_params(&self, w: &[f64]) -> Result<Self> {
        if w.len() != self.n_params() {
            return Err(Error::shape(
                "MlpModel::with_params",
                format!("{} parameters", self.n_params()),
                format!("{} values", w.len()),
            ));
        }
        let (s, p) = self.lw1.shape();
        let (a, rest) = w.split_at(s * p);
        let (b, rest) = rest.split_at(s);
        let (c, d) = rest.split_at(s);
        Ok(Self {
            lw1: Matrix::new(s, p, a.to_vec())?,
            b1: Vector::new(b.to_vec())?,
            lw2: Matrix::new(1, s, c.to_vec())?,
            b2: if d[0].is_finite() { d[0] } else { return Err(Error::NonFinite("b2")) },
            ..self.clone()
        })
    }
}

/// Hidden-layer activations `logsig(b1 ⊕ LW1·x)`, `S × N`.
fn hidden(model: &MlpModel, x_n: &Matrix) -> Result<Matrix> {
    if x_n.rows() != model.n_inputs() {
        return Err(Error::shape(
            "forward",
            format!("LW1 {}x{}", model.n_hidden(), model.n_inputs()),
            format!("x_n {}x{}", x_n.rows(), x_n.cols()),
        ));
    }
    let z = broadcast_add_col(&mat_mul(&model.lw1, x_n)?, &model.b1)?;
    Ok(z.map(logsig))
}

/// Normalized network output for each column of `x_n` (`P × N`).
pub fn forward(model: &MlpModel, x_n: &Matrix) -> Result<Vector> {
    let h = hidden(model, x_n)?;
    let y = mat_mul(&model.lw2, &h)?;
    Ok(Vector::from_raw(y.into_vec().into_iter().map(|v| v + model.b2).collect()))
}

/// Error vector `e = t - y` and its Jacobian `∂e/∂w` (`N × W`), with columns
/// ordered as in [`MlpModel::params`].
pub fn jacobian(model: &MlpModel, x_n: &Matrix, targets: &[f64]) -> Result<(Vector, Matrix)> {
    let n = x_n.cols();
    if targets.len() != n {
        return Err(Error::shape(
            "jacobian",
            format!("x_n with {n} samples"),
            format!("{} targets", targets.len()),
        ));
    }
    let h = hidden(model, x_n)?;
    let (s, p) = model.lw1.shape();
    let w = model.n_params();
    let lw2 = model.lw2.as_slice();
    let mut e = Vec::with_capacity(n);
    let mut jac = vec![0.0; n * w];
    let mut delta = vec![0.0; s];
    for i in 0..n {
        let row = &mut jac[i * w..(i + 1) * w];
        let mut y = model.b2;
        for j in 0..s {
            let hj = h.get(j, i);
            y += lw2[j] * hj;
            // ∂y/∂z_j through logsig' = h(1 - h).
            delta[j] = lw2[j] * hj * (1.0 - hj);
        }
        e.push(targets[i] - y);
        for j in 0..s {
            let dj = delta[j];
            for k in 0..p {
                row[j * p + k] = -dj * x_n.get(k, i);
            }
            row[s * p + j] = -dj;
            row[s * p + s + j] = -h.get(j, i);
        }
        row[w - 1] = -1.0;
    }
    Ok((Vector::from_raw(e), Matrix::from_raw(n, w, jac)))
}

/// Name recorded in training runs for [`init_weights`].
pub const INIT_SCHEME: &str =
    "nguyen-widrow hidden (rows scaled to 0.7*S^(1/P), b1 ~ U[-scale, scale]); LW2, b2 ~ U[-1, 1]";

/// Nguyen-Widrow scale `0.7 · S^(1/P)`.
pub fn nguyen_widrow_scale(n_inputs: usize, n_hidden: usize) -> f64 {
    0.7 * (n_hidden as f64).powf(1.0 / n_inputs as f64)
}

/// Random initial weights.
///
/// Each hidden row is drawn from `U[-1, 1]^P` and rescaled to Euclidean norm
/// `0.7 · S^(1/P)`; hidden biases are `U[-scale, scale]`. Output weights and
/// bias are `U[-1, 1]`.
pub fn init_weights(n_inputs: usize, n_hidden: usize, seed: u64) -> Result<MlpModel> {
    if n_inputs == 0 || n_hidden == 0 {
        return Err(Error::Config("network needs at least one input and one hidden neuron".into()));
    }
    let mut rng = seeded(seed);
    let scale = nguyen_widrow_scale(n_inputs, n_hidden);
    let mut lw1 = Vec::with_capacity(n_hidden * n_inputs);
    for _ in 0..n_hidden {
        let row: Vec<f64> = loop {
            let r: Vec<f64> = (0..n_inputs).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if r.iter().any(|v| *v != 0.0) {
                break r;
            }
        };
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        lw1.extend(row.iter().map(|v| v * scale / norm));
    }
    let b1: Vec<f64> = (0..n_hidden).map(|_| rng.random_range(-scale..=scale)).collect();
    let lw2: Vec<f64> = (0..n_hidden).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let b2 = rng.random_range(-1.0..=1.0);
    MlpModel::new(
        Matrix::new(n_hidden, n_inputs, lw1)?,
        Vector::new(b1)?,
        Matrix::new(1, n_hidden, lw2)?,
        b2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::bundled_paper_models;

    #[test]
    fn logsig_values() {
        assert_eq!(logsig(0.0), 0.5);
        assert!((logsig(1000.0) - 1.0).abs() < 1e-15);
        assert!(logsig(-1000.0) >= 0.0);
        assert!((logsig(1.101) - 0.75045).abs() < 1e-5);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut m = init_weights(3, 4, 1).unwrap();
        m = m.with_params(&{
            let mut w = m.params();
            let n = w.len();
            for v in &mut w[n - 5..] {
                *v = 0.0;
            }
            w
        })
        .unwrap();
        let x = Matrix::new(3, 5, (0..15).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap();
        assert!(forward(&m, &x).unwrap().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn three_predictor_model_at_origin() {
        let three = bundled_paper_models().three_predictor;
        let y = forward(&three, &Matrix::zeros(3, 1)).unwrap();
        assert!((y.get(0) - (-0.18945)).abs() < 1e-4, "{}", y.get(0));
    }

    #[test]
    fn forward_output_count_and_shape_error() {
        let eight = bundled_paper_models().eight_predictor;
        assert_eq!(forward(&eight, &Matrix::zeros(8, 1838)).unwrap().len(), 1838);
        assert!(matches!(forward(&eight, &Matrix::zeros(3, 4)), Err(Error::Shape { .. })));
    }

    #[test]
    fn jacobian_shape_and_bias_column() {
        let eight = bundled_paper_models().eight_predictor;
        let (e, j) = jacobian(&eight, &Matrix::zeros(8, 1838), &vec![0.0; 1838]).unwrap();
        assert_eq!(j.shape(), (1838, 81));
        assert_eq!(e.len(), 1838);

        let zero = init_weights(2, 2, 0).unwrap();
        let zero = zero.with_params(&vec![0.0; zero.n_params()]).unwrap();
        let (_, j) = jacobian(&zero, &Matrix::zeros(2, 6), &[1.0; 6]).unwrap();
        assert!((0..6).all(|i| j.get(i, j.cols() - 1) == -1.0));
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let (p, s) = (8, 8);
        let a = init_weights(p, s, 42).unwrap();
        assert_eq!(a, init_weights(p, s, 42).unwrap());
        assert_ne!(a, init_weights(p, s, 43).unwrap());
        assert!(a.lw2().as_slice().iter().all(|v| v.abs() <= 1.0));
        let scale = 0.7 * (s as f64).powf(1.0 / p as f64);
        for j in 0..s {
            let norm = a.lw1().row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - scale).abs() < 1e-9);
        }
    }

    #[test]
    fn params_round_trip() {
        let m = init_weights(3, 5, 9).unwrap();
        assert_eq!(m.with_params(&m.params()).unwrap(), m);
        assert!(m.with_params(&[0.0; 3]).is_err());
    }
}
