//! Extreme-learning-machine value function.
//!
//! A single hidden layer of sigmoid units with random, frozen input weights
//! and biases. Only the output weights are fitted, in one shot, as the
//! minimum-norm least-squares solution of `H β = Y`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::LanderState;
use crate::trainer::EpisodeRecord;

/// Relative singular-value cutoff for the pseudo-inverse.
pub const RCOND: f64 = 1e-10;

/// Per-dimension affine map of `[lo, hi]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputScaler {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi }
    }

    /// Tight bounds of the given samples.
    pub fn from_data(inputs: &[Vec<f64>]) -> Self {
        let dim = inputs.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for x in inputs {
            for k in 0..dim {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        Self { lo, hi }
    }

    /// Default envelope of lander states `[r; v]`.
    pub fn lander_envelope() -> Self {
        Self::new(
            vec![-1000.0, -1000.0, 0.0, -150.0, -150.0, -150.0],
            vec![2000.0, 2000.0, 1600.0, 150.0, 150.0, 150.0],
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&lo, &hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    2.0 * (v - lo) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Fitted value-function approximator.
///
/// The output layer carries one extra constant unit so constant targets are
/// represented exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    /// hidden x input
    pub input_weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    /// hidden + 1 entries; the last weights the constant unit.
    pub beta: DVector<f64>,
    pub scaler: InputScaler,
}

impl ValueModel {
    /// Random hidden layer with `W, b ~ U[-1, 1]` and zero output weights.
    pub fn random<R: Rng + ?Sized>(hidden: usize, scaler: InputScaler, rng: &mut R) -> Self {
        let dim = scaler.dim();
        let input_weights = DMatrix::from_fn(hidden, dim, |_, _| rng.random_range(-1.0..=1.0));
        let biases = DVector::from_fn(hidden, |_, _| rng.random_range(-1.0..=1.0));
        Self {
            input_weights,
            biases,
            beta: DVector::zeros(hidden + 1),
            scaler,
        }
    }

    pub fn hidden_count(&self) -> usize {
        self.biases.len()
    }

    fn hidden_row(&self, x: &[f64]) -> DVector<f64> {
        let z = DVector::from_vec(self.scaler.apply(x));
        let s = &self.input_weights * z + &self.biases;
        let mut h = DVector::zeros(self.hidden_count() + 1);
        for i in 0..self.hidden_count() {
            h[i] = sigmoid(s[i]);
        }
        h[self.hidden_count()] = 1.0;
        h
    }

    /// Hidden-layer output matrix `H`, one row per input.
    pub fn hidden_matrix(&self, inputs: &[Vec<f64>]) -> DMatrix<f64> {
        let cols = self.hidden_count() + 1;
        let mut h = DMatrix::zeros(inputs.len(), cols);
        for (i, x) in inputs.iter().enumerate() {
            h.set_row(i, &self.hidden_row(x).transpose());
        }
        h
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.hidden_row(x).dot(&self.beta)
    }

    /// Estimated discounted cost-to-go at `state`.
    pub fn value(&self, state: &LanderState) -> f64 {
        self.predict(&state.translational())
    }
}

/// Minimum-norm least-squares solution of `h β = y` via SVD, zeroing singular
/// values below `rcond * σ_max`.
pub fn solve_min_norm(h: &DMatrix<f64>, y: &DVector<f64>, rcond: f64) -> Result<DVector<f64>> {
    let svd = h.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(Error::Degenerate("hidden-layer matrix has rank 0".into()));
    }
    svd.solve(y, rcond * sigma_max)
        .map_err(|e| Error::Degenerate(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueFitReport {
    pub train_nrmse: f64,
    pub test_nrmse: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub hidden_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Hidden units; `None` applies `max(10, round(N / 10))`.
    pub hidden: Option<usize>,
    pub train_fraction: f64,
    pub rcond: f64,
    /// Input normalization; `None` uses the bounds of the data.
    pub scaler: Option<InputScaler>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            hidden: None,
            train_fraction: 0.8,
            rcond: RCOND,
            scaler: None,
        }
    }
}

pub fn default_hidden_count(n_samples: usize) -> usize {
    ((n_samples as f64 / 10.0).round() as usize).max(10)
}

/// RMSE normalized by the target range (plain RMSE for constant targets).
pub fn nrmse(pred: &[f64], target: &[f64]) -> f64 {
    if target.is_empty() {
        return 0.0;
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / target.len() as f64;
    let (lo, hi) = target
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let range = hi - lo;
    let denom = if range > 0.0 { range } else { 1.0 };
    mse.sqrt() / denom
}

/// Shuffle, split, draw the hidden layer and fit the output weights.
pub fn fit<R: Rng + ?Sized>(
    inputs: &[Vec<f64>],
    targets: &[f64],
    opts: &FitOptions,
    rng: &mut R,
) -> Result<(ValueModel, ValueFitReport)> {
    if inputs.len() != targets.len() {
        return Err(Error::InvalidParameter("inputs and targets differ in length".into()));
    }
    if inputs.len() < 20 {
        return Err(Error::InvalidParameter(format!(
            "need at least 20 samples, got {}",
            inputs.len()
        )));
    }
    if !targets.iter().all(|t| t.is_finite()) {
        return Err(Error::NonFinite("critic targets"));
    }
    if !inputs.iter().flatten().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("critic inputs"));
    }
    let first = &inputs[0];
    if inputs.iter().all(|x| x == first) {
        return Err(Error::Degenerate("all inputs are identical".into()));
    }

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(rng);
    let n_train = ((inputs.len() as f64 * opts.train_fraction).round() as usize).clamp(1, inputs.len());
    let (train_idx, test_idx) = order.split_at(n_train);

    let scaler = opts.scaler.clone().unwrap_or_else(|| InputScaler::from_data(inputs));
    let hidden = opts.hidden.unwrap_or_else(|| default_hidden_count(inputs.len()));
    let mut model = ValueModel::random(hidden, scaler, rng);

    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| inputs[i].clone()).collect();
    let train_y: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
    let h = model.hidden_matrix(&train_x);
    model.beta = solve_min_norm(&h, &DVector::from_column_slice(&train_y), opts.rcond)?;

    let train_pred: Vec<f64> = (&h * &model.beta).iter().copied().collect();
    let test_pred: Vec<f64> = test_idx.iter().map(|&i| model.predict(&inputs[i])).collect();
    let test_y: Vec<f64> = test_idx.iter().map(|&i| targets[i]).collect();
    let report = ValueFitReport {
        train_nrmse: nrmse(&train_pred, &train_y),
        test_nrmse: nrmse(&test_pred, &test_y),
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        hidden_count: hidden,
    };
    Ok((model, report))
}

/// Value-function training pair.
pub type ValueTarget = (LanderState, f64);

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("discount must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

/// Discounted suffix sums of `costs`, one backward pass.
pub fn discounted_returns(costs: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; costs.len()];
    let mut acc = 0.0;
    for (t, c) in costs.iter().enumerate().rev() {
        acc = c + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Monte-Carlo targets: the discounted cost-to-go from every visited state.
pub fn build_targets_mc(episodes: &[EpisodeRecord], gamma: f64) -> Result<Vec<ValueTarget>> {
    check_gamma(gamma)?;
    if episodes.iter().all(|e| e.samples.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    let mut out = Vec::new();
    for ep in episodes {
        let returns = discounted_returns(&ep.transition_costs(), gamma);
        out.extend(ep.samples.iter().zip(returns).map(|(s, y)| (s.state, y)));
    }
    Ok(out)
}

/// Bootstrapped targets `c + γ V(x')`; terminal successors contribute zero.
pub fn build_targets_td(episodes: &[EpisodeRecord], model: &ValueModel, gamma: f64) -> Result<Vec<ValueTarget>> {
    check_gamma(gamma)?;
    if episodes.iter().all(|e| e.samples.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    let mut out = Vec::new();
    for ep in episodes {
        let costs = ep.transition_costs();
        let last = ep.samples.len().saturating_sub(1);
        for (t, s) in ep.samples.iter().enumerate() {
            let next = if t == last { 0.0 } else { model.value(&s.next_state) };
            out.push((s.state, costs[t] + gamma * next));
        }
    }
    Ok(out)
}

/// Monte-Carlo advantage at step `t`: discounted cost-to-go minus `V(x_t)`.
pub fn advantage_mc(episode: &EpisodeRecord, t: usize, model: &ValueModel, gamma: f64) -> f64 {
    let costs = episode.transition_costs();
    let mut ret = 0.0;
    for c in costs[t..].iter().rev() {
        ret = c + gamma * ret;
    }
    ret - model.value(&episode.samples[t].state)
}

/// Advantages for every step of an episode.
pub fn advantages_mc(episode: &EpisodeRecord, model: &ValueModel, gamma: f64) -> Vec<f64> {
    discounted_returns(&episode.transition_costs(), gamma)
        .into_iter()
        .zip(&episode.samples)
        .map(|(ret, s)| ret - model.value(&s.state))
        .collect()
}

pub fn split_targets(pairs: &[ValueTarget]) -> (Vec<Vec<f64>>, Vec<f64>) {
    pairs
        .iter()
        .map(|(s, y)| (s.translational().to_vec(), *y))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::GuidanceGains;
    use crate::sim::Vec3;
    use crate::trainer::{Sample, Termination};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode(costs: &[f64]) -> EpisodeRecord {
        let samples = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let state = LanderState::new(Vec3::new(i as f64, 0.0, 10.0), Vec3::zeros(), 1800.0);
                let next_state = LanderState::new(Vec3::new(i as f64 + 1.0, 0.0, 10.0), Vec3::zeros(), 1800.0);
                Sample::bare(state, GuidanceGains::classical(10.0), c, next_state)
            })
            .collect();
        EpisodeRecord::new(samples, 10.0, Termination::FinalTime, 0.0)
    }

    fn zero_model() -> ValueModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ValueModel::random(8, InputScaler::lander_envelope(), &mut rng)
    }

    #[test]
    fn mc_targets_examples() {
        let t = build_targets_mc(&[episode(&[1.0, 1.0, 1.0])], 1.0).unwrap();
        assert_eq!(t.iter().map(|p| p.1).collect::<Vec<_>>(), vec![3.0, 2.0, 1.0]);
        let t = build_targets_mc(&[episode(&[2.0, 4.0])], 0.5).unwrap();
        assert_eq!(t.iter().map(|p| p.1).collect::<Vec<_>>(), vec![4.0, 4.0]);
        let t = build_targets_mc(&[episode(&[2.0, 4.0, 7.0])], 0.0).unwrap();
        assert_eq!(t.iter().map(|p| p.1).collect::<Vec<_>>(), vec![2.0, 4.0, 7.0]);
        assert!(matches!(build_targets_mc(&[], 0.9), Err(Error::EmptyBatch)));
    }

    #[test]
    fn td_targets_with_zero_value_are_costs() {
        let model = zero_model();
        let ep = episode(&[1.0, 2.0, 3.0]);
        let t = build_targets_td(&[ep.clone()], &model, 0.9).unwrap();
        assert_eq!(t.iter().map(|p| p.1).collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
        let one = episode(&[5.0]);
        let td = build_targets_td(&[one.clone()], &model, 0.9).unwrap();
        let mc = build_targets_mc(&[one], 0.9).unwrap();
        assert_eq!(td, mc);
    }

    #[test]
    fn value_with_zero_output_is_zero() {
        let model = zero_model();
        let s = LanderState::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0), 1700.0);
        assert_eq!(model.value(&s), 0.0);
    }

    #[test]
    fn advantage_examples() {
        let model = zero_model();
        let ep = episode(&[2.0, 4.0]);
        assert_eq!(advantage_mc(&ep, 0, &model, 0.5), 4.0);
        assert_eq!(advantages_mc(&ep, &model, 0.5), vec![4.0, 4.0]);

        // a constant-valued critic V ≡ 3
        let mut model = zero_model();
        let last = model.beta.len() - 1;
        model.beta[last] = 3.0;
        assert_relative_eq!(advantage_mc(&ep, 0, &model, 0.5), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_targets_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..6).map(|_| rng.random_range(-10.0..10.0)).collect())
            .collect();
        let targets = vec![42.5; 60];
        let (model, report) = fit(&inputs, &targets, &FitOptions::default(), &mut rng).unwrap();
        assert!(report.train_nrmse < 1e-8, "{report:?}");
        for x in &inputs {
            assert!((model.predict(x) - 42.5).abs() < 1e-8);
        }
        assert_eq!(report.n_train + report.n_test, 60);
        assert_eq!(report.n_train, 48);
        assert_eq!(report.hidden_count, 10);
    }

    #[test]
    fn fit_error_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let same = vec![vec![1.0, 2.0]; 30];
        assert!(matches!(
            fit(&same, &vec![1.0; 30], &FitOptions::default(), &mut rng),
            Err(Error::Degenerate(_))
        ));
        let inputs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let mut targets = vec![1.0; 30];
        targets[3] = f64::NAN;
        assert!(fit(&inputs, &targets, &FitOptions::default(), &mut rng).is_err());
        assert!(fit(&inputs[..10], &[0.0; 10], &FitOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn hidden_count_rule() {
        assert_eq!(default_hidden_count(20), 10);
        assert_eq!(default_hidden_count(1000), 100);
        assert_eq!(default_hidden_count(1234), 123);
    }

    #[test]
    fn rank_zero_matrix_rejected() {
        let h = DMatrix::zeros(5, 3);
        assert!(solve_min_norm(&h, &DVector::zeros(5), RCOND).is_err());
    }
}
