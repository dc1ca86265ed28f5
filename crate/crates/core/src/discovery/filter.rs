use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{BiLstm, BiLstmTrace};
use super::{huber, TrainingSequence};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::nn::{
    cosine_lr, dot, gemv_acc, gemv_t_acc, outer_acc, sigmoid, Checkpoint, Param, Parameterized,
    Scalar, Sgd, Tensor,
};

pub const FILTER_TAG: [u8; 4] = *b"FILT";

/// Regressor of the truncation point `k_off` from a probe's candidate sequence.
///
/// A bidirectional LSTM summarizes the `(k + 1) × D` rows; two affine layers
/// with additive shortcuts refine the summary; a scalar head followed by a
/// sigmoid predicts `k_off / k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel<T> {
    pub encoder: BiLstm<T>,
    pub fc1_w: Param<T>,
    pub fc1_b: Param<T>,
    pub fc2_w: Param<T>,
    pub fc2_b: Param<T>,
    pub out_w: Param<T>,
    pub out_b: Param<T>,
    pub seed: u64,
}

struct HeadTrace<T> {
    summary: Vec<T>,
    /// Post-ReLU branch outputs of the two shortcut layers.
    r1: Vec<T>,
    r2: Vec<T>,
    u1: Vec<T>,
    u2: Vec<T>,
}

impl<T: Scalar> FilterModel<T> {
    pub fn new(input: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = BiLstm::new(input, hidden, &mut rng);
        let w = 2 * hidden;
        FilterModel {
            encoder,
            fc1_w: Param::new("fc1_w", Tensor::uniform(w, w, w, &mut rng)),
            fc1_b: Param::new("fc1_b", Tensor::uniform(1, w, w, &mut rng)),
            fc2_w: Param::new("fc2_w", Tensor::uniform(w, w, w, &mut rng)),
            fc2_b: Param::new("fc2_b", Tensor::uniform(1, w, w, &mut rng)),
            out_w: Param::new("out_w", Tensor::uniform(1, w, w, &mut rng)),
            out_b: Param::new("out_b", Tensor::uniform(1, 1, w, &mut rng)),
            seed,
        }
    }

    pub fn hidden(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn input(&self) -> usize {
        self.encoder.input()
    }

    fn head(&self, summary: Vec<T>) -> (T, HeadTrace<T>) {
        let w = summary.len();
        let mut r1 = self.fc1_b.value.data.clone();
        gemv_acc(&self.fc1_w.value, &summary, &mut r1);
        r1.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let u1: Vec<T> = summary.iter().zip(&r1).map(|(&a, &b)| a + b).collect();
        let mut r2 = self.fc2_b.value.data.clone();
        gemv_acc(&self.fc2_w.value, &u1, &mut r2);
        r2.iter_mut().for_each(|v| *v = v.max(T::zero()));
        let u2: Vec<T> = u1.iter().zip(&r2).map(|(&a, &b)| a + b).collect();
        debug_assert_eq!(u2.len(), w);
        let z = dot(&self.out_w.value.data, &u2) + self.out_b.value.data[0];
        (z, HeadTrace { summary, r1, r2, u1, u2 })
    }

    /// Raw head output (before the sigmoid).
    pub fn raw_output(&self, rows: &Tensor<T>) -> Result<T> {
        self.check_rows(rows)?;
        let (summary, _) = self.encoder.encode(rows);
        Ok(self.head(summary).0)
    }

    fn check_rows(&self, rows: &Tensor<T>) -> Result<()> {
        if rows.cols != self.input() || rows.rows < 2 {
            return Err(Error::Shape(format!(
                "filter expects (k+1)×{} rows with k ≥ 1, got {}×{}",
                self.input(),
                rows.rows,
                rows.cols
            )));
        }
        Ok(())
    }

    /// Huber loss of one sequence; with `backprop`, gradients are added to `.grad`
    /// scaled by `scale`.
    pub fn sequence_loss(&mut self, rows: &Tensor<T>, target: usize, delta: f64, backprop: Option<T>) -> Result<T> {
        self.check_rows(rows)?;
        let k = T::c((rows.rows - 1) as f64);
        let target_t = T::c(target as f64);
        let (summary, enc_trace) = self.encoder.encode(rows);
        let (z, tr) = self.head(summary);
        let p = sigmoid(z);
        let diff = k * p - target_t;
        let xi = diff.abs() / target_t;
        let loss = T::c(huber(xi.as_f64(), delta));
        if let Some(scale) = backprop {
            let dxi = if xi < T::c(delta) { xi } else { T::c(delta) };
            let sign = if diff > T::zero() {
                T::one()
            } else if diff < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            let dz = scale * dxi * sign / target_t * k * p * (T::one() - p);
            self.backprop_head(&tr, dz, rows, &enc_trace);
        }
        Ok(loss)
    }

    fn backprop_head(&mut self, tr: &HeadTrace<T>, dz: T, rows: &Tensor<T>, enc: &BiLstmTrace<T>) {
        self.out_b.grad.data[0] += dz;
        let mut du2: Vec<T> = self.out_w.value.data.iter().map(|&w| w * dz).collect();
        for (g, &u) in self.out_w.grad.data.iter_mut().zip(&tr.u2) {
            *g += dz * u;
        }
        // u2 = u1 + relu(W2 u1 + b2)
        let dr2: Vec<T> = du2.iter().zip(&tr.r2).map(|(&d, &r)| if r > T::zero() { d } else { T::zero() }).collect();
        for (g, &d) in self.fc2_b.grad.data.iter_mut().zip(&dr2) {
            *g += d;
        }
        outer_acc(&mut self.fc2_w.grad, &dr2, &tr.u1);
        gemv_t_acc(&self.fc2_w.value, &dr2, &mut du2);
        let mut du1 = du2;
        // u1 = s + relu(W1 s + b1)
        let dr1: Vec<T> = du1.iter().zip(&tr.r1).map(|(&d, &r)| if r > T::zero() { d } else { T::zero() }).collect();
        for (g, &d) in self.fc1_b.grad.data.iter_mut().zip(&dr1) {
            *g += d;
        }
        outer_acc(&mut self.fc1_w.grad, &dr1, &tr.summary);
        gemv_t_acc(&self.fc1_w.value, &dr1, &mut du1);
        self.encoder.backprop(rows, enc, &du1);
    }

    /// Mean Huber loss over `batch`; gradients of that mean land in `.grad`.
    pub fn batch_loss(&mut self, batch: &[(&Tensor<T>, usize)], delta: f64) -> Result<T> {
        let scale = T::one() / T::c(batch.len() as f64);
        let mut total = T::zero();
        for (rows, target) in batch {
            total += self.sequence_loss(rows, *target, delta, Some(scale))?;
        }
        Ok(total * scale)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            FILTER_TAG,
            vec![self.input() as u64, self.hidden() as u64, self.seed],
            self,
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.tag != FILTER_TAG || c.hyper.len() != 3 {
            return Err(Error::Format("not a filter checkpoint".into()));
        }
        let mut m = FilterModel::new(c.hyper[0] as usize, c.hyper[1] as usize, c.hyper[2]);
        c.restore(&mut m)?;
        Ok(m)
    }
}

impl<T: Scalar> Parameterized<T> for FilterModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend([&self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b, &self.out_w, &self.out_b]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend([
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        v
    }
}

/// Predicted truncation point: `round_half_up(k · sigmoid(raw))` clamped to `[1, k]`.
pub fn predict_koff<T: Scalar>(model: &FilterModel<T>, rows: &Tensor<T>) -> Result<usize> {
    let z = model.raw_output(rows)?;
    Ok(scale_prediction(sigmoid(z).as_f64(), rows.rows - 1))
}

pub(crate) fn scale_prediction(fraction: f64, k: usize) -> usize {
    let raw = (fraction * k as f64 + 0.5).floor();
    if raw.is_nan() {
        return 1;
    }
    (raw as usize).clamp(1, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Mini-batch SGD on the mean Huber loss with cosine-annealed learning rate.
pub fn train_filter(
    sequences: &[TrainingSequence],
    config: &PipelineConfig,
) -> Result<(FilterModel<f32>, Vec<EpochLoss>)> {
    let first = sequences
        .first()
        .ok_or_else(|| Error::Parameter("no training sequences".into()))?;
    let d = first.rows.cols;
    if let Some(bad) = sequences.iter().find(|s| s.rows.cols != d || s.rows.rows < 2) {
        return Err(Error::Shape(format!(
            "sequence of probe {} has shape {}×{}",
            bad.probe, bad.rows.rows, bad.rows.cols
        )));
    }
    let mut model = FilterModel::<f32>::new(d, config.filter_hidden, config.seed);
    let opt = Sgd {
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_F117);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut log = Vec::with_capacity(config.filter_epochs);
    for epoch in 0..config.filter_epochs {
        let lr = cosine_lr(config.filter_lr, epoch, config.filter_epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(config.filter_batch) {
            let batch: Vec<(&Tensor<f32>, usize)> = chunk
                .iter()
                .map(|&i| (&sequences[i].rows, sequences[i].target))
                .collect();
            model.zero_grad();
            let loss = model.batch_loss(&batch, config.delta)?;
            if !loss.is_finite() || !model.all_finite() {
                return Err(Error::Numerical(format!(
                    "filter training diverged at epoch {epoch} (batch loss {loss})"
                )));
            }
            total += loss as f64 * chunk.len() as f64;
            opt.step(model.params_mut(), lr);
        }
        log.push(EpochLoss {
            epoch,
            loss: total / sequences.len() as f64,
        });
    }
    Ok((model, log))
}
