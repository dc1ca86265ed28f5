//! Two graph-convolution layers with an affine PReLU head, trained with a
//! pairwise hinge loss on cosine similarities.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::data::{FeatureMatrix, LabelVector};
use crate::discovery::EpochLoss;
use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::nn::{cosine_lr, dot, Checkpoint, Param, Parameterized, Scalar, Sgd, Tensor};

pub const GCN_TAG: [u8; 4] = *b"GCNM";
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel<T> {
    pub w0: Param<T>,
    pub w1: Param<T>,
    pub head_w: Param<T>,
    pub head_b: Param<T>,
    /// Single shared PReLU slope.
    pub prelu: Param<T>,
    pub seed: u64,
}

/// Intermediate activations of one forward pass.
pub struct GcnTrace<T> {
    p0: Tensor<T>,
    z0: Tensor<T>,
    p1: Tensor<T>,
    z1: Tensor<T>,
    h1: Tensor<T>,
    z2: Tensor<T>,
    norms: Vec<T>,
    pub embeddings: Tensor<T>,
}

/// Mean over the closed neighbourhood: `D̃⁻¹ (A + I) X`.
pub fn aggregate<T: Scalar>(graph: &AdjacencyGraph, x: &Tensor<T>) -> Result<Tensor<T>> {
    if graph.n() != x.rows {
        return Err(Error::Shape(format!(
            "graph has {} vertices, features have {} rows",
            graph.n(),
            x.rows
        )));
    }
    let mut out = x.clone();
    for i in 0..x.rows {
        let nb = graph.neighbors(i);
        let inv = T::one() / T::c((nb.len() + 1) as f64);
        let o = &mut out.data[i * x.cols..(i + 1) * x.cols];
        for &j in nb {
            for (a, &b) in o.iter_mut().zip(x.row(j)) {
                *a += b;
            }
        }
        o.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

/// Transpose of [`aggregate`]; the graph is symmetric, so column `j` of the
/// operator holds `1/(deg_i + 1)` for every `i` in the closed neighbourhood of `j`.
fn aggregate_t<T: Scalar>(graph: &AdjacencyGraph, g: &Tensor<T>) -> Tensor<T> {
    let inv: Vec<T> = (0..g.rows)
        .map(|i| T::one() / T::c((graph.degree(i) + 1) as f64))
        .collect();
    let mut out = Tensor::zeros(g.rows, g.cols);
    for j in 0..g.rows {
        let o = &mut out.data[j * g.cols..(j + 1) * g.cols];
        for (a, &b) in o.iter_mut().zip(g.row(j)) {
            *a += b * inv[j];
        }
        for &i in graph.neighbors(j) {
            for (a, &b) in o.iter_mut().zip(g.row(i)) {
                *a += b * inv[i];
            }
        }
    }
    out
}

fn relu_in_place<T: Scalar>(t: &mut Tensor<T>) {
    t.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// `ReLU(D̃⁻¹ Ã F W)`.
pub fn gcn_layer<T: Scalar>(graph: &AdjacencyGraph, f: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    if f.cols != w.rows {
        return Err(Error::Shape(format!(
            "features have {} columns, weight has {} rows",
            f.cols, w.rows
        )));
    }
    let mut z = aggregate(graph, f)?.matmul(w);
    relu_in_place(&mut z);
    Ok(z)
}

impl<T: Scalar> GcnModel<T> {
    pub fn new(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prelu = Tensor::zeros(1, 1);
        prelu.data[0] = T::c(PRELU_INIT);
        GcnModel {
            w0: Param::new("gcn_w0", Tensor::uniform(input, hidden, input, &mut rng)),
            w1: Param::new("gcn_w1", Tensor::uniform(hidden, hidden, hidden, &mut rng)),
            head_w: Param::new("head_w", Tensor::uniform(hidden, output, hidden, &mut rng)),
            head_b: Param::new("head_b", Tensor::zeros(1, output)),
            prelu: Param::new("prelu", prelu),
            seed,
        }
    }

    pub fn input(&self) -> usize {
        self.w0.value.rows
    }

    pub fn hidden(&self) -> usize {
        self.w0.value.cols
    }

    pub fn output(&self) -> usize {
        self.head_w.value.cols
    }

    pub fn forward(&self, graph: &AdjacencyGraph, features: &Tensor<T>) -> Result<GcnTrace<T>> {
        if features.cols != self.input() {
            return Err(Error::Shape(format!(
                "model expects {} input columns, got {}",
                self.input(),
                features.cols
            )));
        }
        let p0 = aggregate(graph, features)?;
        let z0 = p0.matmul(&self.w0.value);
        let mut h0 = z0.clone();
        relu_in_place(&mut h0);
        let p1 = aggregate(graph, &h0)?;
        let z1 = p1.matmul(&self.w1.value);
        let mut h1 = z1.clone();
        relu_in_place(&mut h1);
        let mut z2 = h1.matmul(&self.head_w.value);
        for r in 0..z2.rows {
            for (v, &b) in z2.row_mut(r).iter_mut().zip(&self.head_b.value.data) {
                *v += b;
            }
        }
        let a = self.prelu.value.data[0];
        let mut embeddings = z2.clone();
        let mut norms = Vec::with_capacity(z2.rows);
        for r in 0..embeddings.rows {
            let row = embeddings.row_mut(r);
            row.iter_mut().for_each(|v| {
                if *v <= T::zero() {
                    *v = a * *v
                }
            });
            let norm = dot(row, row).sqrt().max(T::c(1e-12));
            row.iter_mut().for_each(|v| *v = *v / norm);
            norms.push(norm);
        }
        Ok(GcnTrace {
            p0,
            z0,
            p1,
            z1,
            h1,
            z2,
            norms,
            embeddings,
        })
    }

    /// Accumulates parameter gradients given `d_emb`, the loss gradient on the
    /// normalized embeddings.
    pub fn backward(&mut self, graph: &AdjacencyGraph, trace: &GcnTrace<T>, d_emb: &Tensor<T>) {
        let a = self.prelu.value.data[0];
        let mut dz2 = Tensor::zeros(d_emb.rows, d_emb.cols);
        let mut da = T::zero();
        for r in 0..d_emb.rows {
            let e = trace.embeddings.row(r);
            let de = d_emb.row(r);
            if de.iter().all(|&v| v == T::zero()) {
                continue;
            }
            let proj = dot(e, de);
            let inv = T::one() / trace.norms[r];
            let z = trace.z2.row(r);
            let out = dz2.row_mut(r);
            for c in 0..out.len() {
                let dh = (de[c] - e[c] * proj) * inv;
                if z[c] > T::zero() {
                    out[c] = dh;
                } else {
                    out[c] = a * dh;
                    da += dh * z[c];
                }
            }
        }
        self.prelu.grad.data[0] += da;
        for r in 0..dz2.rows {
            for (g, &v) in self.head_b.grad.data.iter_mut().zip(dz2.row(r)) {
                *g += v;
            }
        }
        trace.h1.t_matmul_acc(&dz2, &mut self.head_w.grad);
        let mut dz1 = dz2.matmul_t(&self.head_w.value);
        mask_relu(&mut dz1, &trace.z1);
        trace.p1.t_matmul_acc(&dz1, &mut self.w1.grad);
        let dp1 = dz1.matmul_t(&self.w1.value);
        let mut dz0 = aggregate_t(graph, &dp1);
        mask_relu(&mut dz0, &trace.z0);
        trace.p0.t_matmul_acc(&dz0, &mut self.w0.grad);
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            GCN_TAG,
            vec![
                self.input() as u64,
                self.hidden() as u64,
                self.output() as u64,
                self.seed,
            ],
            self,
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.tag != GCN_TAG || c.hyper.len() != 4 {
            return Err(Error::Format("not a GCN checkpoint".into()));
        }
        let h = &c.hyper;
        let mut m = GcnModel::new(h[0] as usize, h[1] as usize, h[2] as usize, h[3]);
        c.restore(&mut m)?;
        Ok(m)
    }
}

fn mask_relu<T: Scalar>(grad: &mut Tensor<T>, pre: &Tensor<T>) {
    for (g, &z) in grad.data.iter_mut().zip(&pre.data) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> Parameterized<T> for GcnModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.w0, &self.w1, &self.head_w, &self.head_b, &self.prelu]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.w0,
            &mut self.w1,
            &mut self.head_w,
            &mut self.head_b,
            &mut self.prelu,
        ]
    }
}

/// Value of the hinge loss on one batch, with its gradient on the batch rows.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeLoss<T> {
    pub value: T,
    pub positive_term: T,
    pub negative_term: T,
    /// No same-label pair in the batch.
    pub no_positive: bool,
    /// No cross-label pair in the batch.
    pub no_negative: bool,
    pub grad: Tensor<T>,
}

/// `max_neg [β2 + y]₊ + λ · mean_pos [β1 − y]₊` over the pairs of `rows`,
/// where `y` is the dot product of unit rows.
pub fn hinge_loss<T: Scalar>(
    rows: &Tensor<T>,
    labels: &[u32],
    beta1: f64,
    beta2: f64,
    lambda: f64,
) -> Result<HingeLoss<T>> {
    if labels.len() != rows.rows {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            rows.rows
        )));
    }
    let (b1, b2, lam) = (T::c(beta1), T::c(beta2), T::c(lambda));
    let mut pos_pairs = 0usize;
    let mut pos_sum = T::zero();
    let mut active_pos = Vec::new();
    let mut hardest: Option<(usize, usize, T)> = None;
    for i in 0..rows.rows {
        for j in i + 1..rows.rows {
            let y = dot(rows.row(i), rows.row(j));
            if labels[i] == labels[j] {
                pos_pairs += 1;
                let m = b1 - y;
                if m > T::zero() {
                    pos_sum += m;
                    active_pos.push((i, j));
                }
            } else if hardest.is_none_or(|(_, _, best)| y > best) {
                hardest = Some((i, j, y));
            }
        }
    }
    let mut grad = Tensor::zeros(rows.rows, rows.cols);
    let add_pair = |i: usize, j: usize, dy: T, grad: &mut Tensor<T>| {
        for c in 0..rows.cols {
            grad.data[i * rows.cols + c] += dy * rows.get(j, c);
            grad.data[j * rows.cols + c] += dy * rows.get(i, c);
        }
    };
    let mut positive_term = T::zero();
    if pos_pairs > 0 {
        let n = T::c(pos_pairs as f64);
        positive_term = pos_sum / n;
        for &(i, j) in &active_pos {
            add_pair(i, j, -lam / n, &mut grad);
        }
    }
    let mut negative_term = T::zero();
    if let Some((i, j, y)) = hardest {
        let m = b2 + y;
        if m > T::zero() {
            negative_term = m;
            add_pair(i, j, T::one(), &mut grad);
        }
    }
    Ok(HingeLoss {
        value: negative_term + lam * positive_term,
        positive_term,
        negative_term,
        no_positive: pos_pairs == 0,
        no_negative: hardest.is_none(),
        grad,
    })
}

/// Loss of `model` on the vertices `batch`, with gradients accumulated into
/// the model when `backprop` is set.
pub fn batch_loss<T: Scalar>(
    model: &mut GcnModel<T>,
    graph: &AdjacencyGraph,
    features: &Tensor<T>,
    labels: &[u32],
    batch: &[usize],
    config: &PipelineConfig,
    backprop: bool,
) -> Result<T> {
    let trace = model.forward(graph, features)?;
    let mut rows = Tensor::zeros(batch.len(), trace.embeddings.cols);
    for (r, &v) in batch.iter().enumerate() {
        rows.row_mut(r).copy_from_slice(trace.embeddings.row(v));
    }
    let batch_labels: Vec<u32> = batch.iter().map(|&v| labels[v]).collect();
    let loss = hinge_loss(&rows, &batch_labels, config.beta1, config.beta2, config.lambda)?;
    if backprop {
        let mut d_emb = Tensor::zeros(trace.embeddings.rows, trace.embeddings.cols);
        for (r, &v) in batch.iter().enumerate() {
            for (a, &b) in d_emb.row_mut(v).iter_mut().zip(loss.grad.row(r)) {
                *a += b;
            }
        }
        model.backward(graph, &trace, &d_emb);
    }
    Ok(loss.value)
}

pub fn to_tensor(features: &FeatureMatrix) -> Tensor<f32> {
    Tensor {
        rows: features.n(),
        cols: features.d(),
        data: features.as_slice().to_vec(),
    }
}

/// Trains on the training split's graph with shuffled vertex batches.
pub fn train_gcn(
    graph: &AdjacencyGraph,
    features: &FeatureMatrix,
    labels: &LabelVector,
    config: &PipelineConfig,
) -> Result<(GcnModel<f32>, Vec<EpochLoss>)> {
    if labels.len() != features.n() || graph.n() != features.n() {
        return Err(Error::Shape(format!(
            "graph {} / features {} / labels {} sizes differ",
            graph.n(),
            features.n(),
            labels.len()
        )));
    }
    let x = to_tensor(features);
    let mut model = GcnModel::<f32>::new(features.d(), config.gcn_hidden, config.d_out, config.seed);
    let opt = Sgd {
        momentum: config.momentum,
        weight_decay: config.weight_decay,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6C4E_B47C);
    let mut order: Vec<usize> = (0..features.n()).collect();
    let mut log = Vec::with_capacity(config.gcn_epochs);
    for epoch in 0..config.gcn_epochs {
        let lr = cosine_lr(config.gcn_lr, epoch, config.gcn_epochs);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.gcn_batch) {
            if chunk.len() < 2 {
                continue;
            }
            model.zero_grad();
            let loss = batch_loss(&mut model, graph, &x, labels.as_slice(), chunk, config, true)?;
            if !loss.is_finite() || !model.all_finite() {
                return Err(Error::Numerical(format!(
                    "GCN training diverged at epoch {epoch} (batch loss {loss})"
                )));
            }
            total += loss as f64;
            batches += 1;
            opt.step(model.params_mut(), lr);
        }
        log.push(EpochLoss {
            epoch,
            loss: total / batches.max(1) as f64,
        });
    }
    Ok((model, log))
}

/// Unit-norm graph embeddings of every vertex.
pub fn embed(model: &GcnModel<f32>, graph: &AdjacencyGraph, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let trace = model.forward(graph, &to_tensor(features))?;
    let e = trace.embeddings;
    if !e.is_finite() {
        return Err(Error::Numerical("non-finite embeddings".into()));
    }
    FeatureMatrix::from_raw(e.rows, e.cols, e.data).map_err(|err| match err {
        Error::Data(m) => Error::Numerical(format!("degenerate embedding: {m}")),
        other => other,
    })
}
