use rand::Rng;

use crate::nn::{gemv_acc, gemv_t_acc, outer_acc, sigmoid, Param, Scalar, Tensor};

/// One direction of an LSTM. Gate blocks are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    pub hidden: usize,
}

/// Activations kept for backpropagation through time.
pub(crate) struct LstmTrace<T> {
    /// Pre-activations are replaced in place by activated gates, `steps × 4H`.
    gates: Tensor<T>,
    /// Cell states after each step, `(steps + 1) × H` with a zero first row.
    cells: Tensor<T>,
    /// Hidden states, `(steps + 1) × H` with a zero first row.
    hiddens: Tensor<T>,
    reversed: bool,
}

impl<T: Scalar> LstmTrace<T> {
    pub(crate) fn last_hidden(&self) -> &[T] {
        self.hiddens.row(self.hiddens.rows - 1)
    }
}

impl<T: Scalar> LstmDirection<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, names: [&'static str; 3], rng: &mut R) -> Self {
        LstmDirection {
            w_ih: Param::new(names[0], Tensor::uniform(4 * hidden, input, hidden, rng)),
            w_hh: Param::new(names[1], Tensor::uniform(4 * hidden, hidden, hidden, rng)),
            bias: Param::new(names[2], Tensor::uniform(1, 4 * hidden, hidden, rng)),
            hidden,
        }
    }

    /// Runs over the rows of `x`, last to first when `reversed`.
    pub(crate) fn forward(&self, x: &Tensor<T>, reversed: bool) -> LstmTrace<T> {
        let h = self.hidden;
        let steps = x.rows;
        // input projections for every step at once
        let mut gates = x.matmul_t(&self.w_ih.value);
        let mut cells = Tensor::zeros(steps + 1, h);
        let mut hiddens = Tensor::zeros(steps + 1, h);
        for s in 0..steps {
            let t = if reversed { steps - 1 - s } else { s };
            let a = &mut gates.data[t * 4 * h..(t + 1) * 4 * h];
            for (ai, &b) in a.iter_mut().zip(&self.bias.value.data) {
                *ai += b;
            }
            gemv_acc(&self.w_hh.value, hiddens.row(s), a);
            for v in &mut a[..2 * h] {
                *v = sigmoid(*v);
            }
            for v in &mut a[2 * h..3 * h] {
                *v = v.tanh();
            }
            for v in &mut a[3 * h..] {
                *v = sigmoid(*v);
            }
            let (prev_c, next) = cells.data.split_at_mut((s + 1) * h);
            let prev_c = &prev_c[s * h..];
            let next_c = &mut next[..h];
            let next_h = &mut hiddens.data[(s + 1) * h..(s + 2) * h];
            for u in 0..h {
                let c = a[h + u] * prev_c[u] + a[u] * a[2 * h + u];
                next_c[u] = c;
                next_h[u] = a[3 * h + u] * c.tanh();
            }
        }
        LstmTrace {
            gates,
            cells,
            hiddens,
            reversed,
        }
    }

    /// Backpropagates a gradient on the final hidden state; accumulates into `.grad`.
    pub(crate) fn backward(&mut self, x: &Tensor<T>, trace: &LstmTrace<T>, d_last: &[T]) {
        let h = self.hidden;
        let steps = x.rows;
        let mut d_pre = Tensor::zeros(steps, 4 * h);
        let mut dh = d_last.to_vec();
        let mut dc = vec![T::zero(); h];
        let mut dh_prev = vec![T::zero(); h];
        for s in (0..steps).rev() {
            let t = if trace.reversed { steps - 1 - s } else { s };
            let g = &trace.gates.data[t * 4 * h..(t + 1) * 4 * h];
            let c_prev = trace.cells.row(s);
            let c = trace.cells.row(s + 1);
            let da = &mut d_pre.data[t * 4 * h..(t + 1) * 4 * h];
            for u in 0..h {
                let (i, f, gg, o) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
                let tc = c[u].tanh();
                let d_o = dh[u] * tc;
                dc[u] += dh[u] * o * (T::one() - tc * tc);
                let d_i = dc[u] * gg;
                let d_g = dc[u] * i;
                let d_f = dc[u] * c_prev[u];
                da[u] = d_i * i * (T::one() - i);
                da[h + u] = d_f * f * (T::one() - f);
                da[2 * h + u] = d_g * (T::one() - gg * gg);
                da[3 * h + u] = d_o * o * (T::one() - o);
                dc[u] *= f;
            }
            for (b, &d) in self.bias.grad.data.iter_mut().zip(da.iter()) {
                *b += d;
            }
            outer_acc(&mut self.w_hh.grad, da, trace.hiddens.row(s));
            dh_prev.iter_mut().for_each(|v| *v = T::zero());
            gemv_t_acc(&self.w_hh.value, da, &mut dh_prev);
            std::mem::swap(&mut dh, &mut dh_prev);
        }
        d_pre.t_matmul_acc(x, &mut self.w_ih.grad);
    }
}

/// Bidirectional LSTM encoder. The sequence summary is the forward
/// direction's final state next to the backward direction's final state.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm<T> {
    pub forward: LstmDirection<T>,
    pub backward: LstmDirection<T>,
}

pub(crate) struct BiLstmTrace<T> {
    fwd: LstmTrace<T>,
    bwd: LstmTrace<T>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            forward: LstmDirection::new(input, hidden, ["lstm_fwd_w_ih", "lstm_fwd_w_hh", "lstm_fwd_b"], rng),
            backward: LstmDirection::new(input, hidden, ["lstm_bwd_w_ih", "lstm_bwd_w_hh", "lstm_bwd_b"], rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    pub fn input(&self) -> usize {
        self.forward.w_ih.value.cols
    }

    pub(crate) fn encode(&self, x: &Tensor<T>) -> (Vec<T>, BiLstmTrace<T>) {
        let fwd = self.forward.forward(x, false);
        let bwd = self.backward.forward(x, true);
        let mut summary = fwd.last_hidden().to_vec();
        summary.extend_from_slice(bwd.last_hidden());
        (summary, BiLstmTrace { fwd, bwd })
    }

    pub(crate) fn backprop(&mut self, x: &Tensor<T>, trace: &BiLstmTrace<T>, d_summary: &[T]) {
        let h = self.hidden();
        self.forward.backward(x, &trace.fwd, &d_summary[..h]);
        self.backward.backward(x, &trace.bwd, &d_summary[h..]);
    }

    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        vec![
            &self.forward.w_ih,
            &self.forward.w_hh,
            &self.forward.bias,
            &self.backward.w_ih,
            &self.backward.w_hh,
            &self.backward.bias,
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.forward.w_ih,
            &mut self.forward.w_hh,
            &mut self.forward.bias,
            &mut self.backward.w_ih,
            &mut self.backward.w_hh,
            &mut self.backward.bias,
        ]
    }
}
