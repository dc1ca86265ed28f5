//! Analytic gradients against central finite differences.

use cleangraph::config::PipelineConfig;
use cleangraph::discovery::FilterModel;
use cleangraph::gcn::{batch_loss, GcnModel};
use cleangraph::graph::AdjacencyGraph;
use cleangraph::nn::{numeric_gradient, Parameterized, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| T::c(rng.random_range(-1.0..1.0))).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, the error of one parameter tensor.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Finite-difference gradient of every parameter tensor of `model`.
fn numeric_grads<T, M, F>(model: &M, mut loss: F, eps: f64) -> Vec<Vec<T>>
where
    T: Scalar,
    M: Parameterized<T> + Clone,
    F: FnMut(&mut M, bool) -> T,
{
    (0..model.params().len())
        .map(|p| {
            let mut probe = model.clone();
            let mut x = probe.params()[p].value.data.clone();
            numeric_gradient(
                |v: &[T]| {
                    probe.params_mut()[p].value.data.copy_from_slice(v);
                    loss(&mut probe, false)
                },
                &mut x,
                T::c(eps),
            )
        })
        .collect()
}

/// Analytic gradients of `model`; `loss` must accumulate them when its flag is set.
fn analytic_grads<T, M, F>(model: &M, mut loss: F) -> Vec<(&'static str, Vec<T>)>
where
    T: Scalar,
    M: Parameterized<T> + Clone,
    F: FnMut(&mut M, bool) -> T,
{
    let mut m = model.clone();
    m.zero_grad();
    loss(&mut m, true);
    m.params().iter().map(|p| (p.name, p.grad.data.clone())).collect()
}

fn compare<A: Scalar, B: Scalar>(analytic: &[(&str, Vec<A>)], numeric: &[Vec<B>], tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for ((name, a), n) in analytic.iter().zip(numeric) {
        let a64: Vec<f64> = a.iter().map(|x| x.as_f64()).collect();
        let n64: Vec<f64> = n.iter().map(|x| x.as_f64()).collect();
        let err = relative_error(&a64, &n64);
        assert!(err <= tol, "{name}: relative error {err:e}\nanalytic {a64:?}\nnumeric {n64:?}");
    }
}

fn to_f64(t: &Tensor<f32>) -> Tensor<f64> {
    Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|&x| x as f64).collect()).unwrap()
}

fn filter_loss<T: Scalar>(rows: &Tensor<T>, target: usize) -> impl FnMut(&mut FilterModel<T>, bool) -> T + '_ {
    move |m, bp| m.sequence_loss(rows, target, 1.0, bp.then_some(T::one())).unwrap()
}

const FILTER_TARGETS: [usize; 3] = [1, 3, 5];

pub fn filter_gradients_f64() {
    let model = FilterModel::<f64>::new(3, 4, 11);
    // probe plus five candidates
    let rows = random_tensor::<f64>(6, 3, 5);
    for target in FILTER_TARGETS {
        let a = analytic_grads(&model, filter_loss(&rows, target));
        let n = numeric_grads(&model, filter_loss(&rows, target), 1e-6);
        compare(&a, &n, 1e-5);
    }
}

/// f32 analytic gradients against differences of the same parameters taken
/// in f64, since f32 loss values are too coarse for finite differences.
pub fn filter_gradients_f32() {
    let model = FilterModel::<f32>::new(3, 4, 11);
    let wide = FilterModel::<f64>::from_checkpoint(&model.to_checkpoint()).unwrap();
    let rows = random_tensor::<f32>(6, 3, 5);
    let rows64 = to_f64(&rows);
    for target in FILTER_TARGETS {
        let a = analytic_grads(&model, filter_loss(&rows, target));
        let n = numeric_grads(&wide, filter_loss(&rows64, target), 1e-6);
        compare(&a, &n, 1e-3);
    }
}

fn six_vertex_graph() -> AdjacencyGraph {
    AdjacencyGraph::from_edges(
        6,
        [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (2, 3, 1.0)],
        false,
    )
    .unwrap()
}

const GCN_LABELS: [u32; 6] = [0, 0, 0, 1, 1, 1];

fn gcn_loss<'a, T: Scalar>(
    graph: &'a AdjacencyGraph,
    features: &'a Tensor<T>,
    config: &'a PipelineConfig,
) -> impl FnMut(&mut GcnModel<T>, bool) -> T + 'a {
    move |m, bp| batch_loss(m, graph, features, &GCN_LABELS, &[0, 1, 2, 3, 4, 5], config, bp).unwrap()
}

pub fn gcn_gradients_f64() {
    let (graph, config) = (six_vertex_graph(), PipelineConfig::default());
    let features = random_tensor::<f64>(6, 5, 21);
    let model = GcnModel::<f64>::new(5, 4, 3, 3);
    let a = analytic_grads(&model, gcn_loss(&graph, &features, &config));
    let n = numeric_grads(&model, gcn_loss(&graph, &features, &config), 1e-6);
    compare(&a, &n, 1e-5);
}

pub fn gcn_gradients_f32() {
    let (graph, config) = (six_vertex_graph(), PipelineConfig::default());
    let features = random_tensor::<f32>(6, 5, 21);
    let model = GcnModel::<f32>::new(5, 4, 3, 3);
    let wide = GcnModel::<f64>::from_checkpoint(&model.to_checkpoint()).unwrap();
    let a = analytic_grads(&model, gcn_loss(&graph, &features, &config));
    let n = numeric_grads(&wide, gcn_loss(&graph, &to_f64(&features), &config), 1e-6);
    compare(&a, &n, 1e-3);
}

pub fn quadratic_toy_loss() {
    let mut x = vec![1.5f64, -2.0];
    let g = numeric_gradient(|v: &[f64]| v[0] * v[0] + 3.0 * v[1], &mut x, 1e-4);
    assert!((g[0] - 3.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    let flat = numeric_gradient(|_: &[f64]| 0.0, &mut x, 1e-4);
    assert_eq!(flat, vec![0.0, 0.0]);
}
