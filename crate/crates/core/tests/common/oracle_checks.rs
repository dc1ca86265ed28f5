//! Fast paths checked against slow, direct re-implementations.

use std::collections::{BTreeSet, VecDeque};

use cleangraph::cluster::{link_pairs, union_find_merge, ClusterAssignment};
use cleangraph::data::{generate_synthetic, LabelVector, SyntheticSpec};
use cleangraph::discovery::{quality_curve, QualityCurve};
use cleangraph::gcn::{aggregate, gcn_layer, hinge_loss, GcnModel};
use cleangraph::graph::{build_graph, knn_graph, snr, threshold_graph, AdjacencyGraph};
use cleangraph::knn::{build_knn, NeighborList};
use cleangraph::metrics::{bcubed_f, pairwise_f};
use cleangraph::nn::Tensor;
use cleangraph::structspace::{
    expanded_reciprocal_set, jaccard_similarity, reciprocal_set, rerank_candidates, ReciprocalCache,
    StructureRanking,
};
use super::*;
use rand::seq::SliceRandom;
use rand::Rng;

// ---------- kNN ----------

fn knn_by_full_sort(f: &cleangraph::data::FeatureMatrix, k: usize) -> Vec<NeighborList> {
    (0..f.n())
        .map(|p| {
            let mut all: Vec<(usize, f32)> = (0..f.n())
                .filter(|&j| j != p)
                .map(|j| (j, sim(f.row(p), f.row(j))))
                .collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            NeighborList {
                probe: p,
                ids: all.iter().map(|x| x.0).collect(),
                sims: all.iter().map(|x| x.1).collect(),
            }
        })
        .collect()
}

pub fn knn_equals_full_sort() {
    for (n, d, k, seed) in [(20, 3, 19, 1), (200, 8, 10, 2), (500, 16, 30, 3), (1000, 8, 5, 4)] {
        let f = random_features(n, d, seed);
        assert_eq!(build_knn(&f, k).unwrap(), knn_by_full_sort(&f, k), "n={n} k={k}");
    }
}

pub fn knn_equals_full_sort_with_duplicates() {
    // every row appears three times, so ties are everywhere
    let base = random_features(30, 4, 5);
    let rows: Vec<Vec<f32>> = (0..90).map(|i| base.row(i % 30).to_vec()).collect();
    let f = cleangraph::data::FeatureMatrix::from_rows(&rows).unwrap();
    assert_eq!(build_knn(&f, 12).unwrap(), knn_by_full_sort(&f, 12));
}

// ---------- reciprocal sets ----------

/// `in_knn[v][r]` is true when r is among v's first k candidates.
fn membership(knn: &[NeighborList], k: usize) -> Vec<Vec<bool>> {
    let n = knn.len();
    let mut m = vec![vec![false; n]; n];
    for l in knn {
        for &r in &l.ids[..k] {
            m[l.probe][r] = true;
        }
    }
    m
}

fn brute_r(m: &[Vec<bool>], v: usize) -> BTreeSet<usize> {
    (0..m.len()).filter(|&r| m[v][r] && m[r][v]).collect()
}

fn brute_r_star(knn: &[NeighborList], v: usize, k: usize) -> BTreeSet<usize> {
    let full_m = membership(knn, k);
    let half_m = membership(knn, k / 2);
    let r_vk = brute_r(&full_m, v);
    let mut out = r_vk.clone();
    for &r in &r_vk {
        let half = brute_r(&half_m, r);
        let overlap = r_vk.intersection(&half).count();
        if overlap as f64 >= 2.0 / 3.0 * half.len() as f64 - 1e-12 {
            out.extend(half);
        }
    }
    out.remove(&v);
    out
}

fn brute_jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

fn structured_knn(n_per: usize, classes: usize, seed: u64, k: usize) -> Vec<NeighborList> {
    let (f, _) = generate_synthetic(&SyntheticSpec {
        classes,
        per_class: n_per,
        dim: 16,
        noise_sigma: 0.3,
        seed,
    })
    .unwrap();
    build_knn(&f, k).unwrap()
}

pub fn reciprocal_sets_equal_set_comprehension() {
    let mut expansions = 0;
    for (knn, k) in [
        (structured_knn(10, 10, 1, 10), 10),
        (structured_knn(20, 10, 2, 15), 15),
        (build_knn(&random_features(150, 6, 3), 12).unwrap(), 12),
        (structured_knn(25, 8, 4, 3), 3),
    ] {
        let m = membership(&knn, k);
        let cache = ReciprocalCache::build(&knn, k).unwrap();
        let mut stars = Vec::new();
        for v in 0..knn.len() {
            let r = reciprocal_set(&knn, v, k).unwrap();
            assert_eq!(r.members.iter().copied().collect::<BTreeSet<_>>(), brute_r(&m, v));
            let star = brute_r_star(&knn, v, k);
            let fast = expanded_reciprocal_set(&knn, v, k).unwrap();
            assert_eq!(fast.members.iter().copied().collect::<BTreeSet<_>>(), star, "v={v} k={k}");
            assert_eq!(cache.get(v), &fast);
            if star.len() > r.len() {
                expansions += 1;
            }
            stars.push(star);
        }
        for i in 0..knn.len() {
            for &j in &knn[i].ids[..k] {
                let fast = jaccard_similarity(cache.get(i), cache.get(j));
                assert_eq!(fast, brute_jaccard(&stars[i], &stars[j]));
            }
        }
    }
    assert!(expansions > 0, "fixtures never exercised the expansion branch");
}

pub fn rerank_equals_direct_kappa_sort() {
    let knn = structured_knn(10, 15, 6, 20);
    let k = 20;
    let stars: Vec<BTreeSet<usize>> = (0..knn.len()).map(|v| brute_r_star(&knn, v, k)).collect();
    for eta in [0.0, 0.3, 0.5, 1.0] {
        let fast = rerank_candidates(&knn, eta, k).unwrap();
        for l in &knn {
            let mut scored: Vec<(usize, f64, f32)> = l
                .ids
                .iter()
                .zip(&l.sims)
                .map(|(&j, &s)| {
                    let kap = (1.0 - eta) * brute_jaccard(&stars[l.probe], &stars[j]) + eta * s as f64;
                    (j, kap, s)
                })
                .collect();
            // stable: equal kappas keep the cosine order
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let r = &fast[l.probe];
            assert_eq!(r.ids, scored.iter().map(|s| s.0).collect::<Vec<_>>(), "eta={eta}");
            for (got, want) in r.kappas.iter().zip(&scored) {
                assert!((got - want.1).abs() < 1e-12);
            }
        }
    }
}

// ---------- quality curve and k_off ----------

fn brute_koff(ranking: &StructureRanking, labels: &LabelVector, beta: f64) -> (usize, Vec<f64>) {
    let c = labels.get(ranking.probe);
    let total = (0..labels.len()).filter(|&i| i != ranking.probe && labels.get(i) == c).count();
    let mut qs = Vec::new();
    for j in 1..=ranking.len() {
        let hits = ranking.ids[..j].iter().filter(|&&id| labels.get(id) == c).count();
        let p = hits as f64 / j as f64;
        let r = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        let b2 = beta * beta;
        let q = if b2 * p + r == 0.0 { 0.0 } else { (1.0 + b2) * p * r / (b2 * p + r) };
        qs.push(q);
    }
    let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (qs.iter().position(|&q| q == best).unwrap() + 1, qs)
}

pub fn koff_equals_exhaustive_scan() {
    let mut r = rng(77);
    for case in 0..1000 {
        let n = r.random_range(5..60);
        let classes = r.random_range(1..6);
        let labels = random_labels(n, classes, case);
        let probe = r.random_range(0..n);
        let mut others: Vec<usize> = (0..n).filter(|&i| i != probe).collect();
        others.shuffle(&mut r);
        let k = r.random_range(1..=others.len());
        others.truncate(k);
        let ranking = StructureRanking {
            probe,
            kappas: vec![0.0; k],
            original_sims: vec![0.0; k],
            ids: others,
        };
        let beta = [0.5, 1.0, 2.0][case as usize % 3];
        let curve: QualityCurve = quality_curve(&ranking, &labels, beta).unwrap();
        let (koff, qs) = brute_koff(&ranking, &labels, beta);
        assert_eq!(curve.koff, koff, "case {case}");
        for (a, b) in curve.q.iter().zip(&qs) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

// ---------- graphs ----------

pub fn build_graph_equals_dense_or_rule() {
    let mut r = rng(9);
    for case in 0..20 {
        let n = r.random_range(2..40);
        let mut kap = vec![vec![f64::NAN; n]; n];
        let rankings: Vec<StructureRanking> = (0..n)
            .map(|p| {
                let mut ids: Vec<usize> = (0..n).filter(|&i| i != p).collect();
                ids.shuffle(&mut r);
                ids.truncate(r.random_range(1..=ids.len()));
                let kappas: Vec<f64> = ids.iter().map(|_| r.random_range(-1.0..1.0)).collect();
                for (&j, &w) in ids.iter().zip(&kappas) {
                    kap[p][j] = w;
                }
                StructureRanking {
                    probe: p,
                    original_sims: vec![0.0; ids.len()],
                    ids,
                    kappas,
                }
            })
            .collect();
        let g = build_graph(&rankings).unwrap();
        let mut edges = 0;
        for i in 0..n {
            for j in 0..n {
                let dense = i != j && (!kap[i][j].is_nan() || !kap[j][i].is_nan());
                assert_eq!(g.has_edge(i, j), dense, "case {case} ({i},{j})");
                if dense && i < j {
                    edges += 1;
                }
            }
        }
        assert_eq!(g.num_edges(), edges);
        for (i, j, w) in g.edges() {
            let want = [kap[i][j], kap[j][i]].into_iter().filter(|x| !x.is_nan()).fold(f64::MIN, f64::max);
            assert_eq!(w, want);
        }
    }
}

pub fn knn_and_threshold_graphs_equal_dense_rules() {
    let f = random_features(80, 5, 10);
    let knn = build_knn(&f, 15).unwrap();
    for k in [1, 5, 15] {
        let g = knn_graph(&knn, k).unwrap();
        for i in 0..80 {
            for j in 0..80 {
                let dense = knn[i].ids[..k].contains(&j) || knn[j].ids[..k].contains(&i);
                assert_eq!(g.has_edge(i, j), dense);
            }
            assert!(g.degree(i) >= k);
        }
    }
    for tau in [-0.5, 0.0, 0.3, 0.6] {
        let g = threshold_graph(&knn, tau).unwrap();
        for i in 0..80 {
            for j in 0..80 {
                let keep = |a: usize, b: usize| {
                    knn[a].ids.iter().zip(&knn[a].sims).any(|(&id, &s)| id == b && s as f64 > tau)
                };
                assert_eq!(g.has_edge(i, j), keep(i, j) || keep(j, i));
            }
        }
    }
}

pub fn snr_equals_recount() {
    for seed in 0..10 {
        let n = 60;
        let set = random_edge_set(n, 300, seed);
        let g = AdjacencyGraph::from_edges(n, set.iter().map(|&(a, b)| (a, b, 0.0)), false).unwrap();
        let labels = random_labels(n, 3, seed + 100);
        let same = set.iter().filter(|&&(a, b)| labels.get(a) == labels.get(b)).count();
        let cross = set.len() - same;
        let want = if cross == 0 { f64::INFINITY } else { same as f64 / cross as f64 };
        assert_eq!(snr(&g, &labels).unwrap(), want);
    }
}

// ---------- GCN ----------

fn dense_adjacency(g: &AdjacencyGraph) -> Vec<Vec<f64>> {
    let n = g.n();
    let mut a = vec![vec![0.0; n]; n];
    for (i, j, _) in g.edges() {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    a
}

fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dense_layer(g: &AdjacencyGraph, f: &Tensor<f64>, w: &Tensor<f64>) -> Vec<Vec<f64>> {
    let a = dense_adjacency(g);
    let n = g.n();
    let mut out = vec![vec![0.0; w.cols]; n];
    for i in 0..n {
        let deg: f64 = a[i].iter().sum();
        for c in 0..w.cols {
            let mut s = 0.0;
            for j in 0..n {
                for m in 0..f.cols {
                    s += a[i][j] / deg * f.get(j, m) * w.get(m, c);
                }
            }
            out[i][c] = s.max(0.0);
        }
    }
    out
}

pub fn gcn_layer_equals_dense_matrix_product() {
    for seed in 0..10 {
        let g = random_graph(6, 7, seed);
        let f = random_tensor(6, 5, seed + 50);
        let w = random_tensor(5, 4, seed + 90);
        let want = dense_layer(&g, &f, &w);
        let got = gcn_layer(&g, &f, &w).unwrap();
        let f32_got = gcn_layer(
            &g,
            &Tensor::from_vec(6, 5, f.data.iter().map(|&x| x as f32).collect()).unwrap(),
            &Tensor::from_vec(5, 4, w.data.iter().map(|&x| x as f32).collect()).unwrap(),
        )
        .unwrap();
        for i in 0..6 {
            for c in 0..4 {
                assert!((got.get(i, c) - want[i][c]).abs() < 1e-6);
                assert!((f32_got.get(i, c) as f64 - want[i][c]).abs() < 1e-6);
            }
        }
    }
}

pub fn aggregation_is_closed_neighbourhood_mean() {
    let g = random_graph(40, 120, 3);
    let x = random_tensor(40, 7, 4);
    let agg = aggregate(&g, &x).unwrap();
    for i in 0..40 {
        let mut members = vec![i];
        members.extend_from_slice(g.neighbors(i));
        for c in 0..7 {
            let mean = members.iter().map(|&j| x.get(j, c)).sum::<f64>() / members.len() as f64;
            assert!((agg.get(i, c) - mean).abs() < 1e-9);
        }
    }
}

pub fn forward_is_equivariant_under_relabeling() {
    let n = 15;
    let set = random_edge_set(n, 30, 11);
    let g = AdjacencyGraph::from_edges(n, set.iter().map(|&(a, b)| (a, b, 0.0)), false).unwrap();
    let x = random_tensor(n, 6, 12);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(13));
    // vertex v becomes perm[v]
    let pg = AdjacencyGraph::from_edges(n, set.iter().map(|&(a, b)| (perm[a], perm[b], 0.0)), false).unwrap();
    let mut px = Tensor::zeros(n, 6);
    for v in 0..n {
        px.row_mut(perm[v]).copy_from_slice(x.row(v));
    }
    let model = GcnModel::<f64>::new(6, 8, 4, 14);
    let a = model.forward(&g, &x).unwrap().embeddings;
    let b = model.forward(&pg, &px).unwrap().embeddings;
    for v in 0..n {
        for (p, q) in a.row(v).iter().zip(b.row(perm[v])) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

pub fn hinge_loss_equals_all_pairs_enumeration() {
    let s = 0.5f64.sqrt();
    let rows = Tensor::from_vec(
        4,
        2,
        vec![1.0, 0.0, s, s, 0.0, 1.0, -s, s],
    )
    .unwrap();
    for (labels, b1, b2, lam) in [
        ([0u32, 0, 1, 1], 0.9, 1.0, 1.0),
        ([0, 1, 0, 1], 0.9, 1.0, 0.5),
        ([0, 0, 0, 1], 0.5, 0.2, 2.0),
        ([0, 1, 2, 3], 0.9, 1.0, 1.0),
    ] {
        let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0, f64::NEG_INFINITY, 0);
        for i in 0..4 {
            for j in i + 1..4 {
                let y: f64 = rows.row(i).iter().zip(rows.row(j)).map(|(a, b)| a * b).sum();
                if labels[i] == labels[j] {
                    pos += (b1 - y).max(0.0);
                    npos += 1;
                } else {
                    neg = f64::max(neg, (b2 + y).max(0.0));
                    nneg += 1;
                }
            }
        }
        let pos_term = if npos == 0 { 0.0 } else { pos / npos as f64 };
        let neg_term = if nneg == 0 { 0.0 } else { neg };
        let h = hinge_loss(&rows, &labels, b1, b2, lam).unwrap();
        assert!((h.value - (neg_term + lam * pos_term)).abs() < 1e-12, "{labels:?}");
        assert!((h.positive_term - pos_term).abs() < 1e-12);
        assert!((h.negative_term - neg_term).abs() < 1e-12);
        assert_eq!(h.no_positive, npos == 0);
        assert_eq!(h.no_negative, nneg == 0);
    }
}

// ---------- clustering ----------

fn bfs_components(n: usize, edges: &[(usize, usize)]) -> Vec<u32> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut label = vec![u32::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if label[s] != u32::MAX {
            continue;
        }
        label[s] = next;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &u in &adj[v] {
                if label[u] == u32::MAX {
                    label[u] = next;
                    q.push_back(u);
                }
            }
        }
        next += 1;
    }
    label
}

pub fn union_find_equals_bfs() {
    let mut r = rng(21);
    for case in 0..40 {
        let n = r.random_range(1..=2000);
        let m = r.random_range(0..=n * 2);
        let edges: Vec<(usize, usize)> = (0..m).map(|_| (r.random_range(0..n), r.random_range(0..n))).collect();
        let c = union_find_merge(n, &edges).unwrap();
        let want = bfs_components(n, &edges);
        assert_eq!(c.labels, want, "case {case}");
        assert_eq!(c.num_clusters, want.iter().copied().max().map_or(0, |x| x as usize + 1));
    }
}

pub fn link_pairs_equals_edge_filter() {
    let f = random_features(100, 4, 31);
    let g = random_graph(100, 600, 32);
    for theta in [-1.0, -0.2, 0.0, 0.4, 0.9, 1.0] {
        let want: Vec<(usize, usize)> = g
            .edges()
            .into_iter()
            .filter(|&(i, j, _)| sim(f.row(i), f.row(j)) as f64 > theta)
            .map(|(i, j, _)| (i, j))
            .collect();
        let mut got = link_pairs(&f, &g, theta).unwrap();
        got.sort_unstable();
        assert_eq!(got, want, "theta {theta}");
    }
}

// ---------- metrics ----------

fn brute_pairwise(pred: &[u32], truth: &[u32]) -> (f64, f64) {
    let (mut tp, mut pp, mut tt) = (0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            let p = pred[i] == pred[j];
            let t = truth[i] == truth[j];
            pp += p as u64;
            tt += t as u64;
            tp += (p && t) as u64;
        }
    }
    let precision = if pp == 0 { if tt == 0 { 1.0 } else { 0.0 } } else { tp as f64 / pp as f64 };
    let recall = if tt == 0 { 1.0 } else { tp as f64 / tt as f64 };
    (precision, recall)
}

fn brute_bcubed(pred: &[u32], truth: &[u32]) -> (f64, f64) {
    let n = pred.len();
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..n {
        let cluster: Vec<usize> = (0..n).filter(|&j| pred[j] == pred[i]).collect();
        let class: Vec<usize> = (0..n).filter(|&j| truth[j] == truth[i]).collect();
        let both = cluster.iter().filter(|&&j| truth[j] == truth[i]).count() as f64;
        p += both / cluster.len() as f64;
        r += both / class.len() as f64;
    }
    (p / n as f64, r / n as f64)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn f_scores_equal_pair_enumeration() {
    let mut r = rng(41);
    for case in 0..60 {
        let n = r.random_range(1..=500);
        let truth = random_labels(n, r.random_range(1..30), case * 2);
        let pred_raw = random_labels(n, r.random_range(1..30), case * 2 + 1);
        let pred = ClusterAssignment::from_labels(&pred_raw);
        let (bp, br) = brute_pairwise(pred_raw.as_slice(), truth.as_slice());
        let fp = pairwise_f(&pred, &truth).unwrap();
        assert!((fp.precision - bp).abs() < 1e-9 && (fp.recall - br).abs() < 1e-9, "case {case}");
        assert!((fp.f - harmonic(bp, br)).abs() < 1e-9);
        let (cp, cr) = brute_bcubed(pred_raw.as_slice(), truth.as_slice());
        let fb = bcubed_f(&pred, &truth).unwrap();
        assert!((fb.precision - cp).abs() < 1e-9 && (fb.recall - cr).abs() < 1e-9);
        assert!((fb.f - harmonic(cp, cr)).abs() < 1e-9);
    }
}

pub fn worked_metric_examples() {
    let truth = LabelVector::from_raw([0, 0, 1, 1]);
    let one = ClusterAssignment::from_labels(&LabelVector::from_raw([5, 5, 5, 5]));
    let p = pairwise_f(&one, &truth).unwrap();
    assert!((p.precision - 2.0 / 6.0).abs() < 1e-12 && p.recall == 1.0 && (p.f - 0.5).abs() < 1e-12);
    let b = bcubed_f(&one, &truth).unwrap();
    assert!((b.precision - 0.5).abs() < 1e-12 && b.recall == 1.0 && (b.f - 2.0 / 3.0).abs() < 1e-12);
    let singles = ClusterAssignment::from_labels(&LabelVector::from_raw([0, 1, 2, 3]));
    assert_eq!(pairwise_f(&singles, &truth).unwrap().recall, 0.0);
}
