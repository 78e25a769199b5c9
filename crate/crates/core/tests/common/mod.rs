#![allow(dead_code)]

use std::collections::VecDeque;

use evolve_gnn::graph::ClassVocabulary;
use evolve_gnn::matrix::Matrix;
use evolve_gnn::models::{GraphContext, Model};
use evolve_gnn::nn::{Tape, Var};
use evolve_gnn::sparse::CsrMatrix;
use evolve_gnn::{Result, TemporalGraph};
use rand::Rng;

/// Random temporal graph with `n` nodes, about `avg_degree` neighbors per
/// node, `d` dense-ish features and `c` classes.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, avg_degree: f64, d: usize, c: usize, t_max: i64) -> TemporalGraph {
    let node_time: Vec<i64> = (0..n).map(|_| rng.gen_range(0..=t_max)).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let p = if n > 1 { (avg_degree / (n - 1) as f64).min(1.0) } else { 0.0 };
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let mut triplets = Vec::new();
    for u in 0..n {
        for j in 0..d {
            if rng.gen_bool(0.6) {
                triplets.push((u, j, rng.gen_range(0.1..1.0)));
            }
        }
    }
    let x = CsrMatrix::from_triplets(n, d, triplets).unwrap();
    let vocab = ClassVocabulary::new((0..c).map(|i| format!("c{i}")).collect()).unwrap();
    TemporalGraph::new(node_time, labels, vocab, edges, x).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Shortest-path hop counts from `u`, by breadth-first search over the
/// public neighbor lists.
pub fn bfs_distances(g: &TemporalGraph, u: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.num_nodes()];
    dist[u] = Some(0);
    let mut queue = VecDeque::from([u]);
    while let Some(x) = queue.pop_front() {
        let dx = dist[x].unwrap();
        for &y in g.neighbors(x) {
            if dist[y].is_none() {
                dist[y] = Some(dx + 1);
                queue.push_back(y);
            }
        }
    }
    dist
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between reverse-mode gradients and central
/// differences of the scalar `f(inputs)` for every input entry.
pub fn check_gradients<F>(inputs: &[Matrix], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix]| -> (Tape, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars).expect("forward pass");
        (tape, out, vars)
    };
    let (tape, out, vars) = eval(inputs);
    assert_eq!(tape.value(out).shape(), (1, 1), "check function must return a scalar");
    let mut grads = tape.backward(out).unwrap();
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, m)| grads.take_or_zeros(v, m.shape()))
        .collect();
    let scalar = |values: &[Matrix]| {
        let (tape, out, _) = eval(values);
        tape.value(out).get(0, 0)
    };
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (i, m) in inputs.iter().enumerate() {
        for idx in 0..m.len() {
            let orig = m.as_slice()[idx];
            work[i].as_mut_slice()[idx] = orig + FD_STEP;
            let plus = scalar(&work);
            work[i].as_mut_slice()[idx] = orig - FD_STEP;
            let minus = scalar(&work);
            work[i].as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i].as_slice()[idx], numeric));
        }
    }
    worst
}

/// Worst relative error of a model's parameter gradients of the masked
/// cross-entropy, with dropout off.
pub fn check_model_gradients(model: &mut Model, ctx: &GraphContext, rows: &[usize], targets: &[usize]) -> f64 {
    let (_, analytic) = model.loss_and_gradients(ctx, rows, targets, None).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..model.params().len() {
        for idx in 0..model.params().value(i).len() {
            let orig = model.params().value(i).as_slice()[idx];
            model.params_mut().value_mut(i).as_mut_slice()[idx] = orig + FD_STEP;
            let (plus, _) = model.loss_and_gradients(ctx, rows, targets, None).unwrap();
            model.params_mut().value_mut(i).as_mut_slice()[idx] = orig - FD_STEP;
            let (minus, _) = model.loss_and_gradients(ctx, rows, targets, None).unwrap();
            model.params_mut().value_mut(i).as_mut_slice()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i].as_slice()[idx], numeric));
        }
    }
    worst
}

/// Moves every parameter off its initial value. Zero-initialized biases
/// put ReLU inputs of featureless nodes exactly on the kink, where central
/// differences are meaningless.
pub fn jitter<R: Rng>(model: &mut Model, rng: &mut R, scale: f64) {
    for i in 0..model.params().len() {
        for v in model.params_mut().value_mut(i).as_mut_slice() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}
