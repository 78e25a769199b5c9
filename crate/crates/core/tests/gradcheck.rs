mod common;

use std::sync::Arc;

use common::*;
use evolve_gnn::matrix::Matrix;
use evolve_gnn::models::{Architecture, GraphContext, Model, ModelSpec};
use evolve_gnn::nn::{AttentionSpec, HeadCombine, Tape, Var};
use evolve_gnn::sparse::CsrMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduce any output to a scalar with fixed random weights.
fn probe(tape: &mut Tape, x: Var, seed: u64) -> evolve_gnn::Result<Var> {
    let (r, c) = tape.value(x).shape();
    let w = random_matrix(&mut rng(seed), r, c, -1.0, 1.0);
    tape.weighted_sum(x, w)
}

fn assert_close(name: &str, worst: f64) {
    assert!(worst < FD_TOLERANCE, "{name}: relative error {worst:e}");
}

fn sparse(seed: u64, rows: usize, cols: usize) -> Arc<CsrMatrix> {
    let m = random_matrix(&mut rng(seed), rows, cols, -1.0, 1.0);
    let masked = Matrix::from_vec(rows, cols, m.as_slice().iter().map(|&v| if v.abs() < 0.4 { 0.0 } else { v }).collect()).unwrap();
    Arc::new(CsrMatrix::from_dense(&masked))
}

#[test]
fn dense_primitives() {
    let a = random_matrix(&mut rng(1), 5, 4, -1.0, 1.0);
    let b = random_matrix(&mut rng(2), 4, 3, -1.0, 1.0);
    let c = random_matrix(&mut rng(3), 5, 4, -1.0, 1.0);
    let row = random_matrix(&mut rng(4), 1, 4, -1.0, 1.0);

    assert_close("matmul", check_gradients(&[a.clone(), b.clone()], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        probe(t, y, 10)
    }));
    assert_close("add", check_gradients(&[a.clone(), c.clone()], |t, v| {
        let y = t.add(v[0], v[1])?;
        probe(t, y, 11)
    }));
    assert_close("add_row", check_gradients(&[a.clone(), row.clone()], |t, v| {
        let y = t.add_row(v[0], v[1])?;
        probe(t, y, 12)
    }));
    assert_close("concat_cols", check_gradients(&[a.clone(), c.clone()], |t, v| {
        let y = t.concat_cols(v[0], v[1])?;
        probe(t, y, 13)
    }));
    assert_close("slice_rows", check_gradients(std::slice::from_ref(&a), |t, v| {
        let y = t.slice_rows(v[0], 1, 4)?;
        probe(t, y, 14)
    }));
    assert_close("softmax_rows", check_gradients(std::slice::from_ref(&a), |t, v| {
        let y = t.softmax_rows(v[0])?;
        probe(t, y, 15)
    }));
}

#[test]
fn activations_away_from_kinks() {
    let raw = random_matrix(&mut rng(5), 6, 5, 0.05, 1.0);
    let signs = random_matrix(&mut rng(6), 6, 5, -1.0, 1.0);
    let x = Matrix::from_vec(
        6,
        5,
        raw.as_slice().iter().zip(signs.as_slice()).map(|(&v, &s)| if s < 0.0 { -v } else { v }).collect(),
    )
    .unwrap();
    assert_close("relu", check_gradients(std::slice::from_ref(&x), |t, v| {
        let y = t.relu(v[0])?;
        probe(t, y, 20)
    }));
    assert_close("leaky_relu", check_gradients(std::slice::from_ref(&x), |t, v| {
        let y = t.leaky_relu(v[0], 0.2)?;
        probe(t, y, 21)
    }));
    assert_close("elu", check_gradients(std::slice::from_ref(&x), |t, v| {
        let y = t.elu(v[0])?;
        probe(t, y, 22)
    }));
    assert_close("dropout", check_gradients(&[x], |t, v| {
        let y = t.dropout(v[0], 0.5, &mut rng(23))?;
        probe(t, y, 24)
    }));
}

#[test]
fn sparse_products() {
    let s = sparse(30, 6, 5);
    let x = random_matrix(&mut rng(31), 5, 3, -1.0, 1.0);
    assert_close("spmm", check_gradients(std::slice::from_ref(&x), |t, v| {
        let y = t.spmm(&s, v[0])?;
        probe(t, y, 32)
    }));
    let g = random_graph(&mut rng(33), 5, 2.0, 3, 2, 3);
    let ctx = GraphContext::new(&g);
    assert_close("row_mean_aggregate", check_gradients(&[x], |t, v| {
        let y = t.row_mean_aggregate(ctx.mean_operator(), v[0])?;
        probe(t, y, 34)
    }));
}

#[test]
fn cross_entropy() {
    let logits = random_matrix(&mut rng(40), 7, 4, -2.0, 2.0);
    assert_close("masked_cross_entropy", check_gradients(&[logits], |t, v| {
        t.masked_cross_entropy(v[0], &[0, 2, 3, 6], &[1, 0, 3, 3])
    }));
}

#[test]
fn attention_both_combines() {
    let g = random_graph(&mut rng(50), 9, 3.0, 3, 2, 3);
    let ctx = GraphContext::new(&g);
    for (heads, dim, combine) in [(3, 2, HeadCombine::Concat), (2, 3, HeadCombine::Mean), (1, 4, HeadCombine::Mean)] {
        let z = random_matrix(&mut rng(51), 9, heads * dim, -1.0, 1.0);
        let a_src = random_matrix(&mut rng(52), heads, dim, -1.0, 1.0);
        let a_dst = random_matrix(&mut rng(53), heads, dim, -1.0, 1.0);
        let spec = AttentionSpec {
            structure: Arc::clone(ctx.attention_structure()),
            heads,
            head_dim: dim,
            negative_slope: 0.2,
            combine,
        };
        let worst = check_gradients(&[z, a_src, a_dst], |t, v| {
            let y = t.attention(v[0], v[1], v[2], spec.clone())?;
            probe(t, y, 54)
        });
        assert_close(&format!("attention {heads}x{dim} {combine:?}"), worst);
    }
}

#[test]
fn composed_chain() {
    let s = sparse(60, 6, 6);
    let x = random_matrix(&mut rng(61), 6, 4, -1.0, 1.0);
    let w = random_matrix(&mut rng(62), 4, 3, -1.0, 1.0);
    let b = random_matrix(&mut rng(63), 1, 3, -1.0, 1.0);
    assert_close("chain", check_gradients(&[x, w, b], |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.spmm(&s, h)?;
        let h = t.add_row(h, v[2])?;
        let h = t.elu(h)?;
        let h = t.concat_cols(h, h)?;
        t.masked_cross_entropy(h, &[0, 1, 5], &[2, 4, 0])
    }));
}

#[test]
fn every_model_on_small_random_graphs() {
    for seed in 0..3u64 {
        let mut r = rng(100 + seed);
        let n = 12 + 6 * seed as usize;
        let g = random_graph(&mut r, n, 3.0, 6, 3, 4);
        let ctx = GraphContext::new(&g);
        let rows: Vec<usize> = (0..n).filter(|u| u % 3 != 0).collect();
        let targets: Vec<usize> = rows.iter().map(|&u| g.label(u)).collect();
        for arch in Architecture::ALL {
            let mut spec = ModelSpec::new(arch, 6, 3);
            if arch != Architecture::Gat {
                spec.hidden = 8;
            }
            let mut model = Model::init_seeded(spec, seed).unwrap();
            jitter(&mut model, &mut r, 0.1);
            let worst = check_model_gradients(&mut model, &ctx, &rows, &targets);
            assert_close(&format!("{arch} seed {seed}"), worst);
        }
    }
}
