use ndarray::{array, s, Array1, Array2, ArrayView1, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{ConstMatrix, Segments, Tape};
use crate::graph::Graph;
use crate::tasks::TaskKind;
use crate::train::init_params;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: (usize, usize), r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

fn layer_norm(v: ArrayView1<f64>) -> Array1<f64> {
    let d = v.len() as f64;
    let mu = v.sum() / d;
    let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / d;
    v.mapv(|x| (x - mu) / (var + 1e-7).sqrt())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let t: f64 = e.iter().sum();
    e.into_iter().map(|x| x / t).collect()
}

fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
    assert_eq!(a.dim(), b.dim());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{x} vs {y}\n{a}\n{b}");
    }
}

fn star() -> Graph {
    Graph::new(vec![(0, 1), (0, 2), (0, 3)], Array2::zeros((4, 3)), false).unwrap()
}

#[test]
fn neigh_mean_of_identical_rows() {
    // Neighbors share x; with W = [0; I] the pre-activation is the mean.
    let x = array![[5.0, -1.0], [0.3, 0.7], [0.3, 0.7], [0.3, 0.7]];
    let g = Graph::new(vec![(0, 1), (0, 2), (0, 3)], x.clone(), false).unwrap();
    let plan = build_plan(&g, &[0], 1, &NeighborMode::Full, PoolMode::Batch, None, &mut rng(0)).unwrap();
    let mut tape = Tape::new();
    let w = tape.param(array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    let input = Input::Const(ConstMatrix::Dense(x.select(Axis(0), &plan.nodes[0])));
    let h = neigh_aggr(&mut tape, &input, &plan.layers[0], w).unwrap();
    let expected = unit(array![sig(0.3), sig(0.7)]);
    assert_close(tape.value(h), &expected.insert_axis(Axis(0)), 1e-12);
}

#[test]
fn neigh_matches_dense_oracle_on_star() {
    let mut r = rng(1);
    let x = random((4, 3), &mut r);
    let g = Graph::new(star().edges().to_vec(), x.clone(), false).unwrap();
    let wv = random((6, 5), &mut r);
    let plan = build_plan(&g, &[0, 1, 2, 3], 1, &NeighborMode::Sampled(vec![2]), PoolMode::Batch, None, &mut rng(7))
        .unwrap();
    let lp = &plan.layers[0];
    let mut tape = Tape::new();
    let w = tape.param(wv.clone()).unwrap();
    for input in [
        Input::Const(ConstMatrix::Dense(x.select(Axis(0), &plan.nodes[0]))),
        Input::Const(ConstMatrix::auto(x.select(Axis(0), &plan.nodes[0]).view(), 1.0)),
        Input::Var(tape.constant(x.select(Axis(0), &plan.nodes[0])).unwrap()),
    ] {
        let h = neigh_aggr(&mut tape, &input, lp, w).unwrap();
        for (c, &v) in plan.nodes[1].iter().enumerate() {
            let members: Vec<usize> = lp.neigh_rows[lp.neigh_segments.range(c)].iter().map(|&p| plan.nodes[0][p]).collect();
            assert_eq!(members.len(), 2);
            let mean = (x.row(members[0]).to_owned() + x.row(members[1])) / 2.0;
            let cat = ndarray::concatenate![Axis(0), x.row(v), mean];
            let expected = unit(cat.dot(&wv).mapv(sig));
            for d in 0..5 {
                assert!((tape.value(h)[[c, d]] - expected[d]).abs() < 1e-12);
            }
        }
    }
}

fn attention_fixture(m: usize, dk: usize, din: usize, seed: u64) -> (Tape, Input, Windows, AttentionParams, Array2<f64>, [Array2<f64>; 4]) {
    let mut r = rng(seed);
    let x = random((m + 1, din), &mut r);
    let ws = [random((din, dk), &mut r), random((din, dk), &mut r), random((din, dk), &mut r), random((dk, dk), &mut r)];
    let mut tape = Tape::new();
    let vars: Vec<_> = ws.iter().map(|w| tape.param(w.clone()).unwrap()).collect();
    let p = AttentionParams { wq: vars[0], wk: vars[1], wv: vars[2], wo: vars[3], heads: 1 };
    let windows = Windows { segments: Segments::uniform(1, m), rows: (1..=m).collect() };
    let input = Input::Var(tape.constant(x.clone()).unwrap());
    (tape, input, windows, p, x, ws)
}

#[test]
fn singleton_window_returns_its_value() {
    let (mut tape, input, windows, p, x, ws) = attention_fixture(1, 4, 3, 2);
    let out = scaled_attention(&mut tape, &input, 1, &windows, &p).unwrap();
    assert_close(tape.value(out.weights[0]), &array![[1.0]], 0.0);
    let expected = x.slice(s![1..2, ..]).dot(&ws[2]).dot(&ws[3]);
    assert_close(tape.value(out.output), &expected, 1e-12);
}

#[test]
fn identical_keys_give_uniform_weights() {
    let mut r = rng(3);
    let mut x = random((5, 3), &mut r);
    let row = x.row(1).to_owned();
    for i in 2..5 {
        x.row_mut(i).assign(&row);
    }
    let mut tape = Tape::new();
    let w: Vec<_> = (0..4).map(|_| tape.param(random((3, 3), &mut r)).unwrap()).collect();
    let p = AttentionParams { wq: w[0], wk: w[1], wv: w[2], wo: w[3], heads: 1 };
    let windows = Windows { segments: Segments::uniform(1, 4), rows: vec![1, 2, 3, 4] };
    let input = Input::Var(tape.constant(x).unwrap());
    let out = scaled_attention(&mut tape, &input, 1, &windows, &p).unwrap();
    assert_close(tape.value(out.weights[0]), &Array2::from_elem((4, 1), 0.25), 1e-15);
}

#[test]
fn attention_matches_dense_formula() {
    let (mut tape, input, windows, p, x, ws) = attention_fixture(4, 8, 5, 4);
    let out = scaled_attention(&mut tape, &input, 1, &windows, &p).unwrap();
    let q = x.row(0).dot(&ws[0]);
    let scores: Vec<f64> = (1..=4).map(|u| q.dot(&x.row(u).dot(&ws[1])) / 8f64.sqrt()).collect();
    let a = softmax(&scores);
    let mut head = Array1::zeros(8);
    for (i, u) in (1..=4).enumerate() {
        head = head + a[i] * &x.row(u).dot(&ws[2]);
    }
    let expected = head.dot(&ws[3]).insert_axis(Axis(0));
    assert_close(tape.value(out.output), &expected, 1e-12);
    let got: Vec<f64> = tape.value(out.weights[0]).iter().copied().collect();
    for (g, e) in got.iter().zip(&a) {
        assert!((g - e).abs() < 1e-14);
    }
}

#[test]
fn multi_head_splits_the_width() {
    let (mut tape, input, windows, mut p, x, ws) = attention_fixture(3, 4, 3, 5);
    p.heads = 2;
    let out = scaled_attention(&mut tape, &input, 1, &windows, &p).unwrap();
    let mut head = Array1::zeros(4);
    for h in 0..2 {
        let cols = s![.., 2 * h..2 * h + 2];
        let q = x.row(0).dot(&ws[0].slice(cols));
        let scores: Vec<f64> = (1..=3).map(|u| q.dot(&x.row(u).dot(&ws[1].slice(cols))) / 2f64.sqrt()).collect();
        let a = softmax(&scores);
        for (i, u) in (1..=3).enumerate() {
            let v = x.row(u).dot(&ws[2].slice(cols));
            for d in 0..2 {
                head[2 * h + d] += a[i] * v[d];
            }
        }
    }
    assert_close(tape.value(out.output), &head.dot(&ws[3]).insert_axis(Axis(0)), 1e-12);
}

fn small_config(variant: VariantKind, input_dim: usize, hidden: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        variant,
        input_dim,
        hidden,
        layers,
        heads: 1,
        task: TaskKind::Node,
        classes: 3,
    }
}

/// Scripted recomputation of the attention block for every center.
fn topm_oracle(params: &ModelParams, layer: usize, x: &Array2<f64>, windows: &Windows, centers: usize) -> Array2<f64> {
    let p = |s: &str| params.get(&format!("layer{layer}.attn.{s}")).unwrap().clone();
    let d = p("wq").ncols();
    let mut out = Array2::zeros((centers, d));
    for c in 0..centers {
        let q = x.row(c).dot(&p("wq"));
        let win = windows.window(c);
        let scores: Vec<f64> = win.iter().map(|&u| q.dot(&x.row(u).dot(&p("wk"))) / (d as f64).sqrt()).collect();
        let a = softmax(&scores);
        let mut head = Array1::zeros(d);
        for (i, &u) in win.iter().enumerate() {
            head = head + a[i] * &x.row(u).dot(&p("wv"));
        }
        let attn = head.dot(&p("wo"));
        let res = match params.get(&format!("layer{layer}.attn.wres")) {
            Some(w) => x.row(c).dot(w),
            None => x.row(c).to_owned(),
        };
        let h2 = layer_norm((res + attn).view()) * p("ln1.gain").row(0) + p("ln1.bias").row(0);
        let hidden = (h2.dot(&p("ffn.w1")) + p("ffn.b1").row(0)).mapv(|z| z.max(0.0));
        let h3 = hidden.dot(&p("ffn.w2")) + p("ffn.b2").row(0);
        let y = layer_norm((h3 + &h2).view()) * p("ln2.gain").row(0) + p("ln2.bias").row(0);
        out.row_mut(c).assign(&y);
    }
    out
}

fn sbm_like(n: usize, dim: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random_bool(0.3) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(edges, random((n, dim), &mut r), false).unwrap()
}

fn layer_inputs(g: &Graph, plan: &Plan) -> Array2<f64> {
    g.features().select(Axis(0), &plan.nodes[0])
}

#[test]
fn topm_block_matches_script() {
    for (din, hidden) in [(4, 4), (5, 4)] {
        let g = sbm_like(8, din, 5);
        let params = init_params(small_config(VariantKind::Tangnn, din, hidden, 1), 11).unwrap();
        let plan = build_plan(&g, &(0..8).collect::<Vec<_>>(), 1, &NeighborMode::Full, PoolMode::Batch, None, &mut rng(0)).unwrap();
        let x = layer_inputs(&g, &plan);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape).unwrap();
        let bound = Bound::new(&params, &vars).unwrap();
        let input = Input::Const(ConstMatrix::Dense(x.clone()));
        let windows = select_windows(&x, &plan.nodes[0], 8, None, &params.aux()[0], 3, &mut rng(1)).unwrap();
        let out = topm_aggr(&mut tape, &input, 8, &windows, &TopmParams::bind(&bound, 1).unwrap()).unwrap();
        assert_close(tape.value(out.output), &topm_oracle(&params, 1, &x, &windows, 8), 1e-10);
    }
}

#[test]
fn zero_ffn_collapses_to_double_norm() {
    let g = sbm_like(6, 4, 6);
    let mut params = init_params(small_config(VariantKind::Tangnn, 4, 4, 1), 3).unwrap();
    for name in ["layer1.attn.ffn.w1", "layer1.attn.ffn.w2"] {
        params.get_mut(name).unwrap().fill(0.0);
    }
    let plan = build_plan(&g, &(0..6).collect::<Vec<_>>(), 1, &NeighborMode::Full, PoolMode::Batch, None, &mut rng(0)).unwrap();
    let x = layer_inputs(&g, &plan);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape).unwrap();
    let bound = Bound::new(&params, &vars).unwrap();
    let windows = select_windows(&x, &plan.nodes[0], 6, None, &params.aux()[0], 2, &mut rng(1)).unwrap();
    let tp = TopmParams::bind(&bound, 1).unwrap();
    let input = Input::Const(ConstMatrix::Dense(x.clone()));
    let out = topm_aggr(&mut tape, &input, 6, &windows, &tp).unwrap();
    let attn = tape.value(out.attention.output).clone();
    let mut expected = Array2::zeros((6, 4));
    for c in 0..6 {
        let once = layer_norm((x.row(c).to_owned() + attn.row(c)).view());
        expected.row_mut(c).assign(&layer_norm(once.view()));
    }
    assert_close(tape.value(out.output), &expected, 1e-9);
}

#[test]
fn fuse_wiring() {
    let mut r = rng(8);
    let h = random((5, 3), &mut r).mapv(f64::abs);
    let hp = random((5, 3), &mut r);
    let mut tape = Tape::new();
    let mut w1 = Array2::zeros((6, 3));
    w1.slice_mut(s![0..3, ..]).assign(&Array2::eye(3));
    let mlp = Mlp {
        w1: tape.param(w1).unwrap(),
        b1: tape.param(Array2::zeros((1, 3))).unwrap(),
        w2: tape.param(Array2::eye(3)).unwrap(),
        b2: tape.param(Array2::zeros((1, 3))).unwrap(),
    };
    let hv = tape.constant(h.clone()).unwrap();
    let hpv = tape.constant(hp.clone()).unwrap();
    let g = fuse(&mut tape, hv, hpv, &mlp).unwrap();
    assert_close(tape.value(g), &h, 0.0);

    let (w1, b1, w2, b2) = (random((6, 4), &mut r), random((1, 4), &mut r), random((4, 3), &mut r), random((1, 3), &mut r));
    let mlp = Mlp {
        w1: tape.param(w1.clone()).unwrap(),
        b1: tape.param(b1.clone()).unwrap(),
        w2: tape.param(w2.clone()).unwrap(),
        b2: tape.param(b2.clone()).unwrap(),
    };
    let g = fuse(&mut tape, hv, hpv, &mlp).unwrap();
    let cat = ndarray::concatenate![Axis(1), h, hp];
    let expected = ((cat.dot(&w1) + &b1).mapv(|z| z.max(0.0))).dot(&w2) + &b2;
    assert_close(tape.value(g), &expected, 1e-12);

    // Zero h' block and no relu kink in play: output depends on h only.
    let zero = tape.constant(Array2::zeros((5, 3))).unwrap();
    let lin = Mlp {
        w1: tape.param(Array2::eye(6).slice(s![.., 0..3]).to_owned()).unwrap(),
        b1: tape.param(Array2::from_elem((1, 3), 10.0)).unwrap(),
        w2: tape.param(Array2::eye(3)).unwrap(),
        b2: tape.param(Array2::from_elem((1, 3), -10.0)).unwrap(),
    };
    let g = fuse(&mut tape, hv, zero, &lin).unwrap();
    assert_close(tape.value(g), &h, 1e-12);
    let short = tape.constant(Array2::zeros((4, 3))).unwrap();
    assert!(fuse(&mut tape, hv, short, &lin).is_err());
}

fn run_forward(params: &ModelParams, g: &Graph, plan: &Plan, m: usize) -> (Tape, ForwardOutput) {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape).unwrap();
    let bound = Bound::new(params, &vars).unwrap();
    let feats = ConstMatrix::Dense(g.features().clone());
    let out = forward(&mut tape, &bound, &feats, plan, m, &mut rng(99)).unwrap();
    (tape, out)
}

#[test]
fn single_layer_variants_collapse() {
    let g = sbm_like(12, 5, 9);
    let plan = build_plan(&g, &[0, 3, 7], 1, &NeighborMode::Sampled(vec![3]), PoolMode::Batch, None, &mut rng(2)).unwrap();
    let base = init_params(small_config(VariantKind::Tangnn, 5, 6, 1), 4).unwrap();
    let (tape, out) = run_forward(&base, &g, &plan, 4);
    let reference = tape.value(out.embeddings).clone();
    for v in [VariantKind::Flc, VariantKind::Nai, VariantKind::Tai] {
        let p = init_params(small_config(v, 5, 6, 1), 4).unwrap();
        let (tape, out) = run_forward(&p, &g, &plan, 4);
        assert_eq!(tape.value(out.embeddings), &reference, "{v}");
    }
    let lc = init_params(small_config(VariantKind::Lc, 5, 6, 1), 4).unwrap();
    let (tape, out) = run_forward(&lc, &g, &plan, 4);
    assert_eq!(tape.value(out.fused[0].unwrap()), &reference);
    let w1 = lc.get("lc.w1").unwrap();
    let expected = (reference.dot(w1) + lc.get("lc.b1").unwrap()).mapv(|z| z.max(0.0)).dot(lc.get("lc.w2").unwrap())
        + lc.get("lc.b2").unwrap();
    assert_close(tape.value(out.embeddings), &expected, 1e-12);
}

#[test]
fn tangnn_and_flc_differ_at_two_layers() {
    let g = sbm_like(20, 6, 10);
    let plan = build_plan(&g, &[1, 2, 3], 2, &NeighborMode::Sampled(vec![4, 3]), PoolMode::Batch, None, &mut rng(3)).unwrap();
    let a = init_params(small_config(VariantKind::Tangnn, 6, 8, 2), 5).unwrap();
    let b = init_params(small_config(VariantKind::Flc, 6, 8, 2), 5).unwrap();
    let (ta, oa) = run_forward(&a, &g, &plan, 5);
    let (tb, ob) = run_forward(&b, &g, &plan, 5);
    let diff = (ta.value(oa.embeddings) - tb.value(ob.embeddings)).mapv(f64::abs).fold(0.0, |m: f64, &x| m.max(x));
    assert!(diff > 1e-6);
}

#[test]
fn default_width_output_shape() {
    let g = sbm_like(40, 10, 11);
    let batch: Vec<usize> = (0..16).collect();
    for v in VariantKind::ALL {
        let cfg = ModelConfig::new(v, 10, TaskKind::Node, 2);
        let p = init_params(cfg, 1).unwrap();
        let plan = build_plan(&g, &batch, 2, &NeighborMode::Sampled(vec![20, 10]), PoolMode::Batch, None, &mut rng(4)).unwrap();
        let (tape, out) = run_forward(&p, &g, &plan, 30);
        assert_eq!(tape.shape(out.embeddings), (16, 64), "{v}");
    }
}

#[test]
fn small_pool_uses_all_other_nodes_or_self() {
    let x = array![[1.0, 0.2], [0.3, 0.9], [0.5, 0.5]];
    let w = select_windows(&x, &[0, 1, 2], 3, None, &crate::topm::AuxiliaryVector::new(array![1.0, 0.0]).unwrap(), 30, &mut rng(0)).unwrap();
    for c in 0..3 {
        let mut win = w.window(c).to_vec();
        win.sort();
        assert_eq!(win, (0..3).filter(|&u| u != c).collect::<Vec<_>>());
    }
    let groups = [0, 1, 1];
    let w = select_windows(&x, &[0, 1, 2], 3, Some(&groups), &crate::topm::AuxiliaryVector::new(array![1.0, 0.0]).unwrap(), 30, &mut rng(0)).unwrap();
    assert_eq!(w.window(0), &[0]);
    assert_eq!(w.window(1), &[2]);
}

#[test]
fn permutation_equivariance() {
    let g = sbm_like(15, 4, 12);
    let mut perm: Vec<usize> = (0..15).collect();
    perm.reverse();
    perm.swap(2, 9);
    let pg = g.permuted(&perm).unwrap();
    let params = init_params(small_config(VariantKind::Tangnn, 4, 6, 2), 6).unwrap();
    let targets: Vec<usize> = (0..15).collect();
    let ptargets: Vec<usize> = targets.iter().map(|&v| perm[v]).collect();
    let plan = build_plan(&g, &targets, 2, &NeighborMode::Full, PoolMode::Full, None, &mut rng(0)).unwrap();
    let pplan = build_plan(&pg, &ptargets, 2, &NeighborMode::Full, PoolMode::Full, None, &mut rng(0)).unwrap();
    let (ta, oa) = run_forward(&params, &g, &plan, 4);
    let (tb, ob) = run_forward(&params, &pg, &pplan, 4);
    // Row i of both outputs belongs to target i (original id) and its image.
    assert_close(ta.value(oa.embeddings), tb.value(ob.embeddings), 1e-9);
}

#[test]
fn layer_one_depends_only_on_receptive_field() {
    let g = sbm_like(16, 4, 13);
    let params = init_params(small_config(VariantKind::Tangnn, 4, 6, 1), 7).unwrap();
    let targets: Vec<usize> = (0..16).collect();
    let plan = build_plan(&g, &targets, 1, &NeighborMode::Sampled(vec![2]), PoolMode::Batch, None, &mut rng(1)).unwrap();
    let (tape, out) = run_forward(&params, &g, &plan, 2);
    let base = tape.value(out.embeddings).clone();
    let frozen = plan.clone().with_frozen(out.windows.clone()).unwrap();
    let v = 0;
    let lp = &plan.layers[0];
    let mut field: Vec<usize> = vec![plan.nodes[0][v]];
    field.extend(lp.neigh_rows[lp.neigh_segments.range(v)].iter().map(|&p| plan.nodes[0][p]));
    field.extend(out.windows[0].window(v).iter().map(|&p| plan.nodes[0][p]));
    let outside = (0..16).find(|u| !field.contains(u)).expect("some node outside");
    let mut feats = g.features().clone();
    feats.row_mut(outside).fill(7.5);
    let changed = Graph::new(g.edges().to_vec(), feats, false).unwrap();
    let (tape2, out2) = run_forward(&params, &changed, &frozen, 2);
    assert_eq!(tape2.value(out2.embeddings).row(v), base.row(v));
    let inside = field[1];
    let mut feats = g.features().clone();
    feats.row_mut(inside).fill(7.5);
    let changed = Graph::new(g.edges().to_vec(), feats, false).unwrap();
    let (tape3, out3) = run_forward(&params, &changed, &frozen, 2);
    assert_ne!(tape3.value(out3.embeddings).row(v), base.row(v));
}

#[test]
fn two_layer_gradients_match_finite_differences() {
    let g = sbm_like(16, 4, 14);
    let params = init_params(small_config(VariantKind::Tangnn, 4, 5, 2), 8).unwrap();
    let targets: Vec<usize> = (0..8).collect();
    let plan = build_plan(&g, &targets, 2, &NeighborMode::Sampled(vec![3, 2]), PoolMode::Batch, None, &mut rng(2)).unwrap();
    let (_, out) = run_forward(&params, &g, &plan, 3);
    let frozen = plan.with_frozen(out.windows).unwrap();
    let labels: Vec<usize> = targets.iter().map(|v| v % 3).collect();
    let mut q = Array2::zeros((8, 3));
    for (i, &l) in labels.iter().enumerate() {
        q[[i, l]] = 1.0;
    }
    let feats = ConstMatrix::Dense(g.features().clone());
    let report = crate::autodiff::finite_diff_check(params.values(), 1e-6, 1e-4, |tape, vars| {
        let bound = Bound::new(&params, vars)?;
        let out = forward(tape, &bound, &feats, &frozen, 3, &mut rng(0))?;
        let p = crate::tasks::node_classify(tape, &bound, out.embeddings)?;
        crate::train::bce(tape, p, &q)
    })
    .unwrap();
    assert!(report.passed, "max rel error {}", report.max_rel_error());
}

#[test]
fn variant_names_parse() {
    for v in VariantKind::ALL {
        assert_eq!(v.name().parse::<VariantKind>().unwrap(), v);
    }
    assert_eq!("tangnn-lc".parse::<VariantKind>().unwrap(), VariantKind::Lc);
    assert!(matches!("bogus".parse::<VariantKind>(), Err(crate::Error::Config(_))));
}

#[test]
fn params_reject_wrong_shapes() {
    let cfg = small_config(VariantKind::Nai, 4, 6, 2);
    let p = init_params(cfg, 0).unwrap();
    assert!(p.get("layer1.proj.w").is_some());
    assert!(p.get("layer2.proj.w").is_none());
    assert!(p.get("layer1.fuse.w1").is_none());
    let mut values = p.values().to_vec();
    values[0] = Array2::zeros((1, 1));
    assert!(matches!(ModelParams::from_parts(cfg, values, p.aux().to_vec()), Err(crate::Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn layer_invariants(n in 3usize..20, din in 1usize..8, hidden in 2usize..10, m in 1usize..8, seed in any::<u64>()) {
        let g = sbm_like(n, din, seed);
        let params = init_params(small_config(VariantKind::Tangnn, din, hidden, 1), seed).unwrap();
        let targets: Vec<usize> = (0..n).collect();
        let plan = build_plan(&g, &targets, 1, &NeighborMode::Sampled(vec![3]), PoolMode::Batch, None, &mut rng(seed)).unwrap();
        let (tape, out) = run_forward(&params, &g, &plan, m);
        for row in tape.value(out.neigh[0]).rows() {
            prop_assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-7);
        }
        let a = tape.value(out.attention[0].weights[0]);
        for r in out.windows[0].segments.iter() {
            let total: f64 = r.clone().map(|i| a[[i, 0]]).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(r.clone().all(|i| a[[i, 0]] > 0.0));
        }
        // Gains are 1 and biases 0 at init, so rows are the raw normalization.
        for row in tape.value(out.topm[0]).rows() {
            prop_assert!(row.mean().unwrap().abs() < 1e-6);
        }
    }
}
