use std::borrow::Cow;
use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;

use super::params::{Bound, VariantKind};
use super::plan::{LayerPlan, Plan, Windows};
use crate::autodiff::{ConstMatrix, Segments, Tape, Var};
use crate::topm::{build_index, AuxiliaryVector};
use crate::{Error, Result};

/// Rows fed into a layer: raw features stay constant (and possibly
/// sparse), later layers are tape values.
#[derive(Debug, Clone)]
pub enum Input {
    Const(ConstMatrix),
    Var(Var),
}

impl Input {
    pub fn nrows(&self, tape: &Tape) -> usize {
        match self {
            Input::Const(c) => c.nrows(),
            Input::Var(v) => tape.shape(*v).0,
        }
    }

    pub fn values<'a>(&'a self, tape: &'a Tape) -> Cow<'a, Array2<f64>> {
        match self {
            Input::Const(c) => Cow::Owned(c.to_dense()),
            Input::Var(v) => Cow::Borrowed(tape.value(*v)),
        }
    }

    /// `rows · w`, over the first `rows` rows or all of them.
    pub fn project(&self, tape: &mut Tape, rows: Option<usize>, w: Var) -> Result<Var> {
        let total = self.nrows(tape);
        let head = rows.filter(|&k| k < total);
        match self {
            Input::Const(c) => {
                let m = match head {
                    Some(k) => c.gather_rows(&(0..k).collect::<Vec<_>>())?,
                    None => c.clone(),
                };
                tape.const_matmul(m, w)
            }
            Input::Var(x) => {
                let x = match head {
                    Some(k) => tape.gather_rows(*x, &(0..k).collect::<Vec<_>>())?,
                    None => *x,
                };
                tape.matmul(x, w)
            }
        }
    }

    /// The first `rows` rows as a tape value.
    pub fn head(&self, tape: &mut Tape, rows: usize) -> Result<Var> {
        let idx: Vec<usize> = (0..rows).collect();
        match self {
            Input::Const(c) => tape.constant(c.gather_rows(&idx)?.to_dense()),
            Input::Var(x) => {
                if tape.shape(*x).0 == rows {
                    Ok(*x)
                } else {
                    tape.gather_rows(*x, &idx)
                }
            }
        }
    }
}

/// `h_v = normalize(sigmoid([x_v ‖ mean_{u∈N(v)} x_u] · W))` for the
/// layer's centers.
pub fn neigh_aggr(tape: &mut Tape, input: &Input, layer: &LayerPlan, w: Var) -> Result<Var> {
    let idx: Vec<usize> = (0..layer.centers).collect();
    let z = match input {
        Input::Const(c) => {
            let own = c.gather_rows(&idx)?;
            let mean = c.segment_mean(&layer.neigh_rows, &layer.neigh_segments)?;
            tape.const_matmul(own.hconcat(&mean)?, w)?
        }
        Input::Var(x) => {
            let own = tape.gather_rows(*x, &idx)?;
            let nb = tape.gather_rows(*x, &layer.neigh_rows)?;
            let mean = tape.segment_mean(nb, &layer.neigh_segments)?;
            let cat = tape.concat_cols(&[own, mean])?;
            tape.matmul(cat, w)?
        }
    };
    let s = tape.sigmoid(z)?;
    tape.l2_normalize_rows(s)
}

/// Attention projections of one layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `Head · W_o`, one row per center.
    pub output: Var,
    /// Per head, a column of weights aligned with the window rows.
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention from each center's query to the keys and
/// values of its window members.
pub fn scaled_attention(
    tape: &mut Tape,
    input: &Input,
    centers: usize,
    windows: &Windows,
    p: &AttentionParams,
) -> Result<AttentionOutput> {
    let segs = &windows.segments;
    if segs.len() != centers {
        return Err(Error::Shape(format!("{} windows for {centers} centers", segs.len())));
    }
    if segs.iter().any(|r| r.is_empty()) {
        return Err(Error::Shape("empty attention window".into()));
    }
    let q = input.project(tape, Some(centers), p.wq)?;
    let k = input.project(tape, None, p.wk)?;
    let v = input.project(tape, None, p.wv)?;
    let owner: Vec<usize> = segs.iter().enumerate().flat_map(|(c, r)| std::iter::repeat_n(c, r.len())).collect();
    let q = tape.gather_rows(q, &owner)?;
    let k = tape.gather_rows(k, &windows.rows)?;
    let v = tape.gather_rows(v, &windows.rows)?;
    let d = tape.shape(q).1;
    if p.heads == 0 || d % p.heads != 0 {
        return Err(Error::Config(format!("{} heads for width {d}", p.heads)));
    }
    let dh = d / p.heads;
    let mut heads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (qh, kh, vh) = if p.heads == 1 {
            (q, k, v)
        } else {
            let r = (h * dh, (h + 1) * dh);
            (
                tape.slice_cols(q, r.0, r.1)?,
                tape.slice_cols(k, r.0, r.1)?,
                tape.slice_cols(v, r.0, r.1)?,
            )
        };
        let qk = tape.mul(qh, kh)?;
        let s = tape.row_sum(qk)?;
        let s = tape.scale(s, 1.0 / (dh as f64).sqrt())?;
        let a = tape.segment_softmax(s, segs)?;
        let av = tape.mul_col(vh, a)?;
        heads.push(tape.segment_sum(av, segs)?);
        weights.push(a);
    }
    let head = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let output = tape.matmul(head, p.wo)?;
    Ok(AttentionOutput { output, weights })
}

/// Two-layer perceptron with a relu between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp {
    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(Mlp {
            w1: bound.var(&format!("{prefix}.w1"))?,
            b1: bound.var(&format!("{prefix}.b1"))?,
            w2: bound.var(&format!("{prefix}.w2"))?,
            b2: bound.var(&format!("{prefix}.b2"))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.matmul(x, self.w1)?;
        let z = tape.add_row(z, self.b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, self.w2)?;
        tape.add_row(z, self.b2)
    }
}

/// Attention block parameters: projections, residual alignment, the two
/// layer norms and the feed-forward network.
#[derive(Debug, Clone, Copy)]
pub struct TopmParams {
    pub attention: AttentionParams,
    /// Present when the input width differs from the hidden width.
    pub wres: Option<Var>,
    pub ln1: (Var, Var),
    pub ffn: Mlp,
    pub ln2: (Var, Var),
}

impl TopmParams {
    pub fn bind(bound: &Bound, layer: usize) -> Result<Self> {
        let p = |s: &str| format!("layer{layer}.attn.{s}");
        let wres = p("wres");
        Ok(TopmParams {
            attention: AttentionParams {
                wq: bound.var(&p("wq"))?,
                wk: bound.var(&p("wk"))?,
                wv: bound.var(&p("wv"))?,
                wo: bound.var(&p("wo"))?,
                heads: bound.params().config().heads,
            },
            wres: if bound.has(&wres) { Some(bound.var(&wres)?) } else { None },
            ln1: (bound.var(&p("ln1.gain"))?, bound.var(&p("ln1.bias"))?),
            ffn: Mlp {
                w1: bound.var(&p("ffn.w1"))?,
                b1: bound.var(&p("ffn.b1"))?,
                w2: bound.var(&p("ffn.w2"))?,
                b2: bound.var(&p("ffn.b2"))?,
            },
            ln2: (bound.var(&p("ln2.gain"))?, bound.var(&p("ln2.bias"))?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TopmOutput {
    pub output: Var,
    pub attention: AttentionOutput,
}

/// `h'' = LN(x_v + attn)`, `h' = LN(FFN(h'') + h'')`.
pub fn topm_aggr(
    tape: &mut Tape,
    input: &Input,
    centers: usize,
    windows: &Windows,
    p: &TopmParams,
) -> Result<TopmOutput> {
    let attention = scaled_attention(tape, input, centers, windows, &p.attention)?;
    let res = match p.wres {
        Some(w) => input.project(tape, Some(centers), w)?,
        None => input.head(tape, centers)?,
    };
    let x = tape.add(res, attention.output)?;
    let h2 = tape.layer_norm_rows(x, p.ln1.0, p.ln1.1)?;
    let h3 = p.ffn.apply(tape, h2)?;
    let y = tape.add(h3, h2)?;
    let output = tape.layer_norm_rows(y, p.ln2.0, p.ln2.1)?;
    Ok(TopmOutput { output, attention })
}

/// `g = MLP([h ‖ h'])`.
pub fn fuse(tape: &mut Tape, h: Var, h_prime: Var, mlp: &Mlp) -> Result<Var> {
    if tape.shape(h).0 != tape.shape(h_prime).0 {
        return Err(Error::Shape(format!(
            "fusing {} rows with {}",
            tape.shape(h).0,
            tape.shape(h_prime).0
        )));
    }
    let cat = tape.concat_cols(&[h, h_prime])?;
    mlp.apply(tape, cat)
}

/// Top-m windows for the first `centers` rows of `values`, whose rows
/// correspond to the global ids `ids`. Candidates are restricted to rows
/// of the same group; a center alone in its group attends to itself.
pub fn select_windows<R: Rng + ?Sized>(
    values: &Array2<f64>,
    ids: &[usize],
    centers: usize,
    groups: Option<&[usize]>,
    aux: &AuxiliaryVector,
    m: usize,
    rng: &mut R,
) -> Result<Windows> {
    if ids.len() != values.nrows() || centers > ids.len() {
        return Err(Error::Shape(format!(
            "{} ids, {} rows, {centers} centers",
            ids.len(),
            values.nrows()
        )));
    }
    let mut per_center: Vec<Vec<usize>> = vec![Vec::new(); centers];
    let mut assign = |members: &[usize], sub: ndarray::ArrayView2<f64>, rng: &mut R| -> Result<()> {
        let index = build_index(sub, aux, m, rng)?;
        for (local, &pos) in members.iter().enumerate() {
            if pos < centers {
                let w = index.window(local);
                per_center[pos] = if w.is_empty() {
                    vec![pos]
                } else {
                    w.iter().map(|&u| members[u]).collect()
                };
            }
        }
        Ok(())
    };
    match groups {
        None => {
            let members: Vec<usize> = (0..ids.len()).collect();
            assign(&members, values.view(), rng)?;
        }
        Some(g) => {
            let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (pos, &v) in ids.iter().enumerate() {
                by_group.entry(g[v]).or_default().push(pos);
            }
            for members in by_group.values() {
                if members[0] >= centers {
                    continue;
                }
                let sub = values.select(Axis(0), members);
                assign(members, sub.view(), rng)?;
            }
        }
    }
    let (segments, rows) = Segments::flatten(&per_center);
    Ok(Windows { segments, rows })
}

/// Everything a forward pass produced, rows aligned with the plan.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final embeddings, one row per target in `plan.targets()` order.
    pub embeddings: Var,
    /// Neighbor-aggregation output per layer.
    pub neigh: Vec<Var>,
    /// Attention-block output per layer.
    pub topm: Vec<Var>,
    /// Fused output per layer, where the variant fuses.
    pub fused: Vec<Option<Var>>,
    pub attention: Vec<AttentionOutput>,
    /// Windows used, for replay through [`Plan::with_frozen`].
    pub windows: Vec<Windows>,
}

/// Runs the model over `plan`. `features` holds the input rows of every
/// graph node.
pub fn forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    bound: &Bound,
    features: &ConstMatrix,
    plan: &Plan,
    m: usize,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let cfg = *bound.params().config();
    let depth = cfg.layers;
    if plan.depth() != depth {
        return Err(Error::Config(format!(
            "plan has {} layers, model {depth}",
            plan.depth()
        )));
    }
    if features.ncols() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "features have width {}, model expects {}",
            features.ncols(),
            cfg.input_dim
        )));
    }
    let x0 = Input::Const(features.gather_rows(&plan.nodes[0])?);
    let (mut xn, mut xt) = (x0.clone(), x0);
    let (mut neigh, mut topm, mut fused) = (Vec::new(), Vec::new(), Vec::new());
    let (mut attention, mut used) = (Vec::new(), Vec::new());
    let mut last = None;
    for i in 1..=depth {
        let lp = &plan.layers[i - 1];
        let h = neigh_aggr(tape, &xn, lp, bound.var(&format!("layer{i}.neigh.w"))?)?;
        let windows = match &plan.frozen {
            Some(f) => f[i - 1].clone(),
            None => select_windows(
                &xt.values(tape),
                &plan.nodes[i - 1],
                lp.centers,
                plan.groups.as_deref(),
                &bound.params().aux()[i - 1],
                m,
                rng,
            )?,
        };
        let t = topm_aggr(tape, &xt, lp.centers, &windows, &TopmParams::bind(bound, i)?)?;
        let h2 = t.output;
        let g = if cfg.variant.fuses_at(i, depth) {
            Some(fuse(tape, h, h2, &Mlp::bind(bound, &format!("layer{i}.fuse"))?)?)
        } else {
            None
        };
        if i < depth {
            match cfg.variant {
                VariantKind::Tangnn | VariantKind::Lc => {
                    let g = g.expect("fused every layer");
                    xn = Input::Var(g);
                    xt = Input::Var(g);
                }
                VariantKind::Flc => {
                    xn = Input::Var(h);
                    xt = Input::Var(h2);
                }
                VariantKind::Nai | VariantKind::Tai => {
                    let cat = tape.concat_cols(&[h, h2])?;
                    let both = tape.matmul(cat, bound.var(&format!("layer{i}.proj.w"))?)?;
                    if cfg.variant == VariantKind::Nai {
                        xn = Input::Var(both);
                        xt = Input::Var(h2);
                    } else {
                        xn = Input::Var(h);
                        xt = Input::Var(both);
                    }
                }
            }
        } else {
            last = g;
        }
        neigh.push(h);
        topm.push(h2);
        fused.push(g);
        attention.push(t.attention);
        used.push(windows);
    }
    let last = last.expect("last layer fuses");
    let embeddings = if cfg.variant == VariantKind::Lc {
        let targets: Vec<usize> = (0..plan.targets().len()).collect();
        let mut parts = Vec::with_capacity(depth);
        for g in fused.iter().flatten() {
            parts.push(if tape.shape(*g).0 == targets.len() {
                *g
            } else {
                tape.gather_rows(*g, &targets)?
            });
        }
        let cat = tape.concat_cols(&parts)?;
        Mlp::bind(bound, "lc")?.apply(tape, cat)?
    } else {
        last
    };
    Ok(ForwardOutput {
        embeddings,
        neigh,
        topm,
        fused,
        attention,
        windows: used,
    })
}
