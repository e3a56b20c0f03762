#![allow(dead_code)]

//! Toy fixtures and a loop-based reference implementation of the forward
//! pass, written directly from the model equations without the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhia_core::diff::ParamId;
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::instance::{Instance, Span};
use rhia_core::model::{Model, ModelConfig};

pub const TOY_RELATIONS: [&str; 6] = [
    "/a/b/c",
    "/a/b/d",
    "/a/e/f",
    "/g/h/i",
    "/g/h/j",
    "/k/l",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seven relations (NA included), depth 3.
pub fn toy_hierarchy() -> RelationHierarchy {
    RelationHierarchy::new(TOY_RELATIONS, 3).unwrap()
}

/// d_w=4, d_p=2, d_x=6, d_c=5, n=12.
pub fn toy_config(h: &RelationHierarchy) -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        word_dim: 4,
        pos_dim: 2,
        max_len: 12,
        embed_dim: 6,
        filters: 5,
        ..ModelConfig::new(20, h)
    }
}

pub fn toy_model(seed: u64) -> (Model<f64>, RelationHierarchy) {
    let h = toy_hierarchy();
    let m = Model::new(toy_config(&h), &mut rng(seed)).unwrap();
    (m, h)
}

/// Random sentence of length `3..=max_len` with two non-overlapping spans.
pub fn random_instance<R: Rng>(rng: &mut R, vocab: usize, max_len: usize) -> Instance {
    let len = rng.random_range(3..=max_len);
    let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab - 2)).collect();
    loop {
        let a_len = rng.random_range(1..=2usize.min(len - 1));
        let a = rng.random_range(0..=len - a_len);
        let b_len = rng.random_range(1..=2usize.min(len - 1));
        let b = rng.random_range(0..=len - b_len);
        let (ha, ta) = (Span::new(a, a + a_len), Span::new(b, b + b_len));
        if ha.overlaps(&ta) {
            continue;
        }
        let hw = rng.random_range(0..vocab - 2);
        let tw = rng.random_range(0..vocab - 2);
        return Instance::new(tokens.clone(), ha, ta, hw, tw, max_len, vocab - 1).unwrap();
    }
}

pub fn random_bags<R: Rng>(rng: &mut R, count: usize, max_size: usize, vocab: usize, max_len: usize) -> Vec<Vec<Instance>> {
    (0..count)
        .map(|_| {
            let m = rng.random_range(1..=max_size);
            (0..m).map(|_| random_instance(rng, vocab, max_len)).collect()
        })
        .collect()
}

pub fn views(bags: &[Vec<Instance>]) -> Vec<&[Instance]> {
    bags.iter().map(|b| b.as_slice()).collect()
}

// ---- reference math -------------------------------------------------------

pub struct Mat<'a> {
    pub rows: usize,
    pub cols: usize,
    pub v: &'a [f64],
}

impl Mat<'_> {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.v[r * self.cols + c]
    }
}

pub fn mat(m: &Model<f64>, id: ParamId) -> Mat<'_> {
    let t = m.params().get(id);
    let (rows, cols) = t.rows_cols();
    Mat {
        rows,
        cols,
        v: t.values(),
    }
}

/// `xᵀW + b`.
pub fn affine(x: &[f64], w: &Mat, b: Option<&[f64]>) -> Vec<f64> {
    assert_eq!(x.len(), w.rows);
    (0..w.cols)
        .map(|j| {
            let mut s = b.map_or(0.0, |b| b[j]);
            for i in 0..w.rows {
                s += x[i] * w.at(i, j);
            }
            s
        })
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn mix(g: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    g.iter().zip(a).zip(b).map(|((g, a), b)| g * a + (1.0 - g) * b).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + eps).sqrt() * gain[i] + shift[i])
        .collect()
}

fn row(m: &Mat, r: usize) -> Vec<f64> {
    m.v[r * m.cols..(r + 1) * m.cols].to_vec()
}

/// Entity-aware embedding, one vector per real token.
pub fn oracle_embed(m: &Model<f64>, inst: &Instance) -> Vec<Vec<f64>> {
    let ids = m.ids();
    let cfg = m.config();
    let word = mat(m, ids.word);
    let ph = mat(m, ids.pos_head);
    let pt = mat(m, ids.pos_tail);
    let n = cfg.max_len as isize;
    let vh = row(&word, inst.head_word());
    let vt = row(&word, inst.tail_word());
    (0..inst.len())
        .map(|i| {
            let v = row(&word, inst.tokens()[i]);
            // distance to nearest entity token
            let dist = |s: Span| -> isize {
                if i < s.start {
                    i as isize - s.start as isize
                } else if i >= s.end {
                    i as isize - (s.end as isize - 1)
                } else {
                    0
                }
            };
            let dh = (dist(inst.head()).clamp(-n, n) + n) as usize;
            let dt = (dist(inst.tail()).clamp(-n, n) + n) as usize;
            let xe = cat(&[&v, &vh, &vt]);
            let xp = cat(&[&v, &row(&ph, dh), &row(&pt, dt)]);
            let a: Vec<f64> = affine(&xe, &mat(m, ids.entity_gate_w), Some(mat(m, ids.entity_gate_b).v))
                .iter()
                .map(|z| sigmoid(cfg.lambda * z))
                .collect();
            let p: Vec<f64> = affine(&xp, &mat(m, ids.position_w), Some(mat(m, ids.position_b).v))
                .iter()
                .map(|z| z.tanh())
                .collect();
            let e = match ids.entity_proj {
                Some(pid) => affine(&xe, &mat(m, pid), None),
                None => xe,
            };
            mix(&a, &e, &p)
        })
        .collect()
}

/// Explicit convolution over windows, then brute-force segment maxima.
pub fn oracle_feature_maps(m: &Model<f64>, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cfg = m.config();
    let w = mat(m, m.ids().conv_w);
    let b = mat(m, m.ids().conv_b).v;
    let dx = cfg.embed_dim;
    let left = (cfg.window - 1) / 2;
    let len = x.len();
    (0..len)
        .map(|i| {
            (0..cfg.filters)
                .map(|f| {
                    let mut s = b[f];
                    for k in 0..cfg.window {
                        let src = i as isize + k as isize - left as isize;
                        if src < 0 || src >= len as isize {
                            continue;
                        }
                        for d in 0..dx {
                            s += x[src as usize][d] * w.at(k * dx + d, f);
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Segment maxima (1-based split positions `h < t` over `n` entries) of a
/// single feature sequence; empty segments give 0.
pub fn segment_max(f: &[f64], h: usize, t: usize) -> [f64; 3] {
    let seg = |a: usize, b: usize| -> f64 {
        if a > b {
            return 0.0;
        }
        (a..=b).map(|p| f[p - 1]).fold(f64::NEG_INFINITY, f64::max)
    };
    [seg(1, h), seg(h + 1, t), seg(t + 1, f.len())]
}

pub fn oracle_pcnn(m: &Model<f64>, inst: &Instance) -> Vec<f64> {
    let x = oracle_embed(m, inst);
    let f = oracle_feature_maps(m, &x);
    let (a, b) = inst.split_points();
    let c = m.config().filters;
    let mut u = vec![0.0; 3 * c];
    for j in 0..c {
        let seq: Vec<f64> = f.iter().map(|r| r[j]).collect();
        let mx = segment_max(&seq, a + 1, b + 1);
        for k in 0..3 {
            u[k * c + j] = mx[k].tanh();
        }
    }
    u
}

pub struct CellOracle {
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    pub alpha_hier: Vec<f64>,
    pub context_hier: Vec<f64>,
    pub beta1: Vec<f64>,
    pub context_mix: Vec<f64>,
    pub beta2: Vec<f64>,
    pub mixed: Vec<f64>,
    pub output: Vec<f64>,
    pub heuristic: Vec<f64>,
}

pub fn oracle_cell(m: &Model<f64>, u: &[f64], h: &[f64], level: usize) -> CellOracle {
    let ids = m.ids();
    let lp = &ids.levels[level];
    let r = mat(m, lp.relations);
    let attend = |q: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let scores: Vec<f64> = (0..r.cols).map(|j| (0..r.rows).map(|i| q[i] * r.at(i, j)).sum()).collect();
        let a = softmax(&scores);
        let c = (0..r.rows).map(|i| (0..r.cols).map(|j| r.at(i, j) * a[j]).sum()).collect();
        (a, c)
    };
    let (alpha, context) = attend(u);
    let (alpha_hier, context_hier) = attend(h);
    let g = |w: ParamId, b: ParamId, x: &[f64], y: &[f64]| -> Vec<f64> {
        affine(&cat(&[x, y]), &mat(m, w), Some(mat(m, b).v)).into_iter().map(sigmoid).collect()
    };
    let beta1 = g(ids.gate1_w, ids.gate1_b, u, h);
    let context_mix = mix(&beta1, &context, &context_hier);
    let beta2 = g(ids.gate2_w, ids.gate2_b, u, &context_mix);
    let mixed = mix(&beta2, u, &context_mix);
    let hidden: Vec<f64> = affine(&mixed, &mat(m, lp.mlp_hidden_w), Some(mat(m, lp.mlp_hidden_b).v))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let mlp = affine(&hidden, &mat(m, lp.mlp_out_w), Some(mat(m, lp.mlp_out_b).v));
    let res: Vec<f64> = u.iter().zip(&mlp).map(|(a, b)| a + b).collect();
    let output = layer_norm(&res, mat(m, lp.norm_gain).v, mat(m, lp.norm_shift).v, m.config().layer_norm_eps);
    let heuristic = if m.config().freeze_heuristic {
        h.to_vec()
    } else {
        let beta3 = g(ids.gate3_w, ids.gate3_b, h, &context_mix);
        mix(&beta3, h, &context_mix)
    };
    CellOracle {
        alpha,
        context,
        alpha_hier,
        context_hier,
        beta1,
        context_mix,
        beta2,
        mixed,
        output,
        heuristic,
    }
}

/// `(u^r, h_k)` for one sentence vector.
pub fn oracle_augment(m: &Model<f64>, u: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let mut h = mat(m, m.ids().h0).v.to_vec();
    let mut ur = Vec::new();
    let mut alphas = Vec::new();
    for level in 0..m.config().depth() {
        let c = oracle_cell(m, u, &h, level);
        ur.extend_from_slice(&c.output);
        alphas.push(c.alpha);
        h = c.heuristic;
    }
    (ur, h, alphas)
}

pub struct BagOracle {
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    pub order_probs: Vec<Vec<f64>>,
    pub alphas: Vec<Vec<Vec<f64>>>,
    pub bag_repr: Vec<f64>,
}

pub fn oracle_bag(m: &Model<f64>, bag: &[Instance]) -> BagOracle {
    let ids = m.ids();
    let mut scores = Vec::new();
    let mut urs = Vec::new();
    let mut alphas = Vec::new();
    let mut order_probs = Vec::new();
    for inst in bag {
        let u = oracle_pcnn(m, inst);
        let (ur, h, al) = oracle_augment(m, &u);
        let w = mat(m, ids.pool_w);
        scores.push(cat(&[&u, &h]).iter().enumerate().map(|(i, v)| v * w.at(i, 0)).sum::<f64>());
        order_probs.push(softmax(&affine(&ur, &mat(m, ids.order_w), Some(mat(m, ids.order_b).v))));
        urs.push(ur);
        alphas.push(al);
    }
    let weights = softmax(&scores);
    let dim = urs[0].len();
    let bag_repr: Vec<f64> = (0..dim).map(|d| urs.iter().zip(&weights).map(|(u, w)| u[d] * w).sum()).collect();
    let probs = softmax(&affine(&bag_repr, &mat(m, ids.classifier_w), Some(mat(m, ids.classifier_b).v)));
    BagOracle {
        probs,
        weights,
        order_probs,
        alphas,
        bag_repr,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
