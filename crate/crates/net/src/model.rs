//! Two-branch embedding model and the triplet objective.

use log::warn;
use playstyle_core::seed::substream;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::branch::{kink_signature, Branch, BranchCache, ShapeTrace, INPUT_SHAPE};
use crate::layers::BnStats;
use crate::real::Real;
use crate::NetConfig;

/// Rows processed per call in inference, bounding activation memory.
const INFER_CHUNK: usize = 256;

/// Location and direction branches. The same parameters embed anchor,
/// positive and negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: NetConfig,
    pub loc: Branch<T>,
    pub dir: Branch<T>,
}

/// Batch of `n` heatmap pairs, each grid flattened row-major.
#[derive(Debug, Clone, Default)]
pub struct Inputs<T> {
    pub n: usize,
    pub loc: Vec<T>,
    pub dir: Vec<T>,
}

impl<T: Real> Inputs<T> {
    pub fn push(&mut self, loc: &[f32], dir: &[f32]) {
        assert_eq!(loc.len(), INPUT_SHAPE.len(), "location grid size");
        assert_eq!(dir.len(), INPUT_SHAPE.len(), "direction grid size");
        self.loc.extend(loc.iter().map(|&v| T::from_f32(v).expect("f32 converts")));
        self.dir.extend(dir.iter().map(|&v| T::from_f32(v).expect("f32 converts")));
        self.n += 1;
    }

    fn slice(&self, lo: usize, hi: usize) -> (&[T], &[T]) {
        let g = INPUT_SHAPE.len();
        (&self.loc[lo * g..hi * g], &self.dir[lo * g..hi * g])
    }
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    pub loc: BranchCache<T>,
    pub dir: BranchCache<T>,
    /// Concatenated branch outputs before normalization, `n × 2d`.
    raw: Vec<T>,
    emb: Vec<T>,
}

impl<T: Real> ModelCache<T> {
    pub fn trace(&self) -> (&ShapeTrace, &ShapeTrace) {
        (&self.loc.trace, &self.dir.trace)
    }

    pub fn kink_signature(&self) -> Vec<u8> {
        let mut s = kink_signature(&self.loc);
        s.extend(kink_signature(&self.dir));
        s
    }
}

impl<T: Real> Model<T> {
    pub fn new(config: NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let loc = Branch::init(&config, rng);
        let dir = Branch::init(&config, rng);
        Self { config, loc, dir }
    }

    pub fn zeros(config: NetConfig) -> Self {
        Self {
            loc: Branch::zeros(&config),
            dir: Branch::zeros(&config),
            config,
        }
    }

    pub fn embed_dim(&self) -> usize {
        2 * self.config.embed_dim
    }

    /// Training-mode embeddings (`n × 2d`, unit rows) with caches for
    /// [`Model::backward`]. Dropout masks are a function of `dropout_seed`.
    pub fn forward_train(&self, x: &Inputs<T>, dropout_seed: u64) -> (Vec<T>, ModelCache<T>) {
        let ((lo, lc), (dout, dc)) = rayon::join(
            || self.loc.forward_train(&x.loc, x.n, &self.config, &mut substream(dropout_seed, &["loc"])),
            || self.dir.forward_train(&x.dir, x.n, &self.config, &mut substream(dropout_seed, &["dir"])),
        );
        let raw = concat(&lo, &dout, x.n, self.config.embed_dim);
        let emb = normalize_rows(&raw, self.embed_dim());
        let cache = ModelCache { loc: lc, dir: dc, raw, emb: emb.clone() };
        (emb, cache)
    }

    /// Gradients of all trainable tensors for the embedding gradient
    /// `d_emb` (`n × 2d`).
    pub fn backward(&self, cache: &ModelCache<T>, d_emb: &[T]) -> Model<T> {
        let d = self.config.embed_dim;
        let n = d_emb.len() / (2 * d);
        let d_raw = normalize_backward(&cache.raw, &cache.emb, d_emb, 2 * d);
        let mut d_loc = Vec::with_capacity(n * d);
        let mut d_dir = Vec::with_capacity(n * d);
        for row in d_raw.chunks(2 * d) {
            d_loc.extend_from_slice(&row[..d]);
            d_dir.extend_from_slice(&row[d..]);
        }
        let (loc, dir) = rayon::join(
            || self.loc.backward(&cache.loc, &d_loc, &self.config),
            || self.dir.backward(&cache.dir, &d_dir, &self.config),
        );
        Model { config: self.config.clone(), loc, dir }
    }

    /// Folds the batch statistics of a training forward into the running
    /// averages.
    pub fn apply_stats(&mut self, cache: &ModelCache<T>) {
        self.apply_stats_with(cache, self.config.bn_momentum);
    }

    pub fn apply_stats_with(&mut self, cache: &ModelCache<T>, momentum: f64) {
        self.loc.apply_stats(&cache.loc.stats, momentum);
        self.dir.apply_stats(&cache.dir.stats, momentum);
    }

    /// Replaces the running batch-norm buffers with population statistics
    /// of `x` under the current weights, dropout off. `x` is forwarded in
    /// chunks of `chunk` rows (train-mode normalization within each chunk)
    /// and the chunk moments are pooled exactly.
    pub fn recalibrate(&mut self, x: &Inputs<T>, chunk: usize) {
        if x.n == 0 {
            return;
        }
        let mut probe = self.clone();
        probe.config.dropout = 0.0;
        let mut pooled: Option<(Vec<Pooled>, Vec<Pooled>)> = None;
        let mut lo = 0;
        while lo < x.n {
            let hi = (lo + chunk.max(2)).min(x.n);
            let (l, d) = x.slice(lo, hi);
            let part = Inputs { n: hi - lo, loc: l.to_vec(), dir: d.to_vec() };
            let (_, cache) = probe.forward_train(&part, 0);
            let acc = pooled.get_or_insert_with(|| (Pooled::layers(&cache.loc.stats), Pooled::layers(&cache.dir.stats)));
            for (p, s) in acc.0.iter_mut().zip(&cache.loc.stats).chain(acc.1.iter_mut().zip(&cache.dir.stats)) {
                p.add(s, hi - lo);
            }
            lo = hi;
        }
        let (l, d) = pooled.expect("at least one chunk");
        let finish = |ps: Vec<Pooled>| ps.iter().map(Pooled::stats::<T>).collect::<Vec<_>>();
        self.loc.apply_stats(&finish(l), 1.0);
        self.dir.apply_stats(&finish(d), 1.0);
    }

    /// Inference-mode embeddings, `n × 2d`. Each row depends only on its
    /// own input and the parameters.
    pub fn embed(&self, x: &Inputs<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(x.n * self.embed_dim());
        let mut lo = 0;
        while lo < x.n {
            let hi = (lo + INFER_CHUNK).min(x.n);
            let (l, d) = x.slice(lo, hi);
            let (lo_out, dir_out) = rayon::join(
                || self.loc.forward_infer(l, hi - lo, &self.config),
                || self.dir.forward_infer(d, hi - lo, &self.config),
            );
            let raw = concat(&lo_out, &dir_out, hi - lo, self.config.embed_dim);
            out.extend(normalize_rows(&raw, self.embed_dim()));
            lo = hi;
        }
        out
    }

    /// Trainable tensors, location branch first.
    pub fn params(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = self.loc.params().into_iter().map(|(n, t)| (format!("loc.{n}"), t)).collect();
        out.extend(self.dir.params().into_iter().map(|(n, t)| (format!("dir.{n}"), t)));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = self.loc.params_mut();
        out.extend(self.dir.params_mut());
        out
    }

    pub fn buffers(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = self.loc.buffers().into_iter().map(|(n, t)| (format!("loc.{n}"), t)).collect();
        out.extend(self.dir.buffers().into_iter().map(|(n, t)| (format!("dir.{n}"), t)));
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = self.loc.buffers_mut();
        out.extend(self.dir.buffers_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Per-channel first and second moments pooled over chunks, in `f64`.
struct Pooled {
    n: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Pooled {
    fn layers<T: Real>(stats: &[BnStats<T>]) -> Vec<Pooled> {
        stats
            .iter()
            .map(|s| Pooled { n: 0, sum: vec![0.0; s.mean.len()], sum_sq: vec![0.0; s.mean.len()] })
            .collect()
    }

    fn add<T: Real>(&mut self, s: &BnStats<T>, rows: usize) {
        // conv statistics cover rows × positions; positions are constant per
        // layer, so weighting by rows is exact
        let w = rows as f64;
        for c in 0..self.sum.len() {
            let m = s.mean[c].to_f64().unwrap_or(0.0);
            let v = s.var_unbiased[c].to_f64().unwrap_or(0.0);
            self.sum[c] += w * m;
            self.sum_sq[c] += w * (v + m * m);
        }
        self.n += rows;
    }

    fn stats<T: Real>(&self) -> BnStats<T> {
        let n = self.n as f64;
        let conv = |v: f64| T::from_f64(v).expect("f64 converts");
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let var = self.sum_sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0));
        BnStats { mean: mean.iter().map(|&m| conv(m)).collect(), var_unbiased: var.map(conv).collect() }
    }
}

fn concat<T: Real>(a: &[T], b: &[T], n: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * 2 * d);
    for i in 0..n {
        out.extend_from_slice(&a[i * d..(i + 1) * d]);
        out.extend_from_slice(&b[i * d..(i + 1) * d]);
    }
    out
}

const NORM_FLOOR: f64 = 1e-12;

/// Divides each row by its L2 norm. A zero row becomes the first basis
/// vector.
pub fn normalize_rows<T: Real>(raw: &[T], dim: usize) -> Vec<T> {
    let mut out = raw.to_vec();
    out.par_chunks_mut(dim).for_each(|row| {
        let norm = row.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            warn!("zero embedding before normalization, using the first basis vector");
            row.fill(T::zero());
            row[0] = T::one();
        } else {
            let inv = T::from_f64c(1.0 / norm);
            for v in row.iter_mut() {
                *v = *v * inv;
            }
        }
    });
    out
}

/// `d raw = (d e - e (e · d e)) / ‖raw‖`; zero for floored rows.
fn normalize_backward<T: Real>(raw: &[T], emb: &[T], d_emb: &[T], dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); raw.len()];
    for (((o, r), e), g) in out
        .chunks_mut(dim)
        .zip(raw.chunks(dim))
        .zip(emb.chunks(dim))
        .zip(d_emb.chunks(dim))
    {
        let norm = r.iter().map(|v| v.to_f64c().powi(2)).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            continue;
        }
        let dot: T = e.iter().zip(g).map(|(a, b)| *a * *b).sum();
        let inv = T::from_f64c(1.0 / norm);
        for ((ov, ev), gv) in o.iter_mut().zip(e).zip(g) {
            *ov = (*gv - *ev * dot) * inv;
        }
    }
    out
}

/// Indices of anchor, positive and negative into a batch of embeddings.
pub type Triplet = [usize; 3];

pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// `[‖a−p‖² − ‖a−n‖² + α]₊` of one triplet.
pub fn triplet_term<T: Real>(a: &[T], p: &[T], n: &[T], alpha: T) -> T {
    let v = sq_dist(a, p) - sq_dist(a, n) + alpha;
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Summed triplet loss over `triplets` and its gradient w.r.t. the
/// embeddings (`n × dim`). Returns `(loss, gradient, active count)`.
pub fn triplet_loss<T: Real>(emb: &[T], dim: usize, triplets: &[Triplet], alpha: T) -> (T, Vec<T>, usize) {
    let mut grad = vec![T::zero(); emb.len()];
    let mut loss = T::zero();
    let mut active = 0;
    let two = T::one() + T::one();
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    for &[a, p, n] in triplets {
        let term = triplet_term(row(a), row(p), row(n), alpha);
        if term <= T::zero() {
            continue;
        }
        loss = loss + term;
        active += 1;
        for k in 0..dim {
            let (ea, ep, en) = (emb[a * dim + k], emb[p * dim + k], emb[n * dim + k]);
            grad[a * dim + k] = grad[a * dim + k] + two * (en - ep);
            grad[p * dim + k] = grad[p * dim + k] - two * (ea - ep);
            grad[n * dim + k] = grad[n * dim + k] + two * (ea - en);
        }
    }
    (loss, grad, active)
}

/// Signs of every triplet's hinge argument, for kink detection.
pub fn hinge_signature<T: Real>(emb: &[T], dim: usize, triplets: &[Triplet], alpha: T) -> Vec<u8> {
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    triplets
        .iter()
        .map(|&[a, p, n]| u8::from(sq_dist(row(a), row(p)) - sq_dist(row(a), row(n)) + alpha > T::zero()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn triplet_loss_examples() {
        let a = unit(&[1.0, 0.0]);
        let b = unit(&[0.0, 1.0]);
        assert_eq!(sq_dist(&a, &b), 2.0);
        assert_eq!(triplet_term(&a, &a, &b, 0.1), 0.0);
        assert!((triplet_term(&a, &b, &a, 0.1) - 2.1).abs() < 1e-12);
        assert!((triplet_term(&a, &a, &a, 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn inactive_triplets_have_zero_gradient() {
        let emb = [1.0, 0.0, 1.0, 0.0, -1.0, 0.0];
        let (loss, grad, active) = triplet_loss(&emb, 2, &[[0, 1, 2]], 0.1);
        assert_eq!((loss, active), (0.0, 0));
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn normalization_is_scale_invariant_and_floors_zero() {
        let raw = [3.0, 4.0, 0.0, 0.0];
        let e = normalize_rows(&raw, 2);
        for (got, want) in e.iter().zip([0.6f64, 0.8, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let scaled: Vec<f64> = raw.iter().map(|v| v * 7.5).collect();
        for (got, want) in normalize_rows(&scaled, 2).iter().zip(&e) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |r: &[f64]| normalize_rows(r, 6).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let e = normalize_rows(&raw, 6);
        let an = normalize_backward(&raw, &e, &g, 6);
        for i in 0..6 {
            let mut p = raw.clone();
            let mut m = raw.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let num = (f(&p) - f(&m)) / 2e-6;
            assert!((num - an[i]).abs() < 1e-8);
        }
    }
}
