//! Central finite-difference check of the analytic triplet-loss gradient.

use crate::model::{hinge_signature, sq_dist, triplet_loss, Inputs, Model, Triplet};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Elements whose perturbation crossed a ReLU, pooling or hinge kink.
    pub skipped: usize,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)` over the
    /// checked elements.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }
}

/// Smallest distance of any ReLU input or triplet hinge argument from its
/// kink, for choosing inputs where finite differences are meaningful.
pub fn kink_margin(model: &Model<f64>, x: &Inputs<f64>, triplets: &[Triplet], dropout_seed: u64) -> f64 {
    let (emb, cache) = model.forward_train(x, dropout_seed);
    let dim = model.embed_dim();
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    let hinge = triplets
        .iter()
        .map(|&[a, p, n]| (sq_dist(row(a), row(p)) - sq_dist(row(a), row(n)) + model.config.alpha).abs())
        .fold(f64::INFINITY, f64::min);
    model.loc.relu_margin(&cache.loc).min(model.dir.relu_margin(&cache.dir)).min(hinge)
}

fn loss_and_signature(model: &Model<f64>, x: &Inputs<f64>, triplets: &[Triplet], seed: u64) -> (f64, Vec<u8>) {
    let (emb, cache) = model.forward_train(x, seed);
    let dim = model.embed_dim();
    let alpha = model.config.alpha;
    let (loss, _, _) = triplet_loss(&emb, dim, triplets, alpha);
    let mut sig = cache.kink_signature();
    sig.extend(hinge_signature(&emb, dim, triplets, alpha));
    (loss, sig)
}

/// Compares the analytic gradient of the summed batch triplet loss with
/// central differences of step `h` for every element of every trainable
/// tensor. Dropout masks are held fixed by reusing `dropout_seed`.
pub fn check_gradients(model: &Model<f64>, x: &Inputs<f64>, triplets: &[Triplet], h: f64, dropout_seed: u64) -> GradCheckReport {
    let (emb, cache) = model.forward_train(x, dropout_seed);
    let (_, d_emb, _) = triplet_loss(&emb, model.embed_dim(), triplets, model.config.alpha);
    let grads = model.backward(&cache, &d_emb);
    let (_, base_sig) = loss_and_signature(model, x, triplets, dropout_seed);
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.params().into_iter().map(|(_, t)| t.to_vec()).collect();
    let mut tensors = Vec::with_capacity(names.len());
    let mut probe = model.clone();
    for (ti, name) in names.into_iter().enumerate() {
        let len = analytic[ti].len();
        let (mut diff, mut an, mut nu) = (0.0, 0.0, 0.0);
        let (mut checked, mut skipped) = (0, 0);
        for i in 0..len {
            let orig = probe.params_mut()[ti][i];
            probe.params_mut()[ti][i] = orig + h;
            let (lp, sp) = loss_and_signature(&probe, x, triplets, dropout_seed);
            probe.params_mut()[ti][i] = orig - h;
            let (lm, sm) = loss_and_signature(&probe, x, triplets, dropout_seed);
            probe.params_mut()[ti][i] = orig;
            if sp != base_sig || sm != base_sig {
                skipped += 1;
                continue;
            }
            let num = (lp - lm) / (2.0 * h);
            let a = analytic[ti][i];
            diff += (a - num).powi(2);
            an += a * a;
            nu += num * num;
            checked += 1;
        }
        let (an, nu) = (an.sqrt(), nu.sqrt());
        tensors.push(TensorCheck {
            name,
            checked,
            skipped,
            rel_error: diff.sqrt() / an.max(nu).max(1e-6),
            analytic_norm: an,
        });
    }
    GradCheckReport { tensors }
}
