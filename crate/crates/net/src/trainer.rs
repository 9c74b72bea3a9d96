//! Hard-negative triplet selection and the outer training loop.
//!
//! A selection draws up to five candidates per identity into `S`, pairs every
//! training sample (anchor) with each candidate of its own identity
//! (positives, the anchor itself included when it was drawn) and picks one
//! negative from the other identities' candidates: uniformly among those
//! violating the margin, else uniformly among the ten nearest. The plan is
//! trained for up to ten epochs; the learning rate halves at every new
//! selection and training stops once validation accuracy stops improving.

use std::collections::BTreeMap;

use log::{info, warn};
use playstyle_core::heatmap::HeatmapPair;
use playstyle_core::seed::{derive_seed, substream};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::model::{sq_dist, triplet_loss, triplet_term, Inputs, Model, Triplet};
use crate::{NetConfig, NetError};

/// Rows used to re-estimate batch-norm statistics after each epoch. The
/// running averages lag weights that move quickly under a large step size.
const CALIBRATION_ROWS: usize = 2048;
const CALIBRATION_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub learning_rate: f64,
    /// Factor applied to the learning rate at every re-selection.
    pub lr_decay: f64,
    /// Triplets per mini-batch.
    pub batch_size: usize,
    pub candidates_per_identity: usize,
    /// Fallback pool when no negative violates the margin.
    pub nearest_negatives: usize,
    pub max_epochs_per_selection: usize,
    pub max_selections: usize,
    /// Epochs without validation-loss improvement before re-selecting.
    pub loss_patience: usize,
    /// Selections without validation-accuracy improvement before stopping.
    pub accuracy_patience: usize,
    pub min_improvement: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            learning_rate: 0.05,
            lr_decay: 0.5,
            batch_size: 1000,
            candidates_per_identity: 5,
            nearest_negatives: 10,
            max_epochs_per_selection: 10,
            max_selections: 12,
            loss_patience: 1,
            accuracy_patience: 1,
            min_improvement: 1e-4,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        self.net.validate()?;
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.candidates_per_identity < 2 {
            return bad("candidates_per_identity must be at least 2");
        }
        if self.batch_size < self.candidates_per_identity {
            return bad("batch_size must hold the triplets of one anchor");
        }
        if self.nearest_negatives == 0 || self.max_epochs_per_selection == 0 || self.max_selections == 0 {
            return bad("nearest_negatives, max_epochs_per_selection and max_selections must be positive");
        }
        if !(self.min_improvement >= 0.0) {
            return bad("min_improvement must be non-negative");
        }
        Ok(())
    }
}

/// Heatmap pairs with integer identity labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// Identity name per label.
    pub identities: Vec<String>,
    pub labels: Vec<usize>,
    pub inputs: Inputs<f32>,
}

impl Dataset {
    /// Labels follow the sorted entity ids.
    pub fn from_pairs(pairs: &[HeatmapPair]) -> Self {
        let ids: BTreeMap<&str, usize> = pairs.iter().map(|p| (p.entity_id.as_str(), 0)).collect();
        let identities: Vec<String> = ids.keys().map(|s| s.to_string()).collect();
        let index: BTreeMap<&str, usize> = identities.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut ds = Dataset {
            identities: identities.clone(),
            ..Default::default()
        };
        for p in pairs {
            ds.labels.push(index[p.entity_id.as_str()]);
            ds.inputs.push(&p.location.normalized(), &p.direction.normalized());
        }
        ds
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.identities.len()];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l].push(i);
        }
        m
    }
}

/// Up to `per_identity` sample indices per identity, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub by_identity: Vec<Vec<usize>>,
}

impl CandidateSet {
    pub fn draw<R: Rng>(labels: &[usize], n_identities: usize, per_identity: usize, rng: &mut R) -> Self {
        let mut members = vec![Vec::new(); n_identities];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        let by_identity = members
            .into_iter()
            .map(|m| {
                if m.len() <= per_identity {
                    return m;
                }
                let mut pick: Vec<usize> = index::sample(rng, m.len(), per_identity).into_iter().map(|j| m[j]).collect();
                pick.sort_unstable();
                pick
            })
            .collect();
        Self { by_identity }
    }

    pub fn len(&self) -> usize {
        self.by_identity.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletPlan {
    pub selection: usize,
    pub candidates: CandidateSet,
    /// Sample indices `[anchor, positive, negative]`, grouped by anchor.
    pub triplets: Vec<Triplet>,
    /// Anchors with at least one positive.
    pub anchors: usize,
    /// Identities with a single sample, contributing no triplets.
    pub skipped_identities: usize,
    /// Triplets whose negative violated the margin.
    pub hard: usize,
}

fn row(emb: &[f32], dim: usize, i: usize) -> &[f32] {
    &emb[i * dim..(i + 1) * dim]
}

/// Margin inequality `‖a−p‖² + α < ‖a−n‖²`.
fn satisfies(dp: f32, dn: f32, alpha: f32) -> bool {
    dp + alpha < dn
}

/// Builds the plan for one selection from current (inference-mode)
/// embeddings `emb` (`len × dim`).
pub fn select_triplets<R: Rng>(
    emb: &[f32],
    dim: usize,
    labels: &[usize],
    candidates: CandidateSet,
    alpha: f64,
    nearest: usize,
    selection: usize,
    rng: &mut R,
) -> TripletPlan {
    let alpha = alpha as f32;
    let mut triplets = Vec::new();
    let (mut anchors, mut hard) = (0, 0);
    let counts = {
        let mut c = vec![0usize; candidates.by_identity.len()];
        for &l in labels {
            c[l] += 1;
        }
        c
    };
    let skipped_identities = counts.iter().filter(|&&c| c == 1).count();
    if skipped_identities > 0 {
        warn!("{skipped_identities} identities have a single pair and contribute no triplets");
    }
    for (a, &la) in labels.iter().enumerate() {
        if counts[la] < 2 {
            continue;
        }
        let ea = row(emb, dim, a);
        let negatives: Vec<(f32, usize)> = candidates
            .by_identity
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != la)
            .flat_map(|(_, m)| m.iter().map(|&n| (sq_dist(ea, row(emb, dim, n)), n)))
            .collect();
        if negatives.is_empty() {
            continue;
        }
        let mut nearest_pool: Option<Vec<usize>> = None;
        anchors += 1;
        for &p in &candidates.by_identity[la] {
            let dp = sq_dist(ea, row(emb, dim, p));
            let violators: Vec<usize> = negatives.iter().filter(|(dn, _)| !satisfies(dp, *dn, alpha)).map(|&(_, n)| n).collect();
            let n = if violators.is_empty() {
                let pool = nearest_pool.get_or_insert_with(|| {
                    let mut s = negatives.clone();
                    s.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                    s.into_iter().take(nearest).map(|(_, n)| n).collect()
                });
                pool[rng.random_range(0..pool.len())]
            } else {
                hard += 1;
                violators[rng.random_range(0..violators.len())]
            };
            triplets.push([a, p, n]);
        }
    }
    TripletPlan {
        selection,
        candidates,
        triplets,
        anchors,
        skipped_identities,
        hard,
    }
}

/// Fraction of positive pairs `(a, p)`, `p` a candidate of `a`'s identity,
/// for which the margin inequality holds against every other identity's
/// candidate. `None` when there are no positive pairs.
pub fn validation_accuracy(emb: &[f32], dim: usize, labels: &[usize], candidates: &CandidateSet, alpha: f64) -> Option<f64> {
    let alpha = alpha as f32;
    let (mut pairs, mut good) = (0usize, 0usize);
    let counts = {
        let mut c = vec![0usize; candidates.by_identity.len()];
        for &l in labels {
            c[l] += 1;
        }
        c
    };
    for (a, &la) in labels.iter().enumerate() {
        if counts[la] < 2 {
            continue;
        }
        let ea = row(emb, dim, a);
        let min_neg = candidates
            .by_identity
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != la)
            .flat_map(|(_, m)| m.iter().map(|&n| sq_dist(ea, row(emb, dim, n))))
            .fold(f32::INFINITY, f32::min);
        for &p in &candidates.by_identity[la] {
            pairs += 1;
            if satisfies(sq_dist(ea, row(emb, dim, p)), min_neg, alpha) {
                good += 1;
            }
        }
    }
    (pairs > 0).then(|| good as f64 / pairs as f64)
}

fn mean_plan_loss(emb: &[f32], dim: usize, plan: &TripletPlan, alpha: f64) -> Option<f64> {
    if plan.triplets.is_empty() {
        return None;
    }
    let a = alpha as f32;
    let total: f64 = plan
        .triplets
        .iter()
        .map(|&[x, p, n]| f64::from(triplet_term(row(emb, dim, x), row(emb, dim, p), row(emb, dim, n), a)))
        .sum();
    Some(total / plan.triplets.len() as f64)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub selection: usize,
    /// Mean per-triplet training loss of the epoch.
    pub loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub lr: f64,
    pub triplets: usize,
    pub hard_triplets: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Index into `records` of the returned checkpoint.
    pub best: Option<usize>,
    pub skipped_steps: u64,
    pub diverged: bool,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub log: TrainLog,
}

/// Mini-batch of whole anchors: triplets remapped to positions in the
/// de-duplicated sample list.
/// Evenly strided subset of at most `cap` training rows.
fn calibration_inputs(ds: &Dataset, cap: usize) -> Inputs<f32> {
    let step = ds.len().div_ceil(cap.max(1)).max(1);
    let g = crate::branch::INPUT_SHAPE.len();
    let mut x = Inputs::default();
    for i in (0..ds.len()).step_by(step) {
        x.loc.extend_from_slice(&ds.inputs.loc[i * g..(i + 1) * g]);
        x.dir.extend_from_slice(&ds.inputs.dir[i * g..(i + 1) * g]);
        x.n += 1;
    }
    x
}

fn batch_inputs(ds: &Dataset, triplets: &[Triplet]) -> (Inputs<f32>, Vec<Triplet>) {
    let mut ids: Vec<usize> = triplets.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let pos: BTreeMap<usize, usize> = ids.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let g = crate::branch::INPUT_SHAPE.len();
    let mut x = Inputs::default();
    for &i in &ids {
        x.loc.extend_from_slice(&ds.inputs.loc[i * g..(i + 1) * g]);
        x.dir.extend_from_slice(&ds.inputs.dir[i * g..(i + 1) * g]);
    }
    x.n = ids.len();
    let remapped = triplets.iter().map(|t| t.map(|i| pos[&i])).collect();
    (x, remapped)
}

/// Score used to pick the best checkpoint: validation accuracy when
/// defined, else the negated training loss.
fn score(r: &TrainRecord) -> f64 {
    r.val_accuracy.unwrap_or(-r.loss)
}

pub fn train(train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    let alpha = cfg.net.alpha;
    let mut model = Model::<f32>::new(cfg.net.clone(), &mut substream(seed, &["train", "init"]));
    let dim = model.embed_dim();
    let mut opt = Adam::new(&model, cfg.adam);
    let mut log = TrainLog::default();
    if train_set.members().iter().all(|m| m.len() < 2) {
        return Err(NetError::NoPositives);
    }
    let val_cands = CandidateSet::draw(
        &val_set.labels,
        val_set.identities.len(),
        cfg.candidates_per_identity,
        &mut substream(seed, &["train", "validation-candidates"]),
    );
    let per_anchor = cfg.candidates_per_identity;
    let anchors_per_batch = (cfg.batch_size / per_anchor).max(1);
    let calibration = calibration_inputs(train_set, CALIBRATION_ROWS);
    let mut best_model = model.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut lr = cfg.learning_rate;
    let mut epoch = 0;
    let mut step = 0u64;
    let mut stale_selections = 0;
    'outer: for sel in 0..cfg.max_selections {
        if sel > 0 {
            lr *= cfg.lr_decay;
        }
        let sel_s = sel.to_string();
        let emb = model.embed(&train_set.inputs);
        let cands = CandidateSet::draw(
            &train_set.labels,
            train_set.identities.len(),
            cfg.candidates_per_identity,
            &mut substream(seed, &["train", "candidates", &sel_s]),
        );
        let plan = select_triplets(
            &emb,
            dim,
            &train_set.labels,
            cands,
            alpha,
            cfg.nearest_negatives,
            sel,
            &mut substream(seed, &["train", "select", &sel_s]),
        );
        let val_emb = model.embed(&val_set.inputs);
        let val_plan = select_triplets(
            &val_emb,
            dim,
            &val_set.labels,
            val_cands.clone(),
            alpha,
            cfg.nearest_negatives,
            sel,
            &mut substream(seed, &["train", "validation-select", &sel_s]),
        );
        info!(
            "selection {sel}: {} triplets from {} anchors, {} hard; lr {lr}",
            plan.triplets.len(),
            plan.anchors,
            plan.hard
        );
        // triplets of one anchor are contiguous, so chunk by anchor
        let mut groups: Vec<&[Triplet]> = plan.triplets.chunk_by(|x, y| x[0] == y[0]).collect();
        let best_before = best_score;
        let mut best_val_loss = f64::INFINITY;
        let mut stale_epochs = 0;
        for _ in 0..cfg.max_epochs_per_selection {
            groups.shuffle(&mut substream(seed, &["train", "shuffle", &sel_s, &epoch.to_string()]));
            let (mut total, mut count) = (0.0f64, 0usize);
            for batch in groups.chunks(anchors_per_batch) {
                let triplets: Vec<Triplet> = batch.iter().flat_map(|g| g.iter().copied()).collect();
                let (x, local) = batch_inputs(train_set, &triplets);
                let (emb_b, cache) = model.forward_train(&x, derive_seed(seed, &["train", "dropout", &step.to_string()]));
                let (loss, d_emb, _) = triplet_loss(&emb_b, dim, &local, alpha as f32);
                step += 1;
                if !loss.is_finite() {
                    warn!("non-finite loss at epoch {epoch}; returning the best finite checkpoint");
                    log.diverged = true;
                    break 'outer;
                }
                total += f64::from(loss);
                count += local.len();
                let grads = model.backward(&cache, &d_emb);
                opt.step(&mut model, &grads, lr);
                // cumulative average until it is shorter than the EMA window,
                // so the unit-variance initial buffers wash out after one batch
                model.apply_stats_with(&cache, cfg.net.bn_momentum.max(1.0 / step as f64));
            }
            model.recalibrate(&calibration, CALIBRATION_CHUNK);
            let val_emb = model.embed(&val_set.inputs);
            let rec = TrainRecord {
                epoch,
                selection: sel,
                loss: total / count.max(1) as f64,
                val_loss: mean_plan_loss(&val_emb, dim, &val_plan, alpha),
                val_accuracy: validation_accuracy(&val_emb, dim, &val_set.labels, &val_cands, alpha),
                lr,
                triplets: plan.triplets.len(),
                hard_triplets: plan.hard,
            };
            info!(
                "epoch {epoch} (selection {sel}): loss {:.5} val_loss {:?} val_accuracy {:?}",
                rec.loss, rec.val_loss, rec.val_accuracy
            );
            let s = score(&rec);
            let vl = rec.val_loss.unwrap_or(rec.loss);
            log.records.push(rec);
            epoch += 1;
            if s > best_score {
                best_score = s;
                best_model = model.clone();
                log.best = Some(log.records.len() - 1);
            }
            if vl < best_val_loss - cfg.min_improvement {
                best_val_loss = vl;
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
                if stale_epochs >= cfg.loss_patience {
                    break;
                }
            }
        }
        if best_score > best_before + cfg.min_improvement {
            stale_selections = 0;
        } else {
            stale_selections += 1;
            if stale_selections >= cfg.accuracy_patience {
                break;
            }
        }
    }
    log.skipped_steps = opt.skipped();
    Ok(TrainOutcome { model: best_model, log })
}

/// Inference-mode embeddings of every pair, as `f64` rows.
pub fn embed_pairs(model: &Model<f32>, pairs: &[HeatmapPair]) -> Vec<Vec<f64>> {
    let mut x = Inputs::default();
    for p in pairs {
        x.push(&p.location.normalized(), &p.direction.normalized());
    }
    let dim = model.embed_dim();
    model.embed(&x).chunks(dim).map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect()
}

/// Seeded helper for tests and examples: a fresh model.
pub fn init_model(cfg: &NetConfig, seed: u64) -> Model<f32> {
    let mut rng: ChaCha8Rng = substream(seed, &["train", "init"]);
    Model::new(cfg.clone(), &mut rng)
}
