//! Player identification: per-entity Gaussian galleries fitted on training
//! embeddings, probes built from test embeddings, ranked by similarity.

mod gaussian;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gaussian::{fit_gaussian, CovarianceKind, GaussianModel};

use crate::seed;

#[derive(Debug, Error)]
pub enum IdentifyError {
    #[error("need at least 2 vectors to fit a Gaussian, got {0}")]
    TooFewVectors(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("top-m with m = {m} out of {available} log-likelihoods")]
    InvalidTopM { m: usize, available: usize },
    #[error("unknown condition `{0}`")]
    UnknownCondition(String),
    #[error("no probe entity has a gallery model")]
    EmptyGallery,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean of the `m` largest log-densities of the test vectors under `model`.
pub fn atl_sim(model: &GaussianModel, test: &[Vec<f64>], m: usize) -> Result<f64, IdentifyError> {
    let lls: Vec<f64> = test.iter().map(|v| model.log_density(v)).collect();
    top_m_mean(lls, m)
}

fn top_m_mean(mut values: Vec<f64>, m: usize) -> Result<f64, IdentifyError> {
    if m == 0 || m > values.len() {
        return Err(IdentifyError::InvalidTopM { m, available: values.len() });
    }
    values.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(values[..m].iter().sum::<f64>() / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpAggregation {
    /// Mean distance from each test vector to the training centroid.
    #[default]
    Centroid,
    /// Mean over all (test, train) vector pairs.
    Pairwise,
}

fn lp_dist(a: &[f64], b: &[f64], p: u32) -> f64 {
    match p {
        1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        _ => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs().powi(p as i32))
            .sum::<f64>()
            .powf(1.0 / f64::from(p)),
    }
}

fn centroid(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, b) in c.iter_mut().zip(v) {
            *a += b;
        }
    }
    let n = vectors.len() as f64;
    c.iter_mut().for_each(|a| *a /= n);
    c
}

/// Negative mean L^p distance between α's training vectors and β's test
/// vectors under the chosen aggregation. Both sets must be non-empty.
pub fn lp_similarity(train: &[Vec<f64>], test: &[Vec<f64>], p: u32, agg: LpAggregation) -> f64 {
    match agg {
        LpAggregation::Centroid => {
            let c = centroid(train);
            -test.iter().map(|v| lp_dist(v, &c, p)).sum::<f64>() / test.len() as f64
        }
        LpAggregation::Pairwise => {
            let total: f64 = test.iter().flat_map(|v| train.iter().map(move |w| lp_dist(v, w, p))).sum();
            -total / (test.len() * train.len()) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopM {
    Fraction(f64),
    Count(usize),
}

impl TopM {
    /// `round(fraction·available)`, at least 1.
    pub fn resolve(&self, available: usize) -> usize {
        match *self {
            TopM::Fraction(f) => ((f * available as f64).round() as usize).clamp(1, available.max(1)),
            TopM::Count(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    Lp(u32),
    Likelihood(TopM),
}

/// A named evaluation condition such as `p10-ATL25`.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    /// Test phases per probe entity.
    pub phases: usize,
    pub scorer: Scorer,
}

impl FromStr for Condition {
    type Err = IdentifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IdentifyError::UnknownCondition(s.to_string());
        let (p, rest) = s.split_once('-').ok_or_else(bad)?;
        let phases: usize = p.strip_prefix('p').and_then(|n| n.parse().ok()).filter(|&n| n >= 3).ok_or_else(bad)?;
        let scorer = match rest {
            "L1" => Scorer::Lp(1),
            "L2" => Scorer::Lp(2),
            "AL" => Scorer::Likelihood(TopM::Fraction(1.0)),
            "ML" => Scorer::Likelihood(TopM::Count(1)),
            _ => {
                let pct: u32 = rest.strip_prefix("ATL").and_then(|n| n.parse().ok()).ok_or_else(bad)?;
                if pct == 0 || pct > 100 {
                    return Err(bad());
                }
                Scorer::Likelihood(TopM::Fraction(f64::from(pct) / 100.0))
            }
        };
        Ok(Condition {
            name: s.to_string(),
            phases,
            scorer,
        })
    }
}

pub const STANDARD_CONDITIONS: [&str; 9] = [
    "p10-L1", "p10-L2", "p10-AL", "p10-ATL75", "p10-ATL50", "p6-ATL25", "p8-ATL25", "p10-ATL25", "p10-ML",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyConfig {
    pub ridge: f64,
    pub covariance: CovarianceKind,
    pub lp_aggregation: LpAggregation,
    pub conditions: Vec<String>,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            ridge: 1e-3,
            covariance: CovarianceKind::Full,
            lp_aggregation: LpAggregation::Centroid,
            conditions: STANDARD_CONDITIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// An embedding of one (possibly accumulated) heatmap pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbedding {
    pub entity_id: String,
    pub sources: Vec<String>,
    pub vector: Vec<f64>,
}

pub const TOP_K: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub entity_id: String,
    /// Gallery entities with scores, best first.
    pub ranking: Vec<(String, f64)>,
    /// 1-based rank of the true entity.
    pub true_rank: usize,
    /// Number of test vectors used and the resolved `m`.
    pub vectors: usize,
    pub m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub condition: String,
    pub probes: Vec<ProbeResult>,
    /// `(k, accuracy)` for k in [`TOP_K`].
    pub top_k: Vec<(usize, f64)>,
    pub mrr: f64,
}

/// Top-k accuracies and mean reciprocal rank from 1-based true ranks.
pub fn rank_metrics(true_ranks: &[usize], ks: &[usize]) -> (Vec<(usize, f64)>, f64) {
    let n = true_ranks.len().max(1) as f64;
    let top = ks
        .iter()
        .map(|&k| (k, true_ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let mrr = true_ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    (top, mrr)
}

/// Sorts by score descending, ties by entity id; returns the 1-based rank
/// of `truth`.
fn rank(mut scored: Vec<(String, f64)>, truth: &str) -> (Vec<(String, f64)>, usize) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let r = scored.iter().position(|(e, _)| e == truth).map_or(usize::MAX, |i| i + 1);
    (scored, r)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reports: Vec<SimilarityReport>,
    /// Probe entities left out, with the reason.
    pub excluded: Vec<(String, String)>,
    pub entities: usize,
}

struct Probe<'a> {
    entity: &'a str,
    vectors: Vec<&'a LabeledEmbedding>,
}

/// Indices of the probe vectors whose sources all lie in `n` seeded phases
/// chosen from the probe's phases (all vectors when it has at most `n`).
fn subsample(probe: &Probe, n: usize, root_seed: u64) -> Vec<usize> {
    let phases: Vec<&String> = probe
        .vectors
        .iter()
        .flat_map(|v| v.sources.iter())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if phases.len() <= n {
        return (0..probe.vectors.len()).collect();
    }
    let mut rng = seed::substream(root_seed, &["identify", &format!("p{n}"), probe.entity]);
    let chosen: BTreeSet<&String> = index::sample(&mut rng, phases.len(), n).into_iter().map(|i| phases[i]).collect();
    (0..probe.vectors.len())
        .filter(|&i| probe.vectors[i].sources.iter().all(|s| chosen.contains(s)))
        .collect()
}

/// Runs every configured condition. The gallery is the set of probe
/// entities that also have at least two training embeddings.
pub fn evaluate(
    train: &[LabeledEmbedding],
    test: &[LabeledEmbedding],
    cfg: &IdentifyConfig,
    root_seed: u64,
) -> Result<Evaluation, IdentifyError> {
    let conditions: Vec<Condition> = cfg.conditions.iter().map(|c| c.parse()).collect::<Result<_, _>>()?;
    let mut train_by: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    for e in train {
        train_by.entry(&e.entity_id).or_default().push(e.vector.clone());
    }
    let mut test_by: BTreeMap<&str, Vec<&LabeledEmbedding>> = BTreeMap::new();
    for e in test {
        test_by.entry(&e.entity_id).or_default().push(e);
    }
    let mut out = Evaluation::default();
    let mut gallery: Vec<(&str, GaussianModel, &[Vec<f64>])> = Vec::new();
    let mut probes = Vec::new();
    for (&entity, vectors) in &test_by {
        let Some(tr) = train_by.get(entity) else {
            out.excluded.push((entity.to_string(), "no training embeddings".into()));
            continue;
        };
        match fit_gaussian(tr, cfg.ridge, cfg.covariance) {
            Ok(model) => {
                gallery.push((entity, model, tr));
                probes.push(Probe {
                    entity,
                    vectors: vectors.clone(),
                });
            }
            Err(e) => out.excluded.push((entity.to_string(), e.to_string())),
        }
    }
    if gallery.is_empty() {
        return Err(IdentifyError::EmptyGallery);
    }
    out.entities = gallery.len();

    // log-density of every probe vector under every gallery model
    let lls: Vec<Vec<Vec<f64>>> = probes
        .par_iter()
        .map(|p| {
            gallery
                .iter()
                .map(|(_, model, _)| p.vectors.iter().map(|v| model.log_density(&v.vector)).collect())
                .collect()
        })
        .collect();

    for cond in &conditions {
        let results: Vec<ProbeResult> = probes
            .par_iter()
            .zip(&lls)
            .map(|(probe, ll)| {
                let keep = subsample(probe, cond.phases, root_seed);
                let mut m = None;
                let scored: Vec<(String, f64)> = gallery
                    .iter()
                    .enumerate()
                    .map(|(g, (entity, _, tr))| {
                        let score = match cond.scorer {
                            Scorer::Lp(p) => {
                                let vs: Vec<Vec<f64>> = keep.iter().map(|&i| probe.vectors[i].vector.clone()).collect();
                                lp_similarity(tr, &vs, p, cfg.lp_aggregation)
                            }
                            Scorer::Likelihood(top) => {
                                let mm = top.resolve(keep.len()).min(keep.len());
                                m = Some(mm);
                                top_m_mean(keep.iter().map(|&i| ll[g][i]).collect(), mm)
                                    .expect("probe has at least one vector")
                            }
                        };
                        (entity.to_string(), score)
                    })
                    .collect();
                let (ranking, true_rank) = rank(scored, probe.entity);
                ProbeResult {
                    entity_id: probe.entity.to_string(),
                    ranking,
                    true_rank,
                    vectors: keep.len(),
                    m,
                }
            })
            .collect();
        let ranks: Vec<usize> = results.iter().map(|r| r.true_rank).collect();
        let (top_k, mrr) = rank_metrics(&ranks, &TOP_K);
        out.reports.push(SimilarityReport {
            condition: cond.name.clone(),
            probes: results,
            top_k,
            mrr,
        });
    }
    Ok(out)
}

impl SimilarityReport {
    pub fn top(&self, k: usize) -> Option<f64> {
        self.top_k.iter().find(|(kk, _)| *kk == k).map(|&(_, a)| a)
    }
}

/// Plain-text table: condition, top-1/3/5/10 accuracy (%), MRR.
pub fn render_table(eval: &Evaluation) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "entities: {}", eval.entities);
    let _ = writeln!(s, "{:<12}{:>8}{:>8}{:>8}{:>8}{:>8}", "condition", "top-1", "top-3", "top-5", "top-10", "MRR");
    for r in &eval.reports {
        let _ = write!(s, "{:<12}", r.condition);
        for &(_, a) in &r.top_k {
            let _ = write!(s, "{:>8.1}", 100.0 * a);
        }
        let _ = writeln!(s, "{:>8.3}", r.mrr);
    }
    for (e, why) in &eval.excluded {
        let _ = writeln!(s, "excluded {e}: {why}");
    }
    s
}

/// Tab-separated `condition, probe, rank, candidate, score` rows.
pub fn write_rankings<W: Write>(writer: W, eval: &Evaluation) -> Result<(), IdentifyError> {
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "condition\tprobe\trank\tcandidate\tscore")?;
    for r in &eval.reports {
        for p in &r.probes {
            for (i, (cand, score)) in p.ranking.iter().enumerate() {
                writeln!(w, "{}\t{}\t{}\t{}\t{}", r.condition, p.entity_id, i + 1, cand, score)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
