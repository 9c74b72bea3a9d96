//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line to stderr (written directly so the harness does not capture it).

use std::collections::BTreeMap;
use std::io::Write;

use playstyle_cli::{PipelineConfig, Stage, Workspace};
use playstyle_core::heatmap::{augment_exhaustive, direction_heatmap, location_heatmap, read_store, Bounds, HeatmapPair};
use playstyle_core::identify::{atl_sim, fit_gaussian, CovarianceKind, Evaluation};
use playstyle_core::ingest::{PhaseInterval, PlayerTrack, TrackedPhase};
use playstyle_core::roles::{cluster_player, hungarian, label_phase, ClusterConfig, RoleFitConfig};
use playstyle_core::PitchDims;
use playstyle_net::branch::INPUT_SHAPE;
use playstyle_net::gradcheck::{check_gradients, kink_margin};
use playstyle_net::model::{Inputs, Model, Triplet};
use playstyle_net::NetConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn verdict(n: usize, ok: bool, detail: &str) {
    let line = format!("criterion {n}: {} ({detail})\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn single_pairs(entity: &str, n: usize) -> Vec<HeatmapPair> {
    let dims = PitchDims::default();
    (0..n)
        .map(|i| {
            let (loc, _) = location_heatmap([[1.0 + i as f64, 2.0]], dims);
            HeatmapPair {
                entity_id: entity.into(),
                sources: vec![format!("m-p{i:02}")],
                location: loc,
                direction: direction_heatmap([[5.0, 0.0]], 4.0, Bounds::direction(12.0, 8.0)),
            }
        })
        .collect()
}

#[test]
fn c1_augmentation_combinatorics() {
    let five = augment_exhaustive(&single_pairs("a", 5), 3).len();
    let ten = augment_exhaustive(&single_pairs("a", 10), 3).len();
    let (val, test) = (332 * five, 308 * ten);
    let ok = five == 10 && ten == 120 && val == 3320 && test == 36960;
    verdict(1, ok, &format!("C(5,3)={five}, C(10,3)={ten}, 332 val -> {val}, 308 test -> {test}"));
    assert!(ok);
}

#[test]
fn c2_heatmap_additivity() {
    let dims = PitchDims::default();
    let dir_bounds = Bounds::direction(12.0, 8.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..400);
        let pos: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-5.0..110.0), rng.random_range(-5.0..73.0)])
            .collect();
        let vel: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-14.0..14.0), rng.random_range(-10.0..10.0)])
            .collect();
        let parts = rng.random_range(1..6);
        let owner: Vec<usize> = (0..n).map(|_| rng.random_range(0..parts)).collect();
        let (whole_loc, _) = location_heatmap(pos.iter().copied(), dims);
        let whole_dir = direction_heatmap(vel.iter().copied(), 4.0, dir_bounds);
        let mut sum_loc = location_heatmap(std::iter::empty(), dims).0;
        let mut sum_dir = direction_heatmap(std::iter::empty(), 4.0, dir_bounds);
        for k in 0..parts {
            let (l, _) = location_heatmap((0..n).filter(|&i| owner[i] == k).map(|i| pos[i]), dims);
            let d = direction_heatmap((0..n).filter(|&i| owner[i] == k).map(|i| vel[i]), 4.0, dir_bounds);
            sum_loc.add_assign(&l).unwrap();
            sum_dir.add_assign(&d).unwrap();
        }
        if sum_loc != whole_loc || sum_dir != whole_dir {
            failures += 1;
        }
    }
    verdict(2, failures == 0, &format!("{failures} of 1000 partitions differ"));
    assert_eq!(failures, 0);
}

#[test]
fn c3_network_shape_and_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::<f32>::new(NetConfig::default(), &mut rng);
    let mut x = Inputs::<f32>::default();
    for _ in 0..4 {
        let a: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..0.01)).collect();
        let b: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..0.01)).collect();
        x.push(&a, &b);
    }
    let want: [(&str, [usize; 3]); 14] = [
        ("conv1a", [36, 48, 4]),
        ("conv1b", [36, 48, 4]),
        ("pool1", [18, 24, 4]),
        ("conv2a", [18, 24, 16]),
        ("conv2b", [18, 24, 16]),
        ("pool2", [9, 12, 16]),
        ("conv3a", [10, 12, 32]),
        ("conv3b", [10, 12, 32]),
        ("pool3", [5, 6, 32]),
        ("conv4a", [5, 6, 64]),
        ("conv4b", [5, 6, 64]),
        ("flatten", [1920, 1, 1]),
        ("fc1", [128, 1, 1]),
        ("fc2", [10, 1, 1]),
    ];
    let (emb, cache) = model.forward_train(&x, 1);
    let (loc, dir) = cache.trace();
    let shapes_ok = [loc, dir].iter().all(|trace| {
        trace.len() == want.len()
            && trace.iter().zip(want).all(|((name, s), (wn, w))| {
                let got = if s.h == 1 && s.w == 1 { [s.c, 1, 1] } else { [s.h, s.w, s.c] };
                name == wn && got == w
            })
    });
    let infer = model.embed(&x);
    let dim = model.embed_dim();
    let worst = emb
        .chunks(dim)
        .chain(infer.chunks(dim))
        .map(|r| (r.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let ok = shapes_ok && dim == 20 && worst <= 1e-6;
    verdict(3, ok, &format!("trace matches: {shapes_ok}, dim {dim}, max |‖f‖-1| = {worst:.2e}"));
    assert!(ok);
}

#[test]
fn c4_gradient_check() {
    let cfg = NetConfig {
        channels: [2, 2, 3, 2],
        fc_hidden: 4,
        embed_dim: 3,
        alpha: 0.5,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::<f64>::new(cfg, &mut rng);
    let triplets: Vec<Triplet> = vec![[0, 1, 2], [0, 0, 3], [1, 0, 4], [3, 4, 5], [5, 3, 1]];
    let draw = |rng: &mut ChaCha8Rng| {
        let mut x = Inputs::<f64>::default();
        for _ in 0..6 {
            let a: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f32> = (0..INPUT_SHAPE.len()).map(|_| rng.random_range(0.0..1.0)).collect();
            x.push(&a, &b);
        }
        x
    };
    let x = (0..)
        .map(|_| draw(&mut rng))
        .find(|x| kink_margin(&model, x, &triplets, 17) > 1e-6)
        .unwrap();
    let report = check_gradients(&model, &x, &triplets, 1e-5, 17);
    let worst = report.max_rel_error();
    let all_checked = report.tensors.iter().all(|t| t.checked > 0);
    let ok = worst <= 1e-3 && all_checked;
    verdict(
        4,
        ok,
        &format!("{} tensors, max relative error {worst:.2e}, every tensor checked: {all_checked}", report.tensors.len()),
    );
    assert!(ok);
}

fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..cost.len() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

#[test]
fn c5_hungarian_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = 0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=7);
        // half integer-valued (ties likely), half continuous
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| if trial % 2 == 0 { f64::from(rng.random_range(0..10)) } else { rng.random_range(-50.0..50.0) })
                    .collect()
            })
            .collect();
        let a = hungarian(&cost).unwrap();
        let mut seen = vec![false; n];
        let perm_ok = a.row_to_col.len() == n && a.row_to_col.iter().all(|&c| c < n && !std::mem::replace(&mut seen[c], true));
        // the assignment's own cost, summed in row order like the brute force
        let own: f64 = a.row_to_col.iter().enumerate().fold(0.0, |s, (r, &c)| s + cost[r][c]);
        if !perm_ok || own != brute_force_min(&cost) {
            failures += 1;
        }
    }
    verdict(5, failures == 0, &format!("{failures} of 1000 matrices (n ≤ 7) differ from brute force"));
    assert_eq!(failures, 0);
}

/// Formation slot homes on a 105 × 68 pitch; nearest pair 17 m apart.
const HOMES: [[f64; 2]; 10] = [
    [25.0, 8.5],
    [25.0, 25.5],
    [25.0, 42.5],
    [25.0, 59.5],
    [50.0, 8.5],
    [50.0, 25.5],
    [50.0, 42.5],
    [50.0, 59.5],
    [75.0, 25.5],
    [75.0, 42.5],
];
/// Slot pairs whose occupants swap in odd phases; planted two-role players.
const SWAPS: [(usize, usize); 2] = [(0, 9), (3, 8)];

fn min_home_separation() -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..10 {
        for j in i + 1..10 {
            best = best.min((HOMES[i][0] - HOMES[j][0]).hypot(HOMES[i][1] - HOMES[j][1]));
        }
    }
    best
}

/// Slot of `player` (0..10) in `phase`.
fn planted_slot(player: usize, phase: usize) -> usize {
    if phase % 2 == 1 {
        for (a, b) in SWAPS {
            if player == a {
                return b;
            }
            if player == b {
                return a;
            }
        }
    }
    player
}

fn planted_phase(phase: usize, frames: usize, std: f64, rng: &mut ChaCha8Rng) -> TrackedPhase {
    let noise = Normal::new(0.0, std).unwrap();
    let dt = 0.1;
    let mut players = Vec::new();
    for team in 0..2 {
        for p in 0..10 {
            players.push(PlayerTrack::new(&format!("t{team}p{p}"), &format!("t{team}")));
        }
    }
    for f in 0..frames {
        let t = f as f64 * dt;
        for team in 0..2 {
            let mut slots: Vec<usize> = (0..10).map(|p| planted_slot(p, phase)).collect();
            // brief interchanges: two random players trade places on 10% of frames
            if rng.random_bool(0.1) {
                let (a, b) = (rng.random_range(0..10), rng.random_range(0..10));
                slots.swap(a, b);
            }
            for p in 0..10 {
                let h = HOMES[slots[p]];
                let pos = [h[0] + noise.sample(rng), h[1] + noise.sample(rng)];
                players[team * 10 + p].push(t, pos, [0.0, 0.0], true);
            }
        }
    }
    TrackedPhase {
        phase_id: format!("m-p{phase:02}"),
        match_id: "m".into(),
        interval: PhaseInterval {
            half: 1,
            start: 0.0,
            end: frames as f64 * dt,
        },
        players,
    }
}

#[test]
fn c6_role_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // within-role std at exactly a fifth of the closest home separation
    let std = min_home_separation() / 5.0;
    let phases = 12;
    let cfg = RoleFitConfig::default();
    let (mut modal_hits, mut modal_total) = (0usize, 0usize);
    let mut means: BTreeMap<String, Vec<[f64; 2]>> = BTreeMap::new();
    for ph in 0..phases {
        let phase = planted_phase(ph, 3000, std, &mut rng);
        let roles = label_phase(&phase, &cfg).unwrap();
        for e in &roles.entities {
            let p: usize = e.player_id[3..].parse().unwrap();
            let want = HOMES[planted_slot(p, ph)];
            // the recovered role is the planted one when its mean sits at the planted home
            let nearest = (0..10)
                .min_by(|&a, &b| {
                    let d = |s: usize| (HOMES[s][0] - e.role_mean[0]).hypot(HOMES[s][1] - e.role_mean[1]);
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            modal_total += 1;
            if HOMES[nearest] == want {
                modal_hits += 1;
            }
            means.entry(e.player_id.clone()).or_default().push(e.role_mean);
        }
    }
    let modal_acc = modal_hits as f64 / modal_total as f64;
    let ccfg = ClusterConfig::default();
    let (mut structure_hits, mut players) = (0usize, 0usize);
    for (player, ms) in &means {
        let p: usize = player[3..].parse().unwrap();
        let two = SWAPS.iter().any(|&(a, b)| p == a || p == b);
        let fit = cluster_player(ms, &ccfg, 6);
        // planted partition: even phases vs odd phases
        let planted: Vec<usize> = (0..ms.len()).map(|i| if two { i % 2 } else { 0 }).collect();
        let same_partition = (0..ms.len()).all(|i| (0..ms.len()).all(|j| (fit.labels[i] == fit.labels[j]) == (planted[i] == planted[j])));
        players += 1;
        if fit.k == if two { 2 } else { 1 } && same_partition {
            structure_hits += 1;
        }
    }
    let structure_acc = structure_hits as f64 / players as f64;
    let ok = modal_acc >= 0.95 && structure_acc >= 0.95;
    verdict(
        6,
        ok,
        &format!(
            "separation/std = {:.1}, modal-role accuracy {:.3} over {modal_total}, cluster structure {:.3} over {players} players",
            min_home_separation() / std,
            modal_acc,
            structure_acc
        ),
    );
    assert!(ok);
}

#[test]
fn c7_atl_sim_analytics() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..20).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let (mut exact_ok, mut monotone_ok) = (true, true);
    for _ in 0..100 {
        let train: Vec<Vec<f64>> = (0..30).map(|_| unit(&mut rng)).collect();
        let model = fit_gaussian(&train, 1e-3, CovarianceKind::Full).unwrap();
        let m_total = rng.random_range(1..=120);
        let probe: Vec<Vec<f64>> = (0..m_total).map(|_| unit(&mut rng)).collect();
        let mut lls: Vec<f64> = probe.iter().map(|v| model.log_density(v)).collect();
        let max = lls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lls.sort_by(|a, b| b.total_cmp(a));
        let mean = lls.iter().sum::<f64>() / m_total as f64;
        exact_ok &= atl_sim(&model, &probe, 1).unwrap() == max && atl_sim(&model, &probe, m_total).unwrap() == mean;
        let curve: Vec<f64> = (1..=m_total).map(|m| atl_sim(&model, &probe, m).unwrap()).collect();
        monotone_ok &= curve.windows(2).all(|w| w[1] <= w[0]);
    }
    let ok = exact_ok && monotone_ok;
    verdict(7, ok, &format!("m=1 is max and m=M is mean: {exact_ok}; non-increasing in m on 100 sets: {monotone_ok}"));
    assert!(ok);
}

fn read_file(ws: &Workspace, rel: &str) -> Vec<u8> {
    std::fs::read(ws.path(rel)).unwrap_or_default()
}

/// Runs every stage in a fresh directory on a pool of `threads` workers.
fn full_run(dir: &std::path::Path, threads: usize) -> Workspace {
    let mut cfg = PipelineConfig::default();
    cfg.paths.work = dir.to_path_buf();
    let ws = Workspace::new(cfg).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| ws.run_from(Stage::Synth))
        .unwrap();
    ws
}

const REPORT_FILES: [&str; 3] = ["report/evaluation.json", "report/rankings.tsv", "report/table.txt"];

#[test]
fn c8_c9_end_to_end_identification_and_determinism() {
    let defaults = PipelineConfig::default();
    let paper_defaults = defaults.train.net.alpha == 0.1
        && defaults.train.learning_rate == 0.05
        && defaults.train.batch_size == 1000
        && defaults.heatmap.speed_threshold == 4.0;
    let tmp = tempfile::tempdir().unwrap();
    let started = std::time::Instant::now();
    let ws = full_run(&tmp.path().join("first"), 1);
    let minutes = started.elapsed().as_secs_f64() / 60.0;

    let singles = read_store(std::fs::File::open(ws.path("heatmaps/single.txt")).unwrap()).unwrap();
    let mut phases: BTreeMap<String, usize> = BTreeMap::new();
    for p in &singles {
        *phases.entry(p.entity_id.clone()).or_default() += 1;
    }
    let big = phases.values().filter(|&&c| c >= 25).count();
    let eval: Evaluation = ws.evaluation().unwrap();
    let cond = |name: &str| eval.reports.iter().find(|r| r.condition == name).unwrap();
    let atl = cond("p10-ATL25");
    let l2 = cond("p10-L2");
    let (top1, top10, mrr) = (atl.top(1).unwrap(), atl.top(10).unwrap(), atl.mrr);
    let ok8 = paper_defaults && big >= 40 && top1 >= 0.5 && top10 >= 0.9 && mrr >= 0.6 && top1 >= l2.top(1).unwrap();
    let table = String::from_utf8_lossy(&read_file(&ws, "report/table.txt")).into_owned();
    let _ = std::io::stderr().write_all(table.as_bytes());
    verdict(
        8,
        ok8,
        &format!(
            "{big} identities with ≥ 25 phases, {} probes; p10-ATL25 top-1 {:.3} top-10 {:.3} MRR {:.3}; p10-L2 top-1 {:.3}; {minutes:.1} min",
            eval.entities,
            top1,
            top10,
            mrr,
            l2.top(1).unwrap()
        ),
    );

    let again = full_run(&tmp.path().join("second"), 3);
    let differing: Vec<&str> = REPORT_FILES
        .iter()
        .copied()
        .filter(|f| {
            let a = read_file(&ws, f);
            a.is_empty() || a != read_file(&again, f)
        })
        .collect();
    let ok9 = differing.is_empty();
    verdict(9, ok9, &format!("rerun on 3 workers vs 1; differing report files: {differing:?}"));
    assert!(ok8, "end-to-end identification below target");
    assert!(ok9, "rerun reports differ");
}
