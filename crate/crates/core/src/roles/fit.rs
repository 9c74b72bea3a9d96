//! Frame-wise role assignment: hard EM over per-role 2D Gaussians with an
//! optimal player↔role matching in every frame.

use serde::{Deserialize, Serialize};

use super::hungarian::HungarianSolver;
use super::RolesError;
use crate::ingest::TrackedPhase;

/// 2D Gaussian with cached inverse and log-determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    log_norm: f64,
}

impl Gaussian2 {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        let log_norm = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln();
        Self { mean, cov, inv, log_norm }
    }

    pub fn log_density(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.mean[0];
        let dy = p[1] - self.mean[1];
        let q = dx * (self.inv[0][0] * dx + self.inv[0][1] * dy) + dy * (self.inv[1][0] * dx + self.inv[1][1] * dy);
        self.log_norm - 0.5 * q
    }
}

fn clip_eigenvalues(c: [[f64; 2]; 2], floor: f64) -> [[f64; 2]; 2] {
    let (a, b, d) = (c[0][0], c[0][1], c[1][1]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (half_tr + disc, half_tr - disc);
    if l2 >= floor {
        return c;
    }
    // unit eigenvector of l1
    let (vx, vy) = if b.abs() > 1e-300 {
        let v = [l1 - d, b];
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        (v[0] / n, v[1] / n)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let (m1, m2) = (l1.max(floor), l2.max(floor));
    // m1 v vᵀ + m2 w wᵀ with w ⟂ v
    [
        [m1 * vx * vx + m2 * vy * vy, (m1 - m2) * vx * vy],
        [(m1 - m2) * vx * vy, m1 * vy * vy + m2 * vx * vx],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleFrame {
    /// Fit in absolute pitch coordinates.
    Absolute,
    /// Subtract the team centroid in every frame before fitting.
    CentroidRelative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleFitConfig {
    pub min_players: usize,
    pub max_iter: usize,
    /// Stop once fewer than this fraction of frame assignments change.
    pub change_tol: f64,
    /// Lower bound on covariance eigenvalues, m².
    pub cov_floor: f64,
    /// A player counts as measured for the phase when present in at least
    /// this fraction of its frames.
    pub min_coverage: f64,
    pub frame: RoleFrame,
    /// Sampling period used to align frames across players.
    pub dt: f64,
}

impl Default for RoleFitConfig {
    fn default() -> Self {
        Self {
            min_players: 8,
            max_iter: 50,
            change_tol: 0.005,
            cov_floor: 1.0,
            min_coverage: 0.9,
            frame: RoleFrame::Absolute,
            dt: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleModel {
    pub roles: Vec<Gaussian2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleFit {
    pub team: String,
    pub player_ids: Vec<String>,
    /// Players of the team present for too little of the phase.
    pub excluded_players: Vec<String>,
    pub model: RoleModel,
    /// Mean absolute pitch position of the samples assigned to each role.
    pub absolute_means: Vec<[f64; 2]>,
    /// `assignments[player][frame]` = role index.
    pub assignments: Vec<Vec<usize>>,
    /// Total assigned log-likelihood after initialization and after every iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

impl RoleFit {
    pub fn frames(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }
}

/// Positions of the measured players of `team` on the frames where all of
/// them are present, `frames × players` row-major.
struct FrameTable {
    players: Vec<String>,
    excluded: Vec<String>,
    absolute: Vec<[f64; 2]>,
}

fn frame_table(phase: &TrackedPhase, team: &str, cfg: &RoleFitConfig) -> FrameTable {
    let f0 = (phase.interval.start / cfg.dt).round() as i64;
    let f1 = (phase.interval.end / cfg.dt).round() as i64;
    let span = (f1 - f0 + 1).max(1) as usize;
    let mut players = Vec::new();
    let mut excluded = Vec::new();
    let mut grids: Vec<Vec<Option<[f64; 2]>>> = Vec::new();
    for track in phase.players.iter().filter(|p| p.team == team) {
        let mut grid = vec![None; span];
        let mut present = 0usize;
        for (t, p) in track.t.iter().zip(&track.pos) {
            let f = (t / cfg.dt).round() as i64 - f0;
            if f >= 0 && (f as usize) < span && grid[f as usize].is_none() {
                grid[f as usize] = Some(*p);
                present += 1;
            }
        }
        let needed = (phase.interval.len() / cfg.dt) * cfg.min_coverage;
        if present as f64 >= needed && present > 0 {
            players.push(track.player_id.clone());
            grids.push(grid);
        } else {
            excluded.push(track.player_id.clone());
        }
    }
    let k = players.len();
    let mut absolute = Vec::new();
    for f in 0..span {
        if k > 0 && grids.iter().all(|g| g[f].is_some()) {
            absolute.extend(grids.iter().map(|g| g[f].expect("checked")));
        }
    }
    FrameTable {
        players,
        excluded,
        absolute,
    }
}

/// Fits K role distributions for one team in one phase and assigns a role to
/// every measured player in every common frame.
pub fn fit_roles(phase: &TrackedPhase, team: &str, cfg: &RoleFitConfig) -> Result<RoleFit, RolesError> {
    let table = frame_table(phase, team, cfg);
    let k = table.players.len();
    if k < cfg.min_players {
        return Err(RolesError::TooFewPlayers {
            phase: phase.phase_id.clone(),
            team: team.to_string(),
            found: k,
            required: cfg.min_players,
        });
    }
    let frames = table.absolute.len() / k;
    if frames == 0 {
        return Err(RolesError::NoCommonFrames(phase.phase_id.clone()));
    }
    let points: Vec<[f64; 2]> = match cfg.frame {
        RoleFrame::Absolute => table.absolute.clone(),
        RoleFrame::CentroidRelative => {
            let mut rel = table.absolute.clone();
            for row in rel.chunks_mut(k) {
                let cx = row.iter().map(|p| p[0]).sum::<f64>() / k as f64;
                let cy = row.iter().map(|p| p[1]).sum::<f64>() / k as f64;
                for p in row.iter_mut() {
                    p[0] -= cx;
                    p[1] -= cy;
                }
            }
            rel
        }
    };

    // assign[f * k + player] = role
    let mut assign: Vec<usize> = (0..frames).flat_map(|_| 0..k).collect();
    let refit = |assign: &[usize]| -> Vec<Gaussian2> {
        let mut sums = vec![(0.0, [0.0; 2], [0.0; 3]); k];
        for (idx, &r) in assign.iter().enumerate() {
            let p = points[idx];
            let e = &mut sums[r];
            e.0 += 1.0;
            e.1[0] += p[0];
            e.1[1] += p[1];
            e.2[0] += p[0] * p[0];
            e.2[1] += p[0] * p[1];
            e.2[2] += p[1] * p[1];
        }
        sums.iter()
            .map(|(n, s, ss)| {
                let mean = [s[0] / n, s[1] / n];
                let cxx = (ss[0] / n - mean[0] * mean[0]).max(0.0);
                let cxy = ss[1] / n - mean[0] * mean[1];
                let cyy = (ss[2] / n - mean[1] * mean[1]).max(0.0);
                Gaussian2::new(mean, clip_eigenvalues([[cxx, cxy], [cxy, cyy]], cfg.cov_floor))
            })
            .collect()
    };
    let total_ll = |roles: &[Gaussian2], assign: &[usize]| -> f64 {
        assign
            .iter()
            .enumerate()
            .map(|(idx, &r)| roles[r].log_density(points[idx]))
            .sum()
    };

    let mut roles = refit(&assign);
    let mut log_likelihood = vec![total_ll(&roles, &assign)];
    let mut solver = HungarianSolver::new();
    let mut cost = vec![0.0; k * k];
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut changed = 0usize;
        for f in 0..frames {
            for i in 0..k {
                let p = points[f * k + i];
                for (r, g) in roles.iter().enumerate() {
                    cost[i * k + r] = -g.log_density(p);
                }
            }
            let perm = solver.solve(k, &cost)?;
            for i in 0..k {
                if assign[f * k + i] != perm[i] {
                    changed += 1;
                    assign[f * k + i] = perm[i];
                }
            }
        }
        roles = refit(&assign);
        log_likelihood.push(total_ll(&roles, &assign));
        if (changed as f64) < cfg.change_tol * (frames * k) as f64 {
            break;
        }
    }

    let mut abs_sums = vec![(0.0f64, [0.0f64; 2]); k];
    for (idx, &r) in assign.iter().enumerate() {
        abs_sums[r].0 += 1.0;
        abs_sums[r].1[0] += table.absolute[idx][0];
        abs_sums[r].1[1] += table.absolute[idx][1];
    }
    let absolute_means = abs_sums.iter().map(|(n, s)| [s[0] / n, s[1] / n]).collect();
    let assignments = (0..k).map(|i| (0..frames).map(|f| assign[f * k + i]).collect()).collect();
    Ok(RoleFit {
        team: team.to_string(),
        player_ids: table.players,
        excluded_players: table.excluded,
        model: RoleModel { roles },
        absolute_means,
        assignments,
        log_likelihood,
        iterations,
    })
}

/// Most frequent role; ties go to the smallest index.
pub fn modal_role(frame_roles: &[usize]) -> Option<usize> {
    let max = *frame_roles.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &r in frame_roles {
        counts[r] += 1;
    }
    let best = *counts.iter().max()?;
    counts.iter().position(|&c| c == best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{PhaseInterval, PlayerTrack};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn planted_phase(means: &[[f64; 2]], std: f64, frames: usize, swap_at: Option<usize>, seed: u64) -> TrackedPhase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, std).unwrap();
        let mut players: Vec<PlayerTrack> = (0..means.len())
            .map(|i| PlayerTrack::new(&format!("p{i:02}"), "a"))
            .collect();
        for f in 0..frames {
            let t = f as f64 * 0.1;
            for (i, track) in players.iter_mut().enumerate() {
                let slot = match swap_at {
                    Some(s) if f >= s && i < 2 => 1 - i,
                    _ => i,
                };
                let m = means[slot];
                track.push(t, [m[0] + noise.sample(&mut rng), m[1] + noise.sample(&mut rng)], [0.0; 2], true);
            }
        }
        TrackedPhase {
            phase_id: "m-p00".into(),
            match_id: "m".into(),
            interval: PhaseInterval {
                half: 0,
                start: 0.0,
                end: frames as f64 * 0.1,
            },
            players,
        }
    }

    fn formation() -> Vec<[f64; 2]> {
        vec![
            [20.0, 10.0],
            [20.0, 27.0],
            [20.0, 41.0],
            [20.0, 58.0],
            [45.0, 10.0],
            [45.0, 27.0],
            [45.0, 41.0],
            [45.0, 58.0],
            [70.0, 24.0],
            [70.0, 44.0],
        ]
    }

    #[test]
    fn gaussian_log_density_at_mean() {
        let g = Gaussian2::new([1.0, 2.0], [[4.0, 0.0], [0.0, 4.0]]);
        let expect = -(2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((g.log_density([1.0, 2.0]) - expect).abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_clip_keeps_large_directions() {
        let c = clip_eigenvalues([[9.0, 0.0], [0.0, 0.01]], 1.0);
        assert!((c[0][0] - 9.0).abs() < 1e-12 && (c[1][1] - 1.0).abs() < 1e-12);
        let c = clip_eigenvalues([[2.0, 2.0], [2.0, 2.0]], 1.0);
        // eigenvalues 4 and 0 → 4 and 1 along (1,1)/√2 and (1,-1)/√2
        assert!((c[0][0] - 2.5).abs() < 1e-12 && (c[0][1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn planted_roles_are_recovered_without_swaps() {
        let means = formation();
        let phase = planted_phase(&means, 2.0, 3000, None, 1);
        let fit = fit_roles(&phase, "a", &RoleFitConfig::default()).unwrap();
        for (i, a) in fit.assignments.iter().enumerate() {
            assert!(a.iter().all(|&r| r == i), "player {i} changed role");
            let m = fit.model.roles[i].mean;
            let d = ((m[0] - means[i][0]).powi(2) + (m[1] - means[i][1]).powi(2)).sqrt();
            assert!(d < 0.5, "role {i} mean off by {d}");
        }
    }

    #[test]
    fn swapping_players_follow_location() {
        let means = formation();
        let phase = planted_phase(&means, 1.5, 2000, Some(1000), 2);
        let fit = fit_roles(&phase, "a", &RoleFitConfig::default()).unwrap();
        // role of the first half slot of player 0 / 1
        let r0 = modal_role(&fit.assignments[0][..1000]).unwrap();
        let r1 = modal_role(&fit.assignments[1][..1000]).unwrap();
        assert_ne!(r0, r1);
        let late0 = modal_role(&fit.assignments[0][1000..]).unwrap();
        let late1 = modal_role(&fit.assignments[1][1000..]).unwrap();
        assert_eq!(late0, r1);
        assert_eq!(late1, r0);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        // overlapping roles force several EM iterations
        let means: Vec<[f64; 2]> = (0..9).map(|i| [30.0 + 3.0 * i as f64, 34.0 + (i % 3) as f64 * 3.0]).collect();
        let phase = planted_phase(&means, 4.0, 1500, Some(500), 3);
        let fit = fit_roles(&phase, "a", &RoleFitConfig::default()).unwrap();
        assert!(fit.iterations >= 2);
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs(), "{:?}", fit.log_likelihood);
        }
        for f in 0..fit.frames() {
            let mut seen = [false; 9];
            for a in &fit.assignments {
                assert!(!seen[a[f]]);
                seen[a[f]] = true;
            }
        }
    }

    #[test]
    fn single_frame_at_role_means_is_identity() {
        let means = formation();
        let phase = planted_phase(&means, 0.0, 1, None, 4);
        let fit = fit_roles(&phase, "a", &RoleFitConfig::default()).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(fit.assignments.iter().enumerate().all(|(i, a)| a == &vec![i]));
        assert_eq!(fit.log_likelihood[0], fit.log_likelihood[1]);
    }

    #[test]
    fn too_few_players_is_an_error() {
        let means = &formation()[..7];
        let phase = planted_phase(means, 1.0, 100, None, 5);
        assert!(matches!(
            fit_roles(&phase, "a", &RoleFitConfig::default()),
            Err(RolesError::TooFewPlayers { found: 7, .. })
        ));
    }

    #[test]
    fn modal_role_examples() {
        assert_eq!(modal_role(&[2, 2, 1, 2]), Some(2));
        assert_eq!(modal_role(&[1, 1, 2, 2]), Some(1));
        assert_eq!(modal_role(&[7]), Some(7));
        assert_eq!(modal_role(&[]), None);
    }
}
