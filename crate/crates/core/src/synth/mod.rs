//! Deterministic synthetic league: tracking, events and ground truth for a
//! round-robin season of formation-based teams.
//!
//! Each player stands at `centroid + slot home + personal offset + wander`,
//! where the team centroid and the personal wander are smooth mean-reverting
//! processes and sprints follow the player's heading preference. Positions
//! are generated in the attack-normalized frame and mapped to the raw frame
//! by a half-turn for the team attacking −x.

mod motion;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use motion::{PlayerMotion, StyleProfile, Wander};

use crate::ingest::{segment_phases, EventKind, MatchEvent, MatchEvents, RawPosition, RawSample};
use crate::{ingest, seed, PitchDims};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid league config: {0}")]
    InvalidConfig(String),
    #[error("match index {0} out of range")]
    NoSuchMatch(usize),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formation {
    #[serde(rename = "4-4-2")]
    F442,
    #[serde(rename = "4-3-3")]
    F433,
    #[serde(rename = "3-5-2")]
    F352,
    #[serde(rename = "4-2-3-1")]
    F4231,
}

impl Formation {
    /// Slot homes: x relative to the team centroid, y across the pitch
    /// (fraction of the width), attack toward +x.
    fn template(self) -> [(f64, f64); 10] {
        match self {
            Formation::F442 => [
                (-18.0, 0.12),
                (-20.0, 0.37),
                (-20.0, 0.63),
                (-18.0, 0.88),
                (0.0, 0.12),
                (-2.0, 0.38),
                (-2.0, 0.62),
                (0.0, 0.88),
                (17.0, 0.38),
                (17.0, 0.62),
            ],
            Formation::F433 => [
                (-18.0, 0.12),
                (-20.0, 0.37),
                (-20.0, 0.63),
                (-18.0, 0.88),
                (-4.0, 0.28),
                (-7.0, 0.5),
                (-4.0, 0.72),
                (16.0, 0.14),
                (19.0, 0.5),
                (16.0, 0.86),
            ],
            Formation::F352 => [
                (-21.0, 0.27),
                (-22.0, 0.5),
                (-21.0, 0.73),
                (-3.0, 0.08),
                (-6.0, 0.33),
                (0.0, 0.5),
                (-6.0, 0.67),
                (-3.0, 0.92),
                (17.0, 0.38),
                (17.0, 0.62),
            ],
            Formation::F4231 => [
                (-18.0, 0.12),
                (-20.0, 0.37),
                (-20.0, 0.63),
                (-18.0, 0.88),
                (-9.0, 0.38),
                (-9.0, 0.62),
                (6.0, 0.15),
                (7.0, 0.5),
                (6.0, 0.85),
                (20.0, 0.5),
            ],
        }
    }

    /// Home of `slot` relative to the centroid, m.
    pub fn home(self, slot: usize, dims: PitchDims) -> [f64; 2] {
        let (x, fy) = self.template()[slot];
        [x, (fy - 0.5) * dims.width]
    }
}

pub const SLOTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeagueConfig {
    pub teams: usize,
    /// Outfield regulars per team; exactly one per formation slot.
    pub regulars: usize,
    pub bench: usize,
    /// Round-robin legs.
    pub rounds: usize,
    pub half_minutes: f64,
    pub break_minutes: f64,
    pub hz: f64,
    pub dims: PitchDims,
    pub formations: Vec<Formation>,
    /// Fraction of regulars that belong to a slot-swapping pair.
    pub multi_role_fraction: f64,
    /// Swap pairs exchange slots in every `swap_every`-th match of their team.
    pub swap_every: usize,
    /// Minimum home distance between the slots of a swap pair, m.
    pub swap_min_distance: f64,
    /// Probability that a team substitutes at a substitution window.
    pub sub_probability: f64,
    /// Scales between-player style differences.
    pub style_separation: f64,
    /// Stationary spread of the team centroid around the pitch centre, m.
    pub centroid_spread: [f64; 2],
    pub centroid_period: f64,
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for LeagueConfig {
    fn default() -> Self {
        Self {
            teams: 5,
            regulars: SLOTS,
            bench: 3,
            rounds: 2,
            half_minutes: 45.0,
            break_minutes: 15.0,
            hz: 10.0,
            dims: PitchDims::default(),
            formations: vec![Formation::F442, Formation::F433, Formation::F352, Formation::F4231],
            multi_role_fraction: 0.2,
            swap_every: 3,
            swap_min_distance: 20.0,
            sub_probability: 0.8,
            style_separation: 1.0,
            centroid_spread: [8.0, 3.0],
            centroid_period: 120.0,
            max_speed: 11.5,
            seed: 0,
        }
    }
}

impl LeagueConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.teams < 2 {
            return bad("need at least 2 teams");
        }
        if self.regulars != SLOTS {
            return bad("regulars must equal the 10 formation slots");
        }
        if self.rounds == 0 {
            return bad("need at least one round");
        }
        if !(self.half_minutes > 0.0 && self.hz > 0.0 && self.break_minutes >= 0.0) {
            return bad("half length and sampling rate must be positive");
        }
        if !self.dims.is_valid() {
            return bad("invalid pitch dimensions");
        }
        if self.formations.is_empty() {
            return bad("no formations");
        }
        if !(0.0..=1.0).contains(&self.multi_role_fraction) || !(0.0..=1.0).contains(&self.sub_probability) {
            return bad("fractions must lie in [0, 1]");
        }
        if self.swap_every == 0 {
            return bad("swap_every must be positive");
        }
        if !(self.style_separation >= 0.0) {
            return bad("style separation must be non-negative");
        }
        if !(self.max_speed > 0.0 && self.max_speed <= 12.0) {
            return bad("max speed must lie in (0, 12] m/s");
        }
        Ok(())
    }

    fn frames_per_half(&self) -> usize {
        (self.half_minutes * 60.0 * self.hz).round() as usize
    }

    pub fn match_duration(&self) -> f64 {
        (2.0 * self.half_minutes + self.break_minutes) * 60.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerInfo {
    pub player_id: String,
    pub team: String,
    /// Primary slot; `None` for bench players.
    pub slot: Option<usize>,
    pub style: StyleProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub match_id: String,
    pub home: usize,
    pub away: usize,
    /// Index of this match among each side's matches.
    pub home_round: usize,
    pub away_round: usize,
}

/// Static part of a league: rosters, styles, swap pairs and the schedule.
#[derive(Debug, Clone)]
pub struct League {
    pub config: LeagueConfig,
    pub teams: Vec<String>,
    /// Indexed by team, regulars first (slot order) then bench.
    pub rosters: Vec<Vec<PlayerInfo>>,
    pub swap_pairs: Vec<Vec<(usize, usize)>>,
    pub fixtures: Vec<Fixture>,
}

/// One row of the ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub match_id: String,
    pub phase_id: String,
    pub player_id: String,
    pub team: String,
    pub slot: usize,
    /// True when the player is in their primary slot (always false on the bench).
    pub primary: bool,
    /// Slot home in the attack-normalized frame at the pitch centre, m.
    pub home_x: f64,
    pub home_y: f64,
    /// Share of the phase the player was on the pitch.
    pub coverage: f64,
    /// `player@slot`: the planted identity.
    pub truth_entity: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticMatch {
    pub match_id: String,
    pub duration: f64,
    pub samples: Vec<RawSample>,
    pub events: Vec<MatchEvent>,
    pub truth: Vec<TruthRow>,
}

fn team_id(t: usize) -> String {
    format!("t{t}")
}

fn circle_schedule(n: usize) -> Vec<Vec<(usize, usize)>> {
    // circle method; a dummy team pads odd counts
    let m = if n.is_multiple_of(2) { n } else { n + 1 };
    let mut order: Vec<usize> = (0..m).collect();
    let mut days = Vec::new();
    for _ in 0..m - 1 {
        let mut day = Vec::new();
        for i in 0..m / 2 {
            let (a, b) = (order[i], order[m - 1 - i]);
            if a < n && b < n {
                day.push((a, b));
            }
        }
        days.push(day);
        let last = order.pop().expect("m >= 2");
        order.insert(1, last);
    }
    days
}

impl League {
    pub fn new(config: LeagueConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let root = config.seed;
        let teams: Vec<String> = (0..config.teams).map(team_id).collect();
        let mut rosters = Vec::new();
        let mut swap_pairs = Vec::new();
        for (ti, team) in teams.iter().enumerate() {
            let formation = config.formations[ti % config.formations.len()];
            let mut roster = Vec::new();
            for p in 0..config.regulars + config.bench {
                let player_id = format!("{team}p{p:02}");
                let mut rng = seed::substream(root, &["synth", "style", &player_id]);
                roster.push(PlayerInfo {
                    style: StyleProfile::sample(config.style_separation, &mut rng),
                    player_id,
                    team: team.clone(),
                    slot: (p < config.regulars).then_some(p),
                });
            }
            rosters.push(roster);

            // disjoint slot pairs with homes far apart
            let want = ((config.multi_role_fraction * config.regulars as f64) / 2.0).round() as usize;
            let mut rng = seed::substream(root, &["synth", "swaps", team]);
            let mut free: Vec<usize> = index::sample(&mut rng, SLOTS, SLOTS).into_vec();
            let mut pairs = Vec::new();
            while pairs.len() < want {
                let Some(a) = free.pop() else { break };
                let ha = formation.home(a, config.dims);
                if let Some(pos) = free.iter().position(|&b| {
                    let hb = formation.home(b, config.dims);
                    (ha[0] - hb[0]).hypot(ha[1] - hb[1]) > config.swap_min_distance
                }) {
                    let b = free.remove(pos);
                    pairs.push((a.min(b), a.max(b)));
                }
            }
            pairs.sort_unstable();
            swap_pairs.push(pairs);
        }

        let days = circle_schedule(config.teams);
        let mut fixtures = Vec::new();
        let mut played = vec![0usize; config.teams];
        for leg in 0..config.rounds {
            for day in &days {
                for &(a, b) in day {
                    let (home, away) = if leg % 2 == 0 { (a, b) } else { (b, a) };
                    fixtures.push(Fixture {
                        match_id: format!("m{:03}", fixtures.len()),
                        home,
                        away,
                        home_round: played[home],
                        away_round: played[away],
                    });
                    played[home] += 1;
                    played[away] += 1;
                }
            }
        }
        Ok(Self {
            config,
            teams,
            rosters,
            swap_pairs,
            fixtures,
        })
    }

    pub fn formation(&self, team: usize) -> Formation {
        self.config.formations[team % self.config.formations.len()]
    }

    /// Slot of each regular in the given match of their team.
    fn lineup(&self, team: usize, round: usize) -> Vec<usize> {
        let mut slots: Vec<usize> = (0..SLOTS).collect();
        if round % self.config.swap_every == self.config.swap_every - 1 {
            for &(a, b) in &self.swap_pairs[team] {
                slots.swap(a, b);
            }
        }
        slots
    }

    pub fn players(&self) -> impl Iterator<Item = &PlayerInfo> {
        self.rosters.iter().flatten()
    }

    /// Generates one match. Pure function of the config and the index.
    pub fn generate_match(&self, index: usize) -> Result<SyntheticMatch, SynthError> {
        let fx = self.fixtures.get(index).ok_or(SynthError::NoSuchMatch(index))?;
        let cfg = &self.config;
        let mid = fx.match_id.as_str();
        let dt = 1.0 / cfg.hz;
        let half_len = cfg.frames_per_half();
        let half_starts = [0.0, (cfg.half_minutes + cfg.break_minutes) * 60.0];
        let mut rng = seed::substream(cfg.seed, &["synth", mid, "events"]);

        // team attacking +x in the first half
        let first_positive = if rng.random::<bool>() { fx.home } else { fx.away };
        let sides = [fx.home, fx.away];
        let mut events = Vec::new();
        for (h, &start) in half_starts.iter().enumerate() {
            let positive = if h == 0 { first_positive } else { fx.home + fx.away - first_positive };
            events.push(MatchEvent {
                match_id: mid.to_string(),
                kind: EventKind::HalfStart,
                t: start,
                team: Some(self.teams[positive].clone()),
            });
            events.push(MatchEvent {
                match_id: mid.to_string(),
                kind: EventKind::HalfEnd,
                t: start + half_len as f64 * dt,
                team: None,
            });
        }

        // stints: (player index in roster, slot, first frame, end frame) per team per half
        let windows: [&[(f64, f64)]; 2] = [&[(0.4, 0.6)], &[(0.28, 0.38), (0.62, 0.72)]];
        let rounds = [fx.home_round, fx.away_round];
        let mut stints: Vec<Vec<Vec<(usize, usize, usize, usize)>>> = vec![vec![Vec::new(); 2]; 2];
        let mut on_field: Vec<Vec<(usize, usize, usize)>> = (0..2)
            .map(|s| self.lineup(sides[s], rounds[s]).into_iter().enumerate().map(|(p, slot)| (p, slot, 0)).collect())
            .collect();
        let mut bench_left: Vec<Vec<usize>> = (0..2).map(|_| (cfg.regulars..cfg.regulars + cfg.bench).collect()).collect();
        for h in 0..2 {
            for field in on_field.iter_mut() {
                for e in field.iter_mut() {
                    e.2 = 0;
                }
            }
            for &(lo, hi) in windows[h] {
                let f = ((lo + rng.random::<f64>() * (hi - lo)) * half_len as f64).round() as usize;
                for s in 0..2 {
                    if bench_left[s].is_empty() || rng.random::<f64>() >= cfg.sub_probability {
                        continue;
                    }
                    let out = rng.random_range(0..on_field[s].len());
                    let pick = rng.random_range(0..bench_left[s].len());
                    let incoming = bench_left[s].remove(pick);
                    let (player, slot, from) = on_field[s][out];
                    stints[s][h].push((player, slot, from, f));
                    on_field[s][out] = (incoming, slot, f);
                    events.push(MatchEvent {
                        match_id: mid.to_string(),
                        kind: EventKind::Substitution,
                        t: half_starts[h] + f as f64 * dt,
                        team: Some(self.teams[sides[s]].clone()),
                    });
                }
            }
            for s in 0..2 {
                for &(player, slot, from) in &on_field[s] {
                    stints[s][h].push((player, slot, from, half_len));
                }
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then_with(|| a.team.cmp(&b.team)));

        let mut samples = Vec::new();
        let mut presence: BTreeMap<(usize, usize), Vec<(usize, f64, f64)>> = BTreeMap::new();
        for s in 0..2 {
            let team = sides[s];
            let formation = self.formation(team);
            for h in 0..2 {
                let attacking_positive = if h == 0 { team == first_positive } else { team != first_positive };
                let mut crng = seed::substream(cfg.seed, &["synth", mid, &self.teams[team], &h.to_string(), "centroid"]);
                let omega = std::f64::consts::TAU / cfg.centroid_period;
                let mut centroid = Wander::new(cfg.centroid_spread, omega, &mut crng);
                let mut path = Vec::with_capacity(half_len);
                for _ in 0..half_len {
                    centroid.step(dt, &mut crng);
                    path.push([
                        cfg.dims.length / 2.0 + centroid.d[0].clamp(-20.0, 20.0),
                        cfg.dims.width / 2.0 + centroid.d[1].clamp(-10.0, 10.0),
                    ]);
                }
                let mut order = stints[s][h].clone();
                order.sort_unstable();
                for (player, slot, from, to) in order {
                    let info = &self.rosters[team][player];
                    let home = formation.home(slot, cfg.dims);
                    let mut prng = seed::substream(cfg.seed, &["synth", mid, &info.player_id, &h.to_string(), &from.to_string()]);
                    let rows = self.player_track(info, home, &path[from..to], attacking_positive, &mut prng);
                    let t0 = half_starts[h] + from as f64 * dt;
                    for (k, (pos, speed)) in rows.into_iter().enumerate() {
                        samples.push(RawSample {
                            match_id: mid.to_string(),
                            player_id: info.player_id.clone(),
                            team: info.team.clone(),
                            t: round_time(t0 + k as f64 * dt),
                            position: RawPosition::Pitch(pos),
                            speed,
                        });
                    }
                    presence
                        .entry((team, player))
                        .or_default()
                        .push((slot, half_starts[h] + from as f64 * dt, half_starts[h] + to as f64 * dt));
                }
            }
        }

        let duration = half_starts[1] + half_len as f64 * dt;
        let summary = MatchEvents::from_events(duration, &events)?;
        let intervals = segment_phases(&summary, 600.0);
        let mut truth = Vec::new();
        for (i, iv) in intervals.iter().enumerate() {
            let pid = ingest::phase_id(mid, i);
            for (&(team, player), spans) in &presence {
                let info = &self.rosters[team][player];
                let mut by_slot: BTreeMap<usize, f64> = BTreeMap::new();
                for &(slot, a, b) in spans {
                    let overlap = b.min(iv.end) - a.max(iv.start);
                    if overlap > 0.0 {
                        *by_slot.entry(slot).or_default() += overlap;
                    }
                }
                for (slot, secs) in by_slot {
                    let home = self.formation(team).home(slot, cfg.dims);
                    truth.push(TruthRow {
                        match_id: mid.to_string(),
                        phase_id: pid.clone(),
                        player_id: info.player_id.clone(),
                        team: info.team.clone(),
                        slot,
                        primary: info.slot == Some(slot),
                        home_x: cfg.dims.length / 2.0 + home[0] + info.style.offset[0],
                        home_y: cfg.dims.width / 2.0 + home[1] + info.style.offset[1],
                        coverage: secs / iv.len(),
                        truth_entity: format!("{}@{slot}", info.player_id),
                    });
                }
            }
        }
        Ok(SyntheticMatch {
            match_id: mid.to_string(),
            duration,
            samples,
            events,
            truth,
        })
    }

    /// Raw-frame positions (rounded to mm) and speeds from those positions.
    fn player_track<R: Rng>(
        &self,
        info: &PlayerInfo,
        home: [f64; 2],
        centroid: &[[f64; 2]],
        attacking_positive: bool,
        rng: &mut R,
    ) -> Vec<([f64; 2], f64)> {
        let cfg = &self.config;
        let (l, w) = (cfg.dims.length, cfg.dims.width);
        let dt = 1.0 / cfg.hz;
        let max_step = cfg.max_speed * dt;
        let mut motion = PlayerMotion::new(&info.style, rng);
        let mut prev: Option<[f64; 2]> = None;
        let mut raw = Vec::with_capacity(centroid.len());
        for c in centroid {
            let d = motion.step(&info.style, dt, rng);
            let base = [c[0] + home[0] + info.style.offset[0], c[1] + home[1] + info.style.offset[1]];
            let mut p = [base[0] + d[0], base[1] + d[1]];
            let hi = [l - 0.3, w - 0.3];
            for a in 0..2 {
                let q = p[a].clamp(0.3, hi[a]);
                if q != p[a] {
                    motion.correct(a, q - p[a], true);
                    p[a] = q;
                }
            }
            if let Some(q) = prev {
                let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
                let step = dx.hypot(dy);
                if step > max_step {
                    let k = max_step / step;
                    let np = [q[0] + dx * k, q[1] + dy * k];
                    motion.correct(0, np[0] - p[0], false);
                    motion.correct(1, np[1] - p[1], false);
                    p = np;
                }
            }
            prev = Some(p);
            let r = if attacking_positive { p } else { [l - p[0], w - p[1]] };
            raw.push([round_mm(r[0]), round_mm(r[1])]);
        }
        let n = raw.len();
        (0..n)
            .map(|i| {
                let (a, b) = if i == 0 {
                    (0, 1.min(n - 1))
                } else {
                    (i - 1, i)
                };
                let speed = if a == b { 0.0 } else { speed_between(raw[a], raw[b], dt) };
                (raw[i], speed)
            })
            .collect()
    }

    /// Ground truth of every match.
    pub fn ground_truth(&self) -> Result<Vec<TruthRow>, SynthError> {
        let mut out = Vec::new();
        for i in 0..self.fixtures.len() {
            out.extend(self.generate_match(i)?.truth);
        }
        Ok(out)
    }
}

fn round_mm(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn round_time(t: f64) -> f64 {
    (t * 10.0).round() / 10.0
}

/// Speed from two consecutive emitted positions, as the generator writes it.
pub fn speed_between(a: [f64; 2], b: [f64; 2], dt: f64) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1]) / dt
}

pub fn write_truth<W: Write>(writer: W, rows: &[TruthRow]) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_truth<R: Read>(reader: R) -> Result<Vec<TruthRow>, SynthError> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}
