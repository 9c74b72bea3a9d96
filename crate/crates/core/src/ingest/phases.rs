//! Match events and phase segmentation.

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    HalfStart,
    HalfEnd,
    Substitution,
    Dismissal,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::HalfStart => "half_start",
            EventKind::HalfEnd => "half_end",
            EventKind::Substitution => "substitution",
            EventKind::Dismissal => "dismissal",
        }
    }
}

impl std::str::FromStr for EventKind {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "half_start" => Ok(EventKind::HalfStart),
            "half_end" => Ok(EventKind::HalfEnd),
            "substitution" => Ok(EventKind::Substitution),
            "dismissal" => Ok(EventKind::Dismissal),
            other => Err(IngestError::Malformed(format!("unknown event type `{other}`"))),
        }
    }
}

/// One row of the events file. For `half_start` rows, `team` names the team
/// attacking toward +x during that half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEvent {
    pub match_id: String,
    pub kind: EventKind,
    pub t: f64,
    pub team: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Half {
    pub start: f64,
    pub end: f64,
    /// Team attacking toward +x in this half. `None` means every team attacks
    /// +x in the first half and −x afterwards.
    pub positive_x_team: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEvents {
    pub duration: f64,
    pub halves: Vec<Half>,
    /// Substitution and dismissal times, sorted.
    pub cuts: Vec<f64>,
}

impl MatchEvents {
    /// Two equal halves and no cuts.
    pub fn plain(duration: f64) -> Self {
        Self {
            duration,
            halves: vec![
                Half {
                    start: 0.0,
                    end: duration / 2.0,
                    positive_x_team: None,
                },
                Half {
                    start: duration / 2.0,
                    end: duration,
                    positive_x_team: None,
                },
            ],
            cuts: Vec::new(),
        }
    }

    /// Builds and validates the event summary of one match.
    pub fn from_events(duration: f64, events: &[MatchEvent]) -> Result<Self, IngestError> {
        if !(duration > 0.0) {
            return Err(IngestError::InvalidEvents(format!("non-positive duration {duration}")));
        }
        let mut sorted: Vec<&MatchEvent> = events.iter().collect();
        sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut halves = Vec::new();
        let mut open: Option<&MatchEvent> = None;
        let mut cuts = Vec::new();
        for ev in sorted {
            if !(ev.t >= 0.0 && ev.t <= duration) {
                return Err(IngestError::InvalidEvents(format!(
                    "{} at t={} outside match duration {duration}",
                    ev.kind.as_str(),
                    ev.t
                )));
            }
            match ev.kind {
                EventKind::HalfStart => {
                    if open.is_some() {
                        return Err(IngestError::InvalidEvents(format!("overlapping halves at t={}", ev.t)));
                    }
                    open = Some(ev);
                }
                EventKind::HalfEnd => {
                    let start = open
                        .take()
                        .ok_or_else(|| IngestError::InvalidEvents(format!("half_end without half_start at t={}", ev.t)))?;
                    if ev.t <= start.t {
                        return Err(IngestError::InvalidEvents("empty half".into()));
                    }
                    halves.push(Half {
                        start: start.t,
                        end: ev.t,
                        positive_x_team: start.team.clone(),
                    });
                }
                EventKind::Substitution | EventKind::Dismissal => {
                    if !(ev.t > 0.0 && ev.t < duration) {
                        return Err(IngestError::InvalidEvents(format!(
                            "{} at t={} not strictly inside the match",
                            ev.kind.as_str(),
                            ev.t
                        )));
                    }
                    cuts.push(ev.t);
                }
            }
        }
        if let Some(start) = open {
            halves.push(Half {
                start: start.t,
                end: duration,
                positive_x_team: start.team.clone(),
            });
        }
        if halves.is_empty() {
            let mut plain = Self::plain(duration);
            plain.cuts = cuts;
            return Ok(plain);
        }
        Ok(Self { duration, halves, cuts })
    }

    pub fn half_of(&self, t: f64) -> Option<usize> {
        self.halves.iter().position(|h| t >= h.start && t < h.end).or_else(|| {
            // the match end belongs to the last half
            let last = self.halves.len() - 1;
            (t == self.halves[last].end).then_some(last)
        })
    }

    /// Whether `team` attacks toward +x during half `half`.
    pub fn attacks_positive_x(&self, half: usize, team: &str) -> bool {
        match &self.halves[half].positive_x_team {
            Some(t) => t == team,
            None => half.is_multiple_of(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub half: usize,
    pub start: f64,
    pub end: f64,
}

impl PhaseInterval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Cuts each half at substitution/dismissal times, then absorbs intervals of
/// `min_phase` seconds or less into a neighbor within the same half (the
/// earlier one when it exists). A half never merges with another half, so a
/// short half stays a single phase.
pub fn segment_phases(events: &MatchEvents, min_phase: f64) -> Vec<PhaseInterval> {
    let mut out = Vec::new();
    for (hi, half) in events.halves.iter().enumerate() {
        let mut bounds = vec![half.start];
        bounds.extend(events.cuts.iter().copied().filter(|&c| c > half.start && c < half.end));
        bounds.push(half.end);
        bounds.dedup();
        let mut parts: Vec<PhaseInterval> = bounds
            .windows(2)
            .map(|w| PhaseInterval {
                half: hi,
                start: w[0],
                end: w[1],
            })
            .collect();
        while parts.len() > 1 {
            let Some(i) = parts.iter().position(|p| p.len() <= min_phase) else {
                break;
            };
            if i > 0 {
                parts[i - 1].end = parts[i].end;
            } else {
                parts[1].start = parts[0].start;
            }
            parts.remove(i);
        }
        out.extend(parts);
    }
    out
}
