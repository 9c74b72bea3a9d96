//! Half rotation and position → velocity differentiation.

use super::IngestError;

/// 180° rotation of the pitch, used to make the attacking direction the same
/// in both halves.
pub fn rotate_second_half(pos: [f64; 2], length: f64, width: f64) -> [f64; 2] {
    [length - pos[0], width - pos[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DiffOptions {
    /// Nominal sampling period in seconds.
    pub dt: f64,
    /// Centered moving-average window applied to positions first; `None` or 1 disables it.
    pub smoothing_window: Option<usize>,
    /// Gaps longer than this split the series; no difference is taken across them.
    pub max_gap: f64,
}

impl Default for DiffOptions {
    fn default() -> Self {
        Self {
            dt: 0.1,
            smoothing_window: Some(5),
            max_gap: 0.5,
        }
    }
}

/// Velocities by central differences (one-sided at segment ends), after an
/// optional centered moving average of the positions.
///
/// The series is cut into contiguous segments wherever consecutive timestamps
/// are more than `max_gap` apart. A segment with a single sample gets zero
/// velocity.
pub fn differentiate(
    times: &[f64],
    positions: &[[f64; 2]],
    opts: &DiffOptions,
) -> Result<Vec<[f64; 2]>, IngestError> {
    if times.len() != positions.len() {
        return Err(IngestError::LengthMismatch(times.len(), positions.len()));
    }
    if times.len() < 3 {
        return Err(IngestError::TooFewSamples(times.len()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(IngestError::UnsortedTimes);
    }
    let mut out = vec![[0.0; 2]; times.len()];
    let mut start = 0;
    for i in 1..=times.len() {
        if i == times.len() || times[i] - times[i - 1] > opts.max_gap {
            differentiate_segment(&times[start..i], &positions[start..i], opts, &mut out[start..i]);
            start = i;
        }
    }
    Ok(out)
}

fn differentiate_segment(times: &[f64], positions: &[[f64; 2]], opts: &DiffOptions, out: &mut [[f64; 2]]) {
    let n = times.len();
    if n < 2 {
        return;
    }
    let smoothed;
    let pos = match opts.smoothing_window {
        Some(w) if w > 1 => {
            smoothed = moving_average(positions, w);
            &smoothed[..]
        }
        _ => positions,
    };
    let diff = |a: usize, b: usize| {
        let span = times[b] - times[a];
        if span <= 0.0 {
            [0.0, 0.0]
        } else {
            [(pos[b][0] - pos[a][0]) / span, (pos[b][1] - pos[a][1]) / span]
        }
    };
    out[0] = diff(0, 1);
    out[n - 1] = diff(n - 2, n - 1);
    for i in 1..n - 1 {
        out[i] = diff(i - 1, i + 1);
    }
}

/// Centered moving average whose window shrinks symmetrically near the ends,
/// so linear signals pass through unchanged.
fn moving_average(positions: &[[f64; 2]], window: usize) -> Vec<[f64; 2]> {
    let n = positions.len();
    let half = window / 2;
    let mut prefix = vec![[0.0f64; 2]; n + 1];
    for (i, p) in positions.iter().enumerate() {
        prefix[i + 1] = [prefix[i][0] + p[0], prefix[i][1] + p[1]];
    }
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let (lo, hi) = (i - h, i + h + 1);
            let len = (hi - lo) as f64;
            [
                (prefix[hi][0] - prefix[lo][0]) / len,
                (prefix[hi][1] - prefix[lo][1]) / len,
            ]
        })
        .collect()
}
