//! Per-player style parameters and the smooth stochastic motion model.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// How one player moves around a formation slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleProfile {
    /// Personal shift of the slot home, m.
    pub offset: [f64; 2],
    /// Stationary standard deviation of the wandering around home, m.
    pub spread: [f64; 2],
    /// Angular frequency of the wandering, rad/s.
    pub omega: f64,
    /// Sprints per second.
    pub sprint_rate: f64,
    pub sprint_speed_mean: f64,
    pub sprint_speed_sd: f64,
    /// Preferred sprint heading in the attack-normalized frame, rad.
    pub heading: f64,
    /// Probability that a sprint follows the preferred heading (else uniform).
    pub heading_bias: f64,
    pub heading_sd: f64,
    /// Mean sprint duration, s.
    pub sprint_duration: f64,
}

impl StyleProfile {
    /// Draws a profile. `separation` scales how far players deviate from the
    /// population centre; at 0 every player has the same style.
    pub fn sample<R: Rng>(separation: f64, rng: &mut R) -> Self {
        let n = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
        let s = separation.max(0.0);
        let offset = [(3.0 * s * n(rng)).clamp(-8.0, 8.0), (3.0 * s * n(rng)).clamp(-8.0, 8.0)];
        let spread = [5.0 * (0.25 * s * n(rng)).exp(), 4.5 * (0.25 * s * n(rng)).exp()];
        let omega = TAU / 40.0 * (0.2 * s * n(rng)).exp();
        let sprint_rate = 1.2 / 60.0 * (0.5 * s * n(rng)).exp();
        let sprint_speed_mean = (6.5 + 0.8 * s * n(rng)).clamp(4.8, 9.5);
        let heading = rng.random_range(-PI..PI);
        let heading_bias = (0.6 * s * rng.random_range(0.3..1.0)).clamp(0.0, 0.9);
        let sprint_duration = 2.5 * (0.2 * s * n(rng)).exp();
        Self {
            offset,
            spread,
            omega,
            sprint_rate,
            sprint_speed_mean,
            sprint_speed_sd: 0.6,
            heading,
            heading_bias,
            heading_sd: 0.5,
            sprint_duration,
        }
    }
}

/// Critically damped second-order process driven by white noise, one per
/// axis: smooth velocities and a stationary, mean-reverting position.
#[derive(Debug, Clone)]
pub struct Wander {
    pub d: [f64; 2],
    pub w: [f64; 2],
    sd: [f64; 2],
    omega: f64,
}

impl Wander {
    /// Starts from the stationary distribution.
    pub fn new<R: Rng>(sd: [f64; 2], omega: f64, rng: &mut R) -> Self {
        let mut d = [0.0; 2];
        let mut w = [0.0; 2];
        for a in 0..2 {
            d[a] = sd[a] * Distribution::<f64>::sample(&StandardNormal, rng);
            w[a] = sd[a] * omega * Distribution::<f64>::sample(&StandardNormal, rng);
        }
        Self { d, w, sd, omega }
    }

    pub fn step<R: Rng>(&mut self, dt: f64, rng: &mut R) {
        let om = self.omega;
        for a in 0..2 {
            // stationary var(d) = sigma² / (4 ζ ω³) with ζ = 1
            let sigma = self.sd[a] * (4.0 * om.powi(3)).sqrt();
            let xi: f64 = StandardNormal.sample(rng);
            self.w[a] += (-om * om * self.d[a] - 2.0 * om * self.w[a]) * dt + sigma * dt.sqrt() * xi;
            self.d[a] += self.w[a] * dt;
        }
    }
}

/// A player's motion relative to their (shifted) slot home.
#[derive(Debug, Clone)]
pub struct PlayerMotion {
    pub wander: Wander,
    sprint_left: f64,
    sprint_vel: [f64; 2],
}

impl PlayerMotion {
    pub fn new<R: Rng>(style: &StyleProfile, rng: &mut R) -> Self {
        Self {
            wander: Wander::new(style.spread, style.omega, rng),
            sprint_left: 0.0,
            sprint_vel: [0.0; 2],
        }
    }

    /// Advances one step; returns the displacement from home.
    pub fn step<R: Rng>(&mut self, style: &StyleProfile, dt: f64, rng: &mut R) -> [f64; 2] {
        if self.sprint_left <= 0.0 && rng.random::<f64>() < style.sprint_rate * dt {
            let heading = if rng.random::<f64>() < style.heading_bias {
                style.heading + style.heading_sd * Distribution::<f64>::sample(&StandardNormal, rng)
            } else {
                rng.random_range(-PI..PI)
            };
            let speed = Normal::new(style.sprint_speed_mean, style.sprint_speed_sd)
                .expect("positive sd")
                .sample(rng)
                .clamp(4.2, 10.5);
            self.sprint_vel = [speed * heading.cos(), speed * heading.sin()];
            self.sprint_left = style.sprint_duration * rng.random_range(0.6..1.4);
        }
        if self.sprint_left > 0.0 {
            self.sprint_left -= dt;
            self.wander.w = self.sprint_vel;
            for a in 0..2 {
                self.wander.d[a] += self.wander.w[a] * dt;
            }
        } else {
            self.wander.step(dt, rng);
        }
        self.wander.d
    }

    /// Pulls the process back after the caller clipped its position.
    pub fn correct(&mut self, axis: usize, by: f64, stop: bool) {
        self.wander.d[axis] += by;
        if stop {
            self.wander.w[axis] = 0.0;
            self.sprint_left = 0.0;
        }
    }
}
