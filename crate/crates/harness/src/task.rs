//! Point-mass reaching in a square arena.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::policy::{ToyPolicy, ACTION_DIM};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReachTask {
    /// Positions live in `[-arena, arena]^2`.
    pub arena: f64,
    pub dt: f64,
    /// Per-component action clip.
    pub a_max: f64,
    /// Success radius.
    pub eps: f64,
    pub horizon: usize,
}

impl Default for ReachTask {
    fn default() -> Self {
        Self { arena: 1.0, dt: 0.05, a_max: 1.0, eps: 0.1, horizon: 80 }
    }
}

/// Anything that maps an observation to an action.
pub trait Controller: Sync {
    fn act(&self, obs: &[f64]) -> [f64; ACTION_DIM];
}

impl Controller for ToyPolicy {
    fn act(&self, obs: &[f64]) -> [f64; ACTION_DIM] {
        ToyPolicy::act(self, obs)
    }
}

/// Unit vector toward the goal.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleController;

impl Controller for OracleController {
    fn act(&self, obs: &[f64]) -> [f64; ACTION_DIM] {
        oracle_action(obs)
    }
}

/// Always returns zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn act(&self, _obs: &[f64]) -> [f64; ACTION_DIM] {
        [0.0; ACTION_DIM]
    }
}

/// Unit vector along a displacement; zero at the origin.
pub fn oracle_action(delta: &[f64]) -> [f64; ACTION_DIM] {
    let n = delta[0].hypot(delta[1]);
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [delta[0] / n, delta[1] / n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub pos: [f64; 2],
    pub goal: [f64; 2],
}

impl State {
    /// Policy input: goal minus position.
    pub fn observation(&self) -> [f64; 2] {
        [self.goal[0] - self.pos[0], self.goal[1] - self.pos[1]]
    }

    pub fn distance(&self) -> f64 {
        let o = self.observation();
        o[0].hypot(o[1])
    }
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub success: bool,
    pub steps: usize,
    pub states: Vec<State>,
}

impl ReachTask {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.arena) && pos(self.dt) && pos(self.a_max) && pos(self.eps)) || self.horizon == 0 {
            return Err(HarnessError::Config("task arena, dt, a_max, eps and horizon must be positive".into()));
        }
        if self.eps >= self.arena {
            return Err(HarnessError::Config("success radius must be smaller than the arena".into()));
        }
        Ok(())
    }

    /// Start state with the goal outside the success radius.
    pub fn reset(&self, rng: &mut impl Rng) -> State {
        let a = self.arena;
        let pos = [rng.gen_range(-a..=a), rng.gen_range(-a..=a)];
        loop {
            let goal = [rng.gen_range(-a..=a), rng.gen_range(-a..=a)];
            let s = State { pos, goal };
            if s.distance() > self.eps {
                return s;
            }
        }
    }

    pub fn step(&self, s: &State, action: [f64; ACTION_DIM]) -> State {
        let mut pos = s.pos;
        for (p, a) in pos.iter_mut().zip(action) {
            let a = if a.is_finite() { a.clamp(-self.a_max, self.a_max) } else { 0.0 };
            *p = (*p + a * self.dt).clamp(-self.arena, self.arena);
        }
        State { pos, goal: s.goal }
    }

    /// Runs one episode, stopping at success or the horizon.
    pub fn run(&self, controller: &impl Controller, start: State, keep_states: bool) -> Episode {
        let mut s = start;
        let mut states = if keep_states { vec![s] } else { Vec::new() };
        for t in 0..self.horizon {
            s = self.step(&s, controller.act(&s.observation()));
            if keep_states {
                states.push(s);
            }
            if s.distance() <= self.eps {
                return Episode { success: true, steps: t + 1, states };
            }
        }
        Episode { success: false, steps: self.horizon, states }
    }

    /// Start state of episode `index` under `seed`; each episode owns a
    /// ChaCha stream so results do not depend on scheduling.
    pub fn episode_start(&self, seed: u64, index: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        self.reset(&mut rng)
    }
}

/// Fraction of `episodes` seeded episodes that reach the goal.
pub fn rollout_success(controller: &impl Controller, task: &ReachTask, episodes: usize, seed: u64) -> f64 {
    if episodes == 0 {
        return 0.0;
    }
    let wins: usize = (0..episodes as u64)
        .into_par_iter()
        .map(|i| usize::from(task.run(controller, task.episode_start(seed, i), false).success))
        .sum();
    wins as f64 / episodes as f64
}

/// Per-episode success flags, for paired comparisons.
pub fn rollout_outcomes(controller: &impl Controller, task: &ReachTask, episodes: usize, seed: u64) -> Vec<bool> {
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| task.run(controller, task.episode_start(seed, i), false).success)
        .collect()
}
