use rand::Rng;

use super::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    LearningRate,
    Epsilon,
}

/// Linear interpolation from `start` to `end` over `horizon` steps, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
    pub horizon: u64,
}

impl LinearSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.horizon == 0 || step >= self.horizon {
            return self.end;
        }
        let frac = step as f64 / self.horizon as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Exploration starts at 1 and decays to the worker's final epsilon.
pub const EPSILON_START: f64 = 1.0;

pub fn schedule_value(kind: ScheduleKind, config: &TrainConfig, global_step: u64, final_epsilon: f64) -> f64 {
    match kind {
        ScheduleKind::LearningRate => LinearSchedule {
            start: config.lr_initial,
            end: config.lr_final,
            horizon: config.lr_anneal_steps,
        }
        .value(global_step),
        ScheduleKind::Epsilon => LinearSchedule {
            start: EPSILON_START,
            end: final_epsilon,
            horizon: config.epsilon_anneal_steps,
        }
        .value(global_step),
    }
}

/// Each worker draws its final epsilon once, uniformly from the set.
pub fn draw_final_epsilon<R: Rng + ?Sized>(set: &[f64], rng: &mut R) -> f64 {
    set[rng.gen_range(0..set.len())]
}
