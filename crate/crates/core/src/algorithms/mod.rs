//! Actor-critic and n-step Q-learning agents, factored and unfactored.

mod agent;
pub mod gradients;
pub mod schedule;
pub mod training;

pub use agent::{epsilon_greedy_distribution, Agent, AgentSpec, Algorithm, ApproximatorKind, Q_EVAL_EPSILON};
pub use gradients::{actor_critic_grads, n_step_targets, q_learning_grads, Trajectory, Transition};
pub use schedule::{draw_final_epsilon, schedule_value, LinearSchedule, ScheduleKind};
pub use training::{
    build_agent_parts, run_training, run_training_with, EvalPoint, ParameterSnapshot, TrainConfig, TrainingOutcome,
    TrainingReport,
};
