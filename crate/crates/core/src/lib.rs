//! Monte Carlo tree diffusion planning over grid mazes, with a CPU surrogate sampler.

pub mod bench;
pub mod core_model;
pub mod cost_model;
pub mod planner;
pub mod sampler;
pub mod search_tree;
