pub mod case;
pub mod chronics;
pub mod env;
pub mod error;
pub mod neural;
pub mod opponent;
pub mod powerflow;
pub mod ppo;
pub mod reward;
pub mod screening;
pub mod seed;
