pub mod checkpoint;
pub mod config;
pub mod env;
pub mod experiments;
pub mod gnn;
pub mod lru;
pub mod graph;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod robustness;
pub mod tensor;
