//! Synthesis of decentralized policies for probabilistic hyperproperties on MDPs.

pub mod graph;
pub mod ltl;
pub mod mdp;
pub mod automata;
pub mod hyperspec;
pub mod product;
pub mod probcheck;
pub mod synthesis;
pub mod decmdp;
pub mod benchgen;
