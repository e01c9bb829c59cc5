//! Probabilistic population projection for countries with generalized
//! HIV/AIDS epidemics.

pub mod ccmpp;
pub mod demog;
pub mod e0model;
pub mod hivmlt;
pub mod io;
pub mod persist;
pub mod pipeline;
pub mod prevalence;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod validate;
