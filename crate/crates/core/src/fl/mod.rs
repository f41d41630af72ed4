//! Federated round loop: client sampling, local training, weighted
//! aggregation and evaluation.

pub mod checkpoint;
mod client;
mod config;
mod server;

pub use client::{local_train, ClientUpdate, LocalTraining, LossSummary};
pub use config::ExperimentConfig;
pub use server::{
    aggregate, clients_per_round, evaluate, evaluate_model, initial_params, run_experiment, sample_clients,
    train_centralized, Evaluation, ExperimentOutcome, RoundReport, Simulation,
};
