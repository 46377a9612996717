//! Trace-driven adaptive bitrate streaming toolkit: rank-trained QoE models,
//! entropy-blended rewards, discounted-UCB trace selection and a Dual-Clip
//! PPO policy, plus classical ABR baselines to compare against.

pub mod data;
pub mod nn;
pub mod sim;
pub mod qoe;
pub mod select;
pub mod baselines;
pub mod synth;
pub mod policy;
pub mod report;

/// Any failure surfaced by the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Net(#[from] nn::NetError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Qoe(#[from] qoe::QoeError),
    #[error(transparent)]
    Select(#[from] select::SelectError),
    #[error(transparent)]
    Policy(#[from] policy::PolicyError),
    #[error(transparent)]
    Report(#[from] report::ReportError),
}
