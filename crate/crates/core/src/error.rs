use thiserror::Error;

/// Errors produced while building or solving a localization scenario.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("target {target} coincides with IRS {irs} (zero distance)")]
    ZeroDistance { target: usize, irs: usize },

    #[error("position FIM of target {0} is singular; the target is observed from effectively one direction")]
    SingularFim(usize),

    #[error(
        "BS steering matrix of the active IRS set is rank deficient (IRSs {0} and {1} share a BS direction); deactivate one of them"
    )]
    RankDeficientSteering(usize, usize),

    #[error("effective reflect channel of IRS {0} is zero; the transmit beam does not reach it")]
    ZeroEffectiveChannel(usize),

    #[error("fractional denominator stayed nonpositive after {0} restarts; geometry is degenerate")]
    DegenerateGeometry(usize),

    #[error("every IRS was deactivated; no reflect path carries power")]
    AllDeactivated,

    #[error("targets are not separable in delay: {0} violating pairs")]
    NotSeparable(usize),

    #[error("QoS bracket could not be initialized: {0}")]
    Bracket(String),

    #[error("convex backend failed: {0}")]
    Backend(String),

    #[error("grid of {0} points exceeds the oracle limit")]
    GridTooLarge(u128),

    #[error("scenario generation rejected {0} consecutive layouts")]
    GenerationRejected(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
