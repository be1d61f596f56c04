use crate::channel::{build_channels, ChannelSet};
use crate::error::Result;
use crate::geometry::{delay_gradients, GeometryCoefficients, Scenario};

/// A scenario together with its derived geometry and channels.
#[derive(Debug, Clone)]
pub struct Network {
    pub scenario: Scenario,
    pub geometry: GeometryCoefficients,
    pub channels: ChannelSet,
}

impl Network {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let geometry = delay_gradients(&scenario)?;
        let channels = build_channels(&scenario)?;
        Ok(Self { scenario, geometry, channels })
    }

    pub fn num_irs(&self) -> usize {
        self.scenario.num_irs()
    }

    pub fn num_targets(&self) -> usize {
        self.scenario.num_targets()
    }
}
