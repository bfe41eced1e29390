//! Fixtures shared by the kernel benchmarks.

use lis_core::sim::{simulate, SimOptions};
use lis_core::{Model, Params, ScenarioConfig, SimRecord};

pub struct Fixture {
    pub model: Model,
    pub scenario: ScenarioConfig,
    /// Plant record on the high plateau.
    pub high: SimRecord,
    /// Plant record on the low plateau.
    pub low: SimRecord,
}

impl Fixture {
    pub fn new() -> Self {
        let model = Model::new(Params::reference());
        let mut scenario = ScenarioConfig::discharge();
        scenario.t_end = 3000.0;
        let run = simulate(&model, &scenario).expect("fixture run");
        let high = run.records[1000];
        let low = run.records[3000];
        scenario.t_end = 5000.0;
        Self {
            model,
            scenario,
            high,
            low,
        }
    }

    pub fn opts(&self) -> &SimOptions {
        &self.scenario.sim
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_points_are_on_their_plateaus() {
        let f = Fixture::new();
        assert!(f.high.z.i_h > f.high.z.i_l);
        assert!(f.low.z.i_l > f.low.z.i_h);
    }
}
