//! Shared fixtures for the criterion benches.

use fwdguide_core::diffusion::NoiseSchedule;
use fwdguide_core::model::{DenoiserParams, TrainedModel};
use fwdguide_core::RngState;

/// A 20-step schedule and a randomly initialized denoiser; benchmark costs
/// do not depend on the weights being trained.
pub fn bench_lab() -> (TrainedModel, NoiseSchedule) {
    let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).expect("valid schedule");
    let mut rng = RngState::new(11);
    let model = TrainedModel {
        params: DenoiserParams::init(8, &mut rng),
        schedule_steps: 20,
    };
    (model, schedule)
}
