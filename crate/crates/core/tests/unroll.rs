//! Unroll behavior with a trained model: stride effects and end-to-end
//! differentiability of the composed guidance objective.

use fwdguide_core::autodiff::{self, SumOf};
use fwdguide_core::diffusion::{sample_to_zero, NoiseSchedule};
use fwdguide_core::eval::make_moons;
use fwdguide_core::guidance::{GuidanceRows, Objective};
use fwdguide_core::model::{train, DenoiserParams, TrainConfig, TrainedModel};
use fwdguide_core::RngState;
use std::sync::OnceLock;

fn trained() -> &'static (TrainedModel, NoiseSchedule) {
    static MODEL: OnceLock<(TrainedModel, NoiseSchedule)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let schedule = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
        let data = make_moons(400, 0.02, 7).unwrap();
        let cfg = TrainConfig { steps: 800, batch: 64, lr: 1e-3, seed: 7, log_every: 100, time_freqs: 8 };
        let (params, _) = train(&data, &schedule, &cfg).unwrap();
        (TrainedModel { params, schedule_steps: 20 }, schedule)
    })
}

#[test]
fn stride_changes_the_unroll_output() {
    let (model, s) = trained();
    let obj = Objective::Circle { target: 0.3 };
    let mut rng = RngState::new(99);
    let z = rng.gaussian(&[256, 2]).unwrap();
    let fine = sample_to_zero(model, &z, 20, 1, s).unwrap();
    let coarse = sample_to_zero(model, &z, 20, 2, s).unwrap();
    assert_ne!(fine, coarse);
    assert!(fine.all_finite() && coarse.all_finite());
    let loss_fine = obj.eval(&fine).unwrap();
    let loss_coarse = obj.eval(&coarse).unwrap();
    // Recorded oracle values for this fixture. The two strides land within
    // a few percent of each other; the unguided unroll approximates the
    // data distribution, so the circle loss does not order the strides.
    assert!((loss_fine - 2.61958).abs() < 0.03, "fine loss drifted: {loss_fine}");
    assert!((loss_coarse - 2.51960).abs() < 0.03, "coarse loss drifted: {loss_coarse}");
    assert!((loss_fine - loss_coarse).abs() / loss_coarse < 0.1);
}

#[test]
fn engines_agree_through_the_unroll_at_all_depths() {
    // Engine equivalence is a property of the program, not the weights;
    // random weights exercise it as well as trained ones.
    let s = NoiseSchedule::linear(20, 1e-4, 0.02).unwrap();
    let mut rng = RngState::new(5);
    let model = TrainedModel { params: DenoiserParams::init(8, &mut rng), schedule_steps: 20 };
    let obj = Objective::Circle { target: 0.3 };
    for t in [1usize, 5, 20] {
        let program = GuidanceRows { model: &model, objective: &obj, t, stride: 1, schedule: &s };
        let scalar = SumOf(&program);
        let x = rng.gaussian(&[3, 2]).unwrap().scale(0.8);
        let v = rng.gaussian(&[3, 2]).unwrap();
        let (_, dir) = autodiff::jvp(&scalar, &x, &v).unwrap();
        let g = autodiff::grad(&scalar, &x).unwrap();
        let want = g.dot(&v).unwrap();
        assert!(
            (dir - want).abs() <= 1e-9 * (1.0 + want.abs()),
            "t={t}: jvp {dir} vs <grad, v> {want}"
        );
        let fd = autodiff::finite_diff(&scalar, &x, 1e-5).unwrap();
        for (a, b) in g.data().iter().zip(fd.data()) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "t={t}: {a} vs {b}");
        }
    }
}
