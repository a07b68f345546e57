#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelnet::grid::Grid;
use skelnet::gt::{OverflowPolicy, TrainingTargets, DEFAULT_RHO};
use skelnet::network::{forward_trace, total_objective, NetworkParams};
use skelnet::tensor::{BackboneSpec, ConvSpec, PoolSpec, StageSpec, Tensor};

/// Two stages of one 3×3 convolution each (4 and 6 channels) with a pool
/// in between: receptive fields 3 and 8.
pub fn toy_spec() -> BackboneSpec {
    let conv = |channels| ConvSpec {
        kernel: 3,
        channels,
        stride: 1,
    };
    BackboneSpec {
        in_channels: 1,
        stages: vec![
            StageSpec {
                convs: vec![conv(4)],
                pool: Some(PoolSpec {
                    window: 2,
                    stride: 2,
                }),
                side_output: true,
            },
            StageSpec {
                convs: vec![conv(6)],
                pool: None,
                side_output: true,
            },
        ],
    }
}

/// Toy parameters with every weight drawn away from zero, so no gradient
/// vanishes because a head starts at zero.
pub fn toy_params(seed: u64) -> NetworkParams {
    let mut params = NetworkParams::init(&toy_spec(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11);
    for p in params.parameters_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.3f32..0.3);
        }
    }
    params
}

/// A random 16×16 image with a short horizontal stroke of scale 2 and a
/// vertical stroke of scale 5.
pub fn toy_example(seed: u64) -> (Tensor, TrainingTargets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..256).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
    let image = Tensor::from_plane(16, 16, data).unwrap();
    let mut scale = Grid::new(16, 16, 0.0f32);
    for x in 3..9 {
        scale.set(x, 4, 2.0);
    }
    for y in 6..14 {
        scale.set(11, y, 5.0);
    }
    let targets = TrainingTargets::build(
        &scale,
        &toy_spec().receptive_fields(),
        DEFAULT_RHO,
        OverflowPolicy::Error,
    )
    .unwrap();
    (image, targets)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Samples skipped because a ReLU or max-pool switch lies within the step.
    pub kinks: usize,
    pub max_rel_error: f64,
    /// max |a − n| / max(1, |n|).
    pub max_unit_floor_error: f64,
    pub worst: String,
}

/// Relative error with a floor on the denominator, so gradients that are
/// zero up to float32 noise do not dominate.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic gradient of the full objective with central
/// differences of step `step` at `samples` randomly chosen scalars. A
/// sample whose perturbations flip a ReLU or a max-pool selection is not
/// differentiable within the step; it is counted as a kink and replaced by
/// another draw.
pub fn gradcheck(
    params: &NetworkParams,
    lambda: f64,
    samples: usize,
    seed: u64,
    step: f32,
    floor: f64,
) -> GradCheckReport {
    let (image, targets) = toy_example(seed);
    let (_, grads) = total_objective(params, &image, &targets, lambda).unwrap();
    let sizes: Vec<usize> = params.parameters().iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    let base_pattern = forward_trace(params, &image).unwrap().switch_pattern();
    let loss_at = |pi: usize, ei: usize, delta: f32| {
        let mut p = params.clone();
        p.parameters_mut()[pi].value.data_mut()[ei] += delta;
        let same_region = forward_trace(&p, &image).unwrap().switch_pattern() == base_pattern;
        (
            total_objective(&p, &image, &targets, lambda)
                .unwrap()
                .0
                .total,
            same_region,
        )
    };
    let mut report = GradCheckReport {
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
        max_unit_floor_error: 0.0,
        worst: String::new(),
    };
    while report.checked < samples {
        assert!(
            report.kinks < 3 * samples,
            "too many kinks: {}",
            report.kinks
        );
        let mut flat = rng.gen_range(0..total);
        let mut pi = 0;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let base = params.parameters()[pi].value.data()[flat];
        // The perturbation actually applied in float32.
        let up = (base + step) - base;
        let down = base - (base - step);
        let ((plus, plus_ok), (minus, minus_ok)) =
            (loss_at(pi, flat, step), loss_at(pi, flat, -step));
        if !(plus_ok && minus_ok) {
            report.kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (up + down) as f64;
        let analytic = grads[pi].data()[flat] as f64;
        let err = rel_error(analytic, numeric, floor);
        report.checked += 1;
        report.max_unit_floor_error = report
            .max_unit_floor_error
            .max((analytic - numeric).abs() / numeric.abs().max(1.0));
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = format!(
                "{}[{flat}]: analytic {analytic:.6e} numeric {numeric:.6e}",
                params.parameters()[pi].id
            );
        }
    }
    report
}
