//! Receptive fields measured by propagating a line impulse through a
//! single-channel copy of the backbone with all-ones kernels.

use skelnet::tensor::{conv2d, maxpool, relu, BackboneSpec, Tensor};

/// For each side output, the number of input columns whose line impulse
/// reaches the unit at the center of that side output's map.
fn measured_fields(spec: &BackboneSpec, size: usize) -> Vec<u32> {
    let strides = spec.side_strides();
    let mut fields = vec![0u32; strides.len()];
    for column in 0..size {
        let mut data = vec![0.0f32; size * size];
        for row in 0..size {
            data[row * size + column] = 1.0;
        }
        let mut x = Tensor::from_plane(size, size, data).unwrap();
        let mut side = 0;
        let last = spec.stages.len() - 1;
        for (s, stage) in spec.stages.iter().enumerate() {
            for conv in &stage.convs {
                let k = conv.kernel;
                let weight = Tensor::full([1, 1, k, k], 1.0);
                x = relu(
                    &conv2d(
                        &x,
                        &weight,
                        &Tensor::zeros([1, 1, 1, 1]),
                        conv.stride,
                        k / 2,
                    )
                    .unwrap(),
                );
            }
            if stage.side_output {
                let c = size / 2 / strides[side];
                if x.get(0, 0, c, c) > 0.0 {
                    fields[side] += 1;
                }
                side += 1;
            }
            if let (Some(p), true) = (stage.pool, s < last) {
                x = maxpool(&x, p.window, p.stride).unwrap().0;
            }
        }
    }
    fields
}

#[test]
fn desk_backbone_fields() {
    let spec = BackboneSpec::desk(1);
    assert_eq!(spec.receptive_fields(), vec![5, 14, 32, 68]);
    assert_eq!(measured_fields(&spec, 128), spec.receptive_fields());
}

#[test]
fn vgg16_fields_match_published_values() {
    let spec = BackboneSpec::vgg16();
    assert_eq!(spec.receptive_fields(), vec![14, 40, 92, 196]);
    assert_eq!(measured_fields(&spec, 256), spec.receptive_fields());
}
