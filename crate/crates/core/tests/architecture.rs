use lcdl::layers::{softmax, Activation, LayerKind, Mode};
use lcdl::model::{build_proposed_model, ModelConfig, SequentialModel};
use lcdl::{Error, Tensor};
use proptest::prelude::*;

/// Parameter count of the proposed model on 3x64x64 input, enumerated from
/// the layer list: conv 3x3 layers with 16/32/64/128/128 filters, a
/// 128*2*2 = 512 wide flatten, dense 256, 128 and a 4-way head.
fn enumerated_param_count() -> usize {
    let convs = [(3, 16), (16, 32), (32, 64), (64, 128), (128, 128)];
    let dense = [(512, 256), (256, 128), (128, 4)];
    convs.iter().map(|&(i, o)| i * 9 * o + o).sum::<usize>() + dense.iter().map(|&(i, o)| i * o + o).sum::<usize>()
}

#[test]
fn parameter_count_is_pinned() {
    let m = build_proposed_model::<f32>((3, 64, 64), 4, 0.5, 0).unwrap();
    assert_eq!(enumerated_param_count(), 409_764);
    assert_eq!(m.param_count(), 409_764);
    let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 16);
    assert_eq!(names[0], "conv1.weight");
    assert_eq!(names[15], "dense3.bias");
}

#[test]
fn layer_sequence_and_activations() {
    let m = build_proposed_model::<f32>((3, 64, 64), 4, 0.5, 0).unwrap();
    use LayerKind::*;
    let mut want = Vec::new();
    for _ in 0..5 {
        want.extend([Conv2d, MaxPool2d]);
    }
    want.extend([Flatten, Dense, Dropout, Dense, Dropout, Dense]);
    assert_eq!(m.kinds(), want);
    for i in [0, 2, 4, 6, 8, 11, 13] {
        assert_eq!(m.layers()[i].activation(), Activation::Relu, "layer {i}");
    }
    assert_eq!(m.layers()[15].activation(), Activation::Softmax);
}

#[test]
fn shape_chain_for_64() {
    let m = build_proposed_model::<f32>((3, 64, 64), 4, 0.5, 0).unwrap();
    let dims: Vec<Vec<usize>> = m.shape_chain().unwrap().iter().map(|s| s.dims().to_vec()).collect();
    let want: Vec<Vec<usize>> = vec![
        vec![1, 3, 64, 64],
        vec![1, 16, 64, 64],
        vec![1, 16, 32, 32],
        vec![1, 32, 32, 32],
        vec![1, 32, 16, 16],
        vec![1, 64, 16, 16],
        vec![1, 64, 8, 8],
        vec![1, 128, 8, 8],
        vec![1, 128, 4, 4],
        vec![1, 128, 4, 4],
        vec![1, 128, 2, 2],
        vec![1, 512],
        vec![1, 256],
        vec![1, 256],
        vec![1, 128],
        vec![1, 128],
        vec![1, 4],
    ];
    assert_eq!(dims, want);
}

#[test]
fn zero_image_gives_finite_logits() {
    let mut m = build_proposed_model::<f32>((3, 64, 64), 4, 0.5, 5).unwrap();
    m.set_mode(Mode::Eval);
    let logits = m.infer(&Tensor::zeros(vec![1, 3, 64, 64]).unwrap()).unwrap();
    assert_eq!(logits.dims(), [1, 4]);
    assert!(logits.all_finite());
    let p = m.predict(&Tensor::zeros(vec![1, 3, 64, 64]).unwrap()).unwrap();
    assert!((p.probs.sum() - 1.0).abs() < 1e-6);
}

#[test]
fn single_and_double_precision_agree() {
    let m32 = build_proposed_model::<f32>((3, 32, 32), 4, 0.5, 11).unwrap();
    let m64: SequentialModel<f64> = m32.cast(11).unwrap();
    let x: Vec<f32> = (0..2 * 3 * 32 * 32).map(|i| ((i * 131) % 997) as f32 / 997.0).collect();
    let x32 = Tensor::from_vec(vec![2, 3, 32, 32], x).unwrap();
    let a = softmax(&m32.infer(&x32).unwrap()).unwrap();
    let b = softmax(&m64.infer(&x32.cast()).unwrap()).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((*p as f64 - q).abs() < 1e-5, "{p} vs {q}");
    }
}

#[test]
fn input_not_divisible_by_32_is_config_error() {
    for (h, w) in [(48, 64), (64, 40), (0, 32)] {
        let err = build_proposed_model::<f32>((3, h, w), 4, 0.5, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{h}x{w}: {err}");
    }
}

#[test]
fn seeds_are_reproducible_and_distinct() {
    let a = build_proposed_model::<f32>((1, 32, 32), 4, 0.5, 1).unwrap();
    let b = build_proposed_model::<f32>((1, 32, 32), 4, 0.5, 1).unwrap();
    let c = build_proposed_model::<f32>((1, 32, 32), 4, 0.5, 2).unwrap();
    let params = |m: &SequentialModel<f32>| -> Vec<Tensor<f32>> { m.named_params().into_iter().map(|(_, t)| t.clone()).collect() };
    assert_eq!(params(&a), params(&b));
    assert_ne!(params(&a), params(&c));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flatten_width_follows_shape_law(hb in 1usize..5, wb in 1usize..5, c in prop::sample::select(vec![1usize, 3])) {
        let (h, w) = (32 * hb, 32 * wb);
        let cfg = ModelConfig { input_channels: c, input_height: h, input_width: w, ..ModelConfig::default() };
        prop_assert_eq!(cfg.flatten_width().unwrap(), 128 * hb * wb);
        let m = SequentialModel::<f32>::new(cfg, 0).unwrap();
        let chain = m.shape_chain().unwrap();
        prop_assert_eq!(chain[11].dims(), &[1, 128 * hb * wb]);
        prop_assert_eq!(chain.last().unwrap().dims(), &[1, 4]);
    }
}
