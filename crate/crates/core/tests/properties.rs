use std::path::PathBuf;

use proptest::prelude::*;

use npnet::data::{split_dataset, train_count, SampleRecord};
use npnet::metrics::{iou_dice, ConfusionCounts, ImageScore, MetricsReport};
use npnet::model::{read_checkpoint, write_checkpoint, ParamStore, Parameter};
use npnet::tensor::{
    batchnorm, bilinear_resize, conv2d, softmax_cross_entropy, BatchNormState, ConvSpec,
};
use npnet::train::{adam_step, TrainConfig};
use npnet::{AttentionKind, LabelMap, Model, ModelConfig, Tensor};

fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor> {
    let len = shape.iter().product::<usize>();
    prop::collection::vec(-2.0f32..2.0, len).prop_map(move |v| Tensor::from_vec(shape, v).unwrap())
}

fn npnet_specs() -> Vec<ConvSpec> {
    let mut specs = vec![
        ConvSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 2,
            dilation: 1,
            padding: 1,
        },
        ConvSpec::same(1, 1, 1, 1, 1),
    ];
    specs.extend((1..=6).map(|d| ConvSpec::same(1, 1, 3, 1, d)));
    specs
}

#[test]
fn conv_shape_law_exhaustive() {
    for spec in npnet_specs() {
        let extent = spec.dilation * (spec.kernel - 1) + 1;
        let w = Tensor::full(spec.weight_shape(), 1.0);
        for h in extent..=64 {
            for wd in extent..=64 {
                let x = Tensor::zeros([1, 1, h, wd]);
                let y = conv2d(&x, &w, None, &spec).unwrap();
                let oh = (h + 2 * spec.padding - extent) / spec.stride + 1;
                let ow = (wd + 2 * spec.padding - extent) / spec.stride + 1;
                assert_eq!(y.shape(), [1, 1, oh, ow], "{spec:?} on {h}x{wd}");
                assert_eq!(spec.output_hw(h, wd), Some((oh, ow)));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(
        x in tensor([2, 3, 8, 8]),
        y in tensor([2, 3, 8, 8]),
        w in tensor([4, 3, 3, 3]),
        alpha in -2.0f32..2.0,
        beta in -2.0f32..2.0,
        stride in 1usize..=2,
        dilation in 1usize..=3,
    ) {
        let spec = ConvSpec::same(3, 4, 3, stride, dilation);
        let mut mix = x.scaled(alpha);
        mix.add_assign(&y.scaled(beta));
        let lhs = conv2d(&mix, &w, None, &spec).unwrap();
        let mut rhs = conv2d(&x, &w, None, &spec).unwrap().scaled(alpha);
        rhs.add_assign(&conv2d(&y, &w, None, &spec).unwrap().scaled(beta));
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-4, "diff {}", lhs.max_abs_diff(&rhs));
    }

    #[test]
    fn batchnorm_train_normalizes(x in tensor([2, 4, 5, 5]), shift in -50.0f32..50.0, scale in 0.5f32..20.0) {
        let data: Vec<f32> = x.data().iter().map(|v| v * scale + shift).collect();
        let x = Tensor::from_vec([2, 4, 5, 5], data).unwrap();
        let mut state = BatchNormState::new(4);
        let (y, _) = batchnorm(&x, &mut state).unwrap();
        for c in 0..4 {
            let vals: Vec<f64> = (0..2).flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(mean.abs() <= 1e-4, "channel {c} mean {mean}");
            prop_assert!((var - 1.0).abs() <= 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn resize_keeps_constants(value in -5.0f32..5.0, h in 1usize..12, w in 1usize..12, oh in 1usize..24, ow in 1usize..24) {
        let x = Tensor::full([1, 2, h, w], value);
        let y = bilinear_resize(&x, oh, ow).unwrap();
        prop_assert!(y.data().iter().all(|&v| v == value));
    }

    #[test]
    fn resize_same_size_is_identity(x in tensor([2, 3, 7, 5])) {
        prop_assert_eq!(bilinear_resize(&x, 7, 5).unwrap(), x);
    }

    #[test]
    fn cross_entropy_nonnegative(x in tensor([2, 3, 4, 4]), labels in prop::collection::vec(0u32..3, 32)) {
        let t = LabelMap::new(2, 4, 4, labels).unwrap();
        prop_assert!(softmax_cross_entropy(&x, &t).unwrap() >= 0.0);
        let zero = softmax_cross_entropy(&Tensor::zeros([2, 3, 4, 4]), &t).unwrap();
        prop_assert!((zero as f64 - 3f64.ln()).abs() <= 1e-6);
    }

    #[test]
    fn iou_dice_bounds_and_identity(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
        let (iou, dice) = iou_dice(&ConfusionCounts { tp, fp, fn_, tn });
        prop_assert!((0.0..=1.0).contains(&iou) && iou <= dice && dice <= 1.0);
        prop_assert!((dice - 2.0 * iou / (1.0 + iou)).abs() <= 1e-12);
    }

    #[test]
    fn aggregates_ignore_order(
        counts in prop::collection::vec((0u64..50, 0u64..50, 0u64..50, 0u64..50), 1..12),
        seed in any::<u64>(),
    ) {
        let scores: Vec<ImageScore> = counts
            .iter()
            .enumerate()
            .map(|(i, &(tp, fp, fn_, tn))| {
                let counts = ConfusionCounts { tp, fp, fn_, tn };
                let (iou, dice) = iou_dice(&counts);
                ImageScore { name: format!("img{i}"), counts, iou, dice }
            })
            .collect();
        let mut shuffled = scores.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = MetricsReport::from_scores(scores).unwrap();
        let b = MetricsReport::from_scores(shuffled).unwrap();
        prop_assert_eq!(a.mean_iou, b.mean_iou);
        prop_assert_eq!(a.mean_dice, b.mean_dice);
        prop_assert_eq!(a.pooled_iou, b.pooled_iou);
        prop_assert_eq!(a.pooled_dice, b.pooled_dice);
    }

    #[test]
    fn split_partitions_index(n in 2usize..300, fraction in 0.05f64..0.95, seed in any::<u64>()) {
        prop_assume!(train_count(n, fraction) > 0 && train_count(n, fraction) < n);
        let records: Vec<SampleRecord> = (0..n)
            .map(|i| SampleRecord {
                name: format!("s{i:04}"),
                image_path: PathBuf::from(format!("i{i}")),
                mask_path: PathBuf::from(format!("m{i}")),
                original_size: (8, 8),
                split: None,
            })
            .collect();
        let (train, test) = split_dataset(&records, fraction, seed).unwrap();
        prop_assert_eq!(train.len(), train_count(n, fraction));
        let mut names: Vec<&str> = train.iter().chain(&test).map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        prop_assert_eq!(names.len(), n);
        let (train2, test2) = split_dataset(&records, fraction, seed).unwrap();
        prop_assert_eq!(train, train2);
        prop_assert_eq!(test, test2);
    }

    #[test]
    fn adam_stays_finite(
        w in prop::collection::vec(-1e3f32..1e3, 1..16),
        g in prop::collection::vec(prop_oneof![Just(0.0f32), -1e6f32..1e6, -1e-30f32..1e-30], 16),
        steps in 1u64..20,
    ) {
        let mut store = ParamStore::new();
        let n = w.len();
        store.add(Parameter::new("w", vec![n], w));
        let cfg = TrainConfig::default();
        for t in 1..=steps {
            store.params_mut()[0].grad.data_mut().copy_from_slice(&g[..n]);
            adam_step(&mut store, t, &cfg).unwrap();
        }
        prop_assert!(store.params()[0].value.data().iter().all(|v| v.is_finite()));
    }
}

fn small_config() -> impl Strategy<Value = ModelConfig> {
    (
        1usize..=4,
        1usize..=4,
        1usize..=4,
        0usize..3,
        prop::sample::select(vec![1usize, 2, 4]),
    )
        .prop_map(|(a, b, c, att, r)| {
            ModelConfig::default()
                .with_widths([4 * a, 4 * b, 4 * c])
                .with_reduction(r)
                .with_attention(AttentionKind::ALL[att])
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn model_shapes_and_resolution(cfg in small_config(), n in 1usize..3, hb in 1usize..5, wb in 1usize..5, seed in any::<u64>()) {
        let (h, w) = (8 * hb, 8 * wb);
        let model = Model::new(cfg.clone(), seed).unwrap();
        let x = Tensor::full([n, 3, h, w], 0.5);
        prop_assert_eq!(model.forward(&x).unwrap().shape(), [n, 2, h, w]);
        prop_assert_eq!(model.bottleneck(&x).unwrap().shape(), [n, cfg.widths[2], h / 8, w / 8]);
        prop_assert_eq!(model.forward(&x).unwrap(), model.forward(&x).unwrap());
    }

    #[test]
    fn macs_linear_in_area_without_attention(cfg in small_config(), hb in 1usize..8, wb in 1usize..8, k in 2usize..4) {
        let model = Model::new(cfg.with_attention(AttentionKind::None), 0).unwrap();
        let base = model.count_macs(8 * hb, 8 * wb).unwrap();
        prop_assert_eq!(model.count_macs(8 * hb * k, 8 * wb).unwrap(), base * k as u64);
        let params = model.count_params();
        prop_assert_eq!(Model::new(model.config().clone(), 1).unwrap().count_params(), params);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise(cfg in small_config(), seed in any::<u64>()) {
        let model = Model::new(cfg, seed).unwrap();
        let bytes = write_checkpoint(&model);
        let loaded = read_checkpoint(&bytes).unwrap();
        prop_assert_eq!(loaded.config(), model.config());
        for (a, b) in loaded.store().params().iter().zip(model.store().params()) {
            prop_assert_eq!(&a.name, &b.name);
            let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same, "{} differs", a.name);
        }
        prop_assert_eq!(write_checkpoint(&loaded), bytes);
    }
}

#[test]
fn macs_near_linear_with_attention_at_dataset_sizes() {
    let model = Model::new(ModelConfig::default(), 0).unwrap();
    let base = model.count_macs(224, 224).unwrap() as f64;
    for (h, w) in [(288, 384), (512, 512), (448, 448)] {
        let expect = base * (h * w) as f64 / (224.0 * 224.0);
        let got = model.count_macs(h, w).unwrap() as f64;
        assert!(
            (got - expect).abs() / expect < 0.005,
            "{h}x{w}: {got} vs {expect}"
        );
    }
}
