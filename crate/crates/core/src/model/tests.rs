use super::network::{Conv2d, Head, HeadKind, MlpBlock, PatchEmbed, Pool};
use super::*;

fn conv_spec(shape: [usize; 3]) -> ModelSpec {
    ModelSpec {
        name: "tiny".into(),
        architecture: Architecture::Conv,
        weight_source: String::new(),
        input_shape: shape,
        preprocessing: Preprocessing::identity(),
        head_layer_name: None,
        layer_aliases: [("last_conv".to_string(), "conv".to_string())].into(),
        activation_site: ActivationSite::Post,
        aggregator: Aggregator::Max,
    }
}

/// 3x3x1 input, 2x2 conv with two units: unit 0 copies the window's
/// top-left pixel, unit 1 sums the window. Linear head over 2 classes.
fn tiny_conv() -> ModelHandle {
    let weights = NetworkWeights {
        layers: vec![Layer::Conv2d(Conv2d {
            name: "conv".into(),
            in_channels: 1,
            out_channels: 2,
            kernel: 2,
            stride: 1,
            padding: 0,
            activation: Nonlinearity::Relu,
            weight: vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            bias: vec![0.0, 0.0],
        })],
        head: Head {
            name: "fc".into(),
            pool: Pool::Max,
            kind: HeadKind::Linear {
                classes: 2,
                weight: vec![1.0, 0.0, 0.0, 1.0],
                bias: vec![0.0, 0.0],
            },
        },
    };
    ModelHandle::from_parts(conv_spec([3, 3, 1]), weights).unwrap()
}

fn image(id: &str, values: [f64; 9]) -> Image {
    Image::new(id, Array3::from_shape_vec((3, 3, 1), values.to_vec()).unwrap())
}

/// 4x4x1 input, 2x2 patches (4 tokens + class token), dim 2, hidden 3.
fn tiny_transformer(activation: Nonlinearity) -> Result<ModelHandle> {
    let weights = NetworkWeights {
        layers: vec![
            Layer::PatchEmbed(PatchEmbed {
                name: "embed".into(),
                patch: 2,
                channels: 1,
                dim: 2,
                weight: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
                bias: vec![0.0, 0.0],
                class_token: vec![0.25, -0.5],
                position: None,
            }),
            Layer::MlpBlock(MlpBlock {
                name: "mlp".into(),
                dim: 2,
                hidden: 3,
                activation,
                w_in: vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
                b_in: vec![0.1, -0.2, 0.3],
                w_out: vec![0.5, -0.5, 0.25, 0.1, 0.2, 0.3],
                b_out: vec![0.0, 0.0],
            }),
        ],
        head: Head {
            name: "fc".into(),
            pool: Pool::ClassToken,
            kind: HeadKind::Linear {
                classes: 2,
                weight: vec![1.0, -1.0, -1.0, 1.0],
                bias: vec![0.0, 0.1],
            },
        },
    };
    let spec = ModelSpec {
        architecture: Architecture::Transformer,
        layer_aliases: Default::default(),
        ..conv_spec([4, 4, 1])
    };
    ModelHandle::from_parts(spec, weights)
}

fn ramp(id: &str) -> Image {
    Image::new(
        id,
        Array3::from_shape_fn((4, 4, 1), |(y, x, _)| (y * 4 + x) as f64 / 16.0),
    )
}

#[test]
fn argmax_uses_first_max_in_row_major_order() {
    let model = tiny_conv();
    let n = model.neuron("conv", 0).unwrap();
    let rec = model
        .neuron_activation(&image("a", [1.0, 3.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0]), &n)
        .unwrap();
    assert_eq!(rec.scalar, 3.0);
    assert_eq!(rec.argmax, Some(Position::Spatial { row: 0, col: 1 }));

    let zero = model.neuron_activation(&image("z", [0.0; 9]), &n).unwrap();
    assert_eq!(zero.scalar, 0.0);
    assert_eq!(zero.argmax, Some(Position::Spatial { row: 0, col: 0 }));
}

#[test]
fn scalar_equals_max_of_full_map() {
    let model = tiny_conv();
    let img = image("a", [0.1, 0.7, 0.3, 0.9, 0.2, 0.4, 0.6, 0.8, 0.5]);
    for unit in 0..2 {
        let n = model.neuron("conv", unit).unwrap();
        let UnitMap::Spatial(map) = model.unit_map(&img, &n).unwrap() else {
            panic!("conv map expected")
        };
        let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(model.neuron_activation(&img, &n).unwrap().scalar, max);
    }
}

#[test]
fn predict_is_a_distribution_and_deterministic() {
    let model = tiny_conv();
    let img = image("a", [0.1, 0.7, 0.3, 0.9, 0.2, 0.4, 0.6, 0.8, 0.5]);
    let p = model.predict(&img).unwrap();
    assert_eq!(p.len(), model.class_count());
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    assert!(p.iter().all(|v| *v >= 0.0));
    assert_eq!(p, model.predict(&img.clone()).unwrap());
}

#[test]
fn shape_mismatch_is_reported() {
    let model = tiny_conv();
    let img = Image::new("big", Array3::zeros((4, 4, 1)));
    assert!(matches!(model.predict(&img), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn resize_preprocessing_accepts_other_sizes() {
    let mut spec = conv_spec([3, 3, 1]);
    spec.preprocessing.resize = true;
    let (_, w) = tiny_conv().into_parts();
    let model = ModelHandle::from_parts(spec, w).unwrap();
    let img = Image::new("big", Array3::from_elem((6, 6, 1), 0.5));
    assert_eq!(model.predict(&img).unwrap().len(), 2);
}

#[test]
fn normalization_uses_mean_and_std() {
    let mut spec = conv_spec([3, 3, 1]);
    spec.preprocessing.mean = vec![0.5];
    spec.preprocessing.std = vec![0.25];
    let (_, w) = tiny_conv().into_parts();
    let model = ModelHandle::from_parts(spec, w).unwrap();
    let x = model.preprocess(&image("a", [1.0; 9])).unwrap();
    assert!(x.iter().all(|v| *v == 2.0));
}

#[test]
fn batch_rows_match_single_calls_and_follow_permutation() {
    let model = tiny_conv();
    let imgs = vec![
        image("a", [0.1, 0.7, 0.3, 0.9, 0.2, 0.4, 0.6, 0.8, 0.5]),
        image("b", [0.9, 0.1, 0.3, 0.0, 0.2, 0.4, 0.6, 0.1, 0.5]),
        image("c", [0.0; 9]),
    ];
    let layer = model.layer("conv").unwrap().clone();
    let m = model.batch_activations(&imgs, &layer).unwrap();
    for (i, img) in imgs.iter().enumerate() {
        for k in 0..2 {
            let n = NeuronRef { layer: layer.clone(), unit: k };
            assert_eq!(m[[i, k]], model.neuron_activation(img, &n).unwrap().scalar);
        }
    }
    let permuted = vec![imgs[2].clone(), imgs[0].clone(), imgs[1].clone()];
    let mp = model.batch_activations(&permuted, &layer).unwrap();
    assert_eq!(mp.row(0), m.row(2));
    assert_eq!(mp.row(1), m.row(0));
    assert_eq!(mp.row(2), m.row(1));
    assert!(model.batch_activations(&[], &layer).is_err());
}

#[test]
fn layer_alias_resolves() {
    let model = tiny_conv();
    assert_eq!(model.layer("last_conv").unwrap().name, "conv");
    assert!(matches!(model.layer("nope"), Err(Error::UnknownLayer(_))));
    assert!(matches!(model.neuron("conv", 2), Err(Error::InvalidNeuron { .. })));
}

#[test]
fn head_weights_read_back_and_bound_checked() {
    let model = tiny_conv();
    assert_eq!(model.classifier_head_weights(0).unwrap(), vec![1.0, 0.0]);
    assert_eq!(model.classifier_head_weights(1).unwrap(), vec![0.0, 1.0]);
    let err = model.classifier_head_weights(2).unwrap_err();
    assert!(err.to_string().contains("class out of range"));
}

#[test]
fn mlp_head_has_no_linear_weights() {
    let (spec, mut w) = tiny_conv().into_parts();
    w.head.kind = HeadKind::Mlp {
        classes: 2,
        hidden: 2,
        w1: vec![1.0, 0.0, 0.0, 1.0],
        b1: vec![0.0, 0.0],
        w2: vec![1.0, 0.0, 0.0, 1.0],
        b2: vec![0.0, 0.0],
    };
    let model = ModelHandle::from_parts(spec, w).unwrap();
    assert!(matches!(model.classifier_head_weights(0), Err(Error::NoLinearHead)));
}

#[test]
fn conv_ablation_is_local_null_and_reversible() {
    let mut model = tiny_conv();
    let imgs = [
        image("a", [0.1, 0.7, 0.3, 0.9, 0.2, 0.4, 0.6, 0.8, 0.5]),
        image("b", [0.9, 0.1, 0.3, 0.0, 0.2, 0.4, 0.6, 0.1, 0.5]),
    ];
    let n0 = model.neuron("conv", 0).unwrap();
    let n1 = model.neuron("conv", 1).unwrap();
    let before_other: Vec<f64> = imgs.iter().map(|i| model.neuron_activation(i, &n1).unwrap().scalar).collect();
    let before_pred: Vec<Vec<f64>> = imgs.iter().map(|i| model.predict(i).unwrap()).collect();
    let weights_before = model.weights().clone();
    let hash_before = model.content_hash();

    let token = model.ablate_unit(&n0).unwrap();
    assert!(model.is_ablated(&n0));
    assert_ne!(model.content_hash(), hash_before);
    for (i, img) in imgs.iter().enumerate() {
        assert_eq!(model.neuron_activation(img, &n0).unwrap().scalar, 0.0);
        assert_eq!(model.neuron_activation(img, &n1).unwrap().scalar, before_other[i]);
    }
    assert!(matches!(model.ablate_unit(&n0), Err(Error::AlreadyAblated { .. })));

    model.restore(token).unwrap();
    assert_eq!(model.weights(), &weights_before);
    assert_eq!(model.content_hash(), hash_before);
    for (i, img) in imgs.iter().enumerate() {
        assert_eq!(model.predict(img).unwrap(), before_pred[i]);
    }
}

#[test]
fn with_ablation_restores_on_error() {
    let mut model = tiny_conv();
    let before = model.weights().clone();
    let n0 = model.neuron("conv", 0).unwrap();
    let r: Result<()> = model.with_ablation(&n0, |_| Err(Error::InvalidParameter("boom".into())));
    assert!(r.is_err());
    assert_eq!(model.weights(), &before);
    assert!(!model.is_ablated(&n0));
}

#[test]
fn clones_are_independent() {
    let model = tiny_conv();
    let mut clone = model.clone();
    let n0 = clone.neuron("conv", 0).unwrap();
    let _token = clone.ablate_unit(&n0).unwrap();
    let img = image("a", [0.1, 0.7, 0.3, 0.9, 0.2, 0.4, 0.6, 0.8, 0.5]);
    assert_eq!(model.neuron_activation(&img, &n0).unwrap().scalar, 0.1f64.max(0.7).max(0.9).max(0.2));
    assert_eq!(clone.neuron_activation(&img, &n0).unwrap().scalar, 0.0);
}

#[test]
fn transformer_units_take_max_over_tokens_including_class_token() {
    let model = tiny_transformer(Nonlinearity::Relu).unwrap();
    assert_eq!(model.layers()[0].kind, LayerKind::MlpHidden);
    let img = ramp("r");
    for unit in 0..3 {
        let n = model.neuron("mlp", unit).unwrap();
        let UnitMap::Tokens(t) = model.unit_map(&img, &n).unwrap() else {
            panic!("token map expected")
        };
        assert_eq!(t.len(), 5);
        let rec = model.neuron_activation(&img, &n).unwrap();
        let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(rec.scalar, max);
        let Some(Position::Token(i)) = rec.argmax else { panic!() };
        assert_eq!(t[i], max);
    }
    // Unit 2 on the class token: relu(0.25 - 0.5 + 0.3) = 0.05 is included.
    let n2 = model.neuron("mlp", 2).unwrap();
    let UnitMap::Tokens(t) = model.unit_map(&img, &n2).unwrap() else { panic!() };
    assert!((t[0] - 0.05).abs() < 1e-12);
}

#[test]
fn transformer_ablation_zeroes_incoming_weights() {
    let mut model = tiny_transformer(Nonlinearity::Gelu).unwrap();
    let img = ramp("r");
    let n1 = model.neuron("mlp", 1).unwrap();
    let n2 = model.neuron("mlp", 2).unwrap();
    let before = model.neuron_activation(&img, &n2).unwrap().scalar;
    let pred = model.predict(&img).unwrap();
    let token = model.ablate_unit(&n1).unwrap();
    assert_eq!(model.neuron_activation(&img, &n1).unwrap().scalar, 0.0);
    assert_eq!(model.neuron_activation(&img, &n2).unwrap().scalar, before);
    model.restore(token).unwrap();
    assert_eq!(model.predict(&img).unwrap(), pred);
}

#[test]
fn nonlinearity_nonzero_at_origin_is_rejected_for_mlp_units() {
    let err = tiny_transformer(Nonlinearity::Sigmoid).unwrap_err();
    assert!(err.to_string().contains("act(0) = 0"));
}

#[test]
fn transformer_head_is_not_over_units() {
    let model = tiny_transformer(Nonlinearity::Relu).unwrap();
    assert!(model.classifier_head_weights(0).is_err());
}

#[test]
fn architecture_tag_must_match_layers() {
    let (mut spec, w) = tiny_conv().into_parts();
    spec.architecture = Architecture::Transformer;
    assert!(ModelHandle::from_parts(spec, w).is_err());
}

#[test]
fn save_and_load_round_trip() {
    let model = tiny_conv();
    let dir = tempfile::tempdir().unwrap();
    let path = model.save(dir.path(), "tiny").unwrap();
    let loaded = ModelHandle::load(&path).unwrap();
    assert_eq!(loaded.weights(), model.weights());
    assert_eq!(loaded.content_hash(), model.content_hash());
    assert_eq!(loaded.input_shape(), (3, 3, 1));
}

#[test]
fn missing_weights_are_unreadable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spec.json");
    std::fs::write(
        &path,
        r#"{"architecture":"conv","weight_source":"nope.json","input_shape":[224,224,3]}"#,
    )
    .unwrap();
    let err = ModelHandle::load(&path).unwrap_err();
    assert!(err.to_string().contains("unreadable weights"));
}
