mod common;

use common::synthetic_images;
use lavae::augment::{apply_spec, AugmentationSpec};
use lavae::dataset::build_augmented_dataset;
use lavae::latent::{latent_apply, latent_invert, latent_pipeline, reconstruct, Direction, TransformRef, TransformSequence};
use lavae::linalg::condition_estimate;
use lavae::loss::LossWeights;
use lavae::optim::AdaBeliefConfig;
use lavae::tensor::ModelConfig;
use lavae::training::{encode_means, stage1_train, stage2_fit_transforms, TrainLog};
use lavae::{AugmentationPair, HeadRef, Image, Lavae, Schedule};
use proptest::prelude::*;

fn fitted() -> (Lavae<f32>, lavae::AugmentedDataset) {
    let cfg = ModelConfig::reduced();
    let data = build_augmented_dataset(synthetic_images(256, cfg.image_size, 21), AugmentationPair::flips()).unwrap();
    let mut m = Lavae::<f32>::init(cfg, 21);
    let opt = AdaBeliefConfig::default();
    let s = Schedule::uniform(5, 32);
    stage1_train(&mut m, &data, &s, &LossWeights::default(), &opt, 21, &mut TrainLog::new()).unwrap();
    stage2_fit_transforms(&mut m, &data, &s, &opt, 21, &mut TrainLog::new()).unwrap();
    (m, data)
}

#[test]
fn fitted_transforms_invert_back_to_the_input() {
    let (m, data) = fitted();
    let m: Lavae<f64> = m.cast();
    let d = m.config.latent_dim;
    let z = encode_means(&m.encoder, &data.originals).unwrap();
    for l in &m.transforms {
        let cond = condition_estimate(&l.matrix);
        assert!(cond < 1e6, "condition estimate {cond}");
        let inv = latent_invert(l).unwrap();
        for row in z.chunks(d) {
            let back = latent_apply(&inv, &latent_apply(l, row));
            let scale = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (x, y) in back.iter().zip(row) {
                assert!((x - y).abs() <= 1e-4 * scale, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn resolved_sequence_matches_stepwise_application() {
    let (m, data) = fitted();
    let m: Lavae<f64> = m.cast();
    let seq = TransformSequence::forward(&[TransformRef::Aug1, TransformRef::Aug2]).then(TransformRef::Aug1, Direction::Inverse);
    let collapsed = seq.resolve(&m.transforms).unwrap();
    let inv1 = latent_invert(&m.transforms[0]).unwrap();
    let z = encode_means(&m.encoder, &data.originals).unwrap();
    for row in z.chunks(m.config.latent_dim).take(32) {
        let stepwise = latent_apply(&inv1, &latent_apply(&m.transforms[1], &latent_apply(&m.transforms[0], row)));
        for (a, b) in latent_apply(&collapsed, row).iter().zip(&stepwise) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn empty_sequence_is_plain_reconstruction() {
    let (m, data) = fitted();
    for img in data.originals.images().take(16) {
        let direct = m.decode_probs(&HeadRef::Base, &m.encode_mean(&img.data).unwrap()).unwrap();
        let piped = latent_pipeline(&m, &img, &TransformSequence::default(), &HeadRef::Base).unwrap();
        assert_eq!(piped.data, direct);
        assert_eq!(reconstruct(&m, &img, &HeadRef::Base).unwrap(), piped);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flips_are_exact_involutions(pixels in prop::collection::vec(0.0f32..=1.0, 28 * 28)) {
        let img = Image::new(28, 28, pixels);
        for spec in [AugmentationSpec::FlipLr, AugmentationSpec::FlipUd] {
            let twice = apply_spec(&spec, &apply_spec(&spec, &img).unwrap()).unwrap();
            prop_assert_eq!(&twice, &img);
        }
    }
}
