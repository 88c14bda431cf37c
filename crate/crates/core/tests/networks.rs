use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthmix::autodiff::{grad_check, Element, Mode, ScalarFunction, Tape, Tensor, Var};
use synthmix::checkpoint::Checkpoint;
use synthmix::cnn::{classify, train_cnn, Cnn, TrainConfig};
use synthmix::data::{stack_records, ImageRecord, Label, Source};
use synthmix::dcgan::{
    disc_loss, gen_loss, generate_synthetic, sample, train_dcgan, Discriminator, DiscriminatorSpec,
    GanTrainConfig, Generator, GeneratorSpec,
};
use synthmix::sweep::make_toy_dataset;
use synthmix::{Error, Result};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scalar<T: Element>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v)[0].as_f64()
}

#[test]
fn generator_shape_range_and_determinism() {
    let spec = GeneratorSpec::standard(100);
    assert_eq!(spec.widths, vec![512, 256, 128, 64]);
    let z = Tensor::<f32>::randn([4, 100], 0.0, 1.0, &mut rng(1));
    let mut a = Generator::<f32>::new(spec.clone(), &mut rng(2)).unwrap();
    let mut b = Generator::<f32>::new(spec, &mut rng(2)).unwrap();
    let ya = sample(&mut a, &z).unwrap();
    assert_eq!(ya.shape(), &[4, 3, 64, 64]);
    assert!(ya.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(ya.data(), sample(&mut b, &z).unwrap().data());
}

#[test]
fn discriminator_shape_range_and_determinism() {
    let x = Tensor::<f32>::randn([4, 3, 64, 64], 0.0, 0.5, &mut rng(3));
    let run = |seed| {
        let mut d =
            Discriminator::<f32>::new(DiscriminatorSpec::standard(), &mut rng(seed)).unwrap();
        let mut tape = Tape::new();
        let vars = d.bind(&mut tape);
        let xv = tape.constant(&x);
        let y = d.forward(&mut tape, &vars, xv, Mode::Train).unwrap();
        tape.tensor(y)
    };
    let y = run(4);
    assert_eq!(y.shape(), &[4, 1]);
    assert!(y.data().iter().all(|&p| p > 0.0 && p < 1.0));
    assert_eq!(y.data(), run(4).data());
}

fn probs(v: &[f64]) -> Tensor<f64> {
    Tensor::new([v.len(), 1], v.to_vec()).unwrap()
}

#[test]
fn adversarial_losses_match_direct_formulas() {
    let mut tape = Tape::<f64>::new();
    let half = tape.constant(&probs(&[0.5; 8]));
    let d = disc_loss(&mut tape, half, half).unwrap();
    let g = gen_loss(&mut tape, half).unwrap();
    assert!((scalar(&tape, d) - 2.0 * 2f64.ln()).abs() < 1e-6);
    assert!((scalar(&tape, g) - 2f64.ln()).abs() < 1e-6);

    let real = [0.91, 0.37, 0.66, 0.05, 0.72];
    let fake = [0.12, 0.58, 0.33, 0.97, 0.44];
    let mut tape = Tape::<f64>::new();
    let (r, f) = (tape.constant(&probs(&real)), tape.constant(&probs(&fake)));
    let d = disc_loss(&mut tape, r, f).unwrap();
    let g = gen_loss(&mut tape, f).unwrap();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let eq3 = -(mean(real.iter().map(|p| p.ln()).collect())
        + mean(fake.iter().map(|p| (1.0 - p).ln()).collect()));
    let eq4 = -mean(fake.iter().map(|p| p.ln()).collect());
    assert!((scalar(&tape, d) - eq3).abs() < 1e-6);
    assert!((scalar(&tape, g) - eq4).abs() < 1e-6);

    let mut tape = Tape::<f64>::new();
    let (one, zero) = (
        tape.constant(&probs(&[1.0; 3])),
        tape.constant(&probs(&[0.0; 3])),
    );
    let perfect = disc_loss(&mut tape, one, zero).unwrap();
    let fooled = gen_loss(&mut tape, one).unwrap();
    let worst = disc_loss(&mut tape, zero, one).unwrap();
    assert!(scalar(&tape, perfect) < 1e-6 && scalar(&tape, fooled) < 1e-6);
    assert!(scalar(&tape, worst).is_finite());
}

#[test]
fn bce_matches_direct_formula() {
    let p = [0.83, 0.21, 0.5, 0.64];
    let t = [1.0, 0.0, 1.0, 0.0];
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(&Tensor::new([4], p.to_vec()).unwrap());
    let l = tape.bce(v, &t).unwrap();
    let direct = -p
        .iter()
        .zip(&t)
        .map(|(p, t)| t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        .sum::<f64>()
        / 4.0;
    assert!((scalar(&tape, l) - direct).abs() < 1e-7);
    let half = tape.constant(&Tensor::new([1], vec![0.5]).unwrap());
    let l = tape.bce(half, &[1.0]).unwrap();
    assert!((scalar(&tape, l) - 2f64.ln()).abs() < 1e-7);
    let exact = tape.constant(&Tensor::new([2], vec![1.0, 0.0]).unwrap());
    let l = tape.bce(exact, &[1.0, 0.0]).unwrap();
    assert!(scalar(&tape, l) < 1e-6);
    assert!(matches!(tape.bce(exact, &[1.0]), Err(Error::Contract(_))));
}

fn toy_class(n: usize, label: Label) -> Vec<ImageRecord> {
    make_toy_dataset(n, 16, 5)
        .unwrap()
        .into_iter()
        .filter(|r| r.label == label)
        .collect()
}

fn tiny_gan(epochs: usize) -> GanTrainConfig {
    GanTrainConfig {
        epochs,
        batch_size: 8,
        z_dim: 8,
        base_width: 2,
        sample_epochs: vec![1],
        sample_count: 4,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn dcgan_bookkeeping_isolation_and_determinism() {
    let tumor = toy_class(20, Label::Tumor);
    let one = train_dcgan(&tumor, &tiny_gan(1)).unwrap();
    assert_eq!(one.report.losses.len(), 1);
    let a = train_dcgan(&tumor, &tiny_gan(2)).unwrap();
    assert_eq!(a.report.losses.len(), 2);
    assert_eq!((a.report.disc_steps, a.report.gen_steps), (2 * 3, 2 * 3));
    assert!(a
        .report
        .losses
        .iter()
        .all(|l| l.gen_loss.is_finite() && l.disc_loss.is_finite()));
    let tumor_origins: std::collections::HashSet<_> =
        tumor.iter().map(|r| r.origin.clone()).collect();
    assert!(a
        .report
        .training_origins
        .iter()
        .all(|o| tumor_origins.contains(o)));
    assert_eq!(a.report.samples.len(), 1);
    let b = train_dcgan(&tumor, &tiny_gan(2)).unwrap();
    assert_eq!(a.report.losses, b.report.losses);

    let mut mixed = tumor.clone();
    mixed.extend(toy_class(2, Label::Healthy));
    assert!(matches!(
        train_dcgan(&mixed, &tiny_gan(1)),
        Err(Error::Contract(_))
    ));
    assert!(train_dcgan(&[], &tiny_gan(1)).is_err());

    let mut g = a.generator;
    let s1 = generate_synthetic(&mut g, 3, Label::Tumor, 4).unwrap();
    let s2 = generate_synthetic(&mut g, 3, Label::Tumor, 4).unwrap();
    assert_eq!(s1, s2);
    assert!(s1.iter().all(|r| r.source == Source::Synthetic
        && r.label == Label::Tumor
        && r.pixels.len() == 3 * 64 * 64));
    assert!(s1
        .iter()
        .all(|r| r.pixels.iter().all(|v| (-1.0..=1.0).contains(v))));
    assert_eq!(
        generate_synthetic(&mut g, 1, Label::Tumor, 4)
            .unwrap()
            .len(),
        1
    );
    assert!(generate_synthetic(&mut g, 0, Label::Tumor, 4).is_err());

    let bytes = g.to_checkpoint(11, Some("tumor")).to_bytes();
    let mut restored = Generator::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(
        generate_synthetic(&mut restored, 3, Label::Tumor, 4).unwrap(),
        s1
    );
}

#[test]
fn cnn_shapes_count_and_prediction_invariance() {
    let net = Cnn::<f32>::new(0.5, &mut rng(6)).unwrap();
    assert_eq!(
        net.parameter_count(),
        Cnn::<f32>::analytic_parameter_count()
    );
    assert_eq!(net.parameter_count(), 1_142_081);
    let x = Tensor::<f32>::randn([5, 3, 64, 64], 0.0, 0.5, &mut rng(7));
    let p = net.predict_tensor(&x).unwrap();
    assert_eq!(p.len(), 5);
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(p, net.predict_tensor(&x).unwrap());
    for (i, &pi) in p.iter().enumerate() {
        let single = x.slice_outer(i, i + 1).unwrap();
        let q = net.predict_tensor(&single).unwrap();
        assert!((q[0] - pi).abs() < 1e-6);
    }
    let dup = Tensor::concat_outer(&[x.slice_outer(2, 3).unwrap(), x.slice_outer(2, 3).unwrap()])
        .unwrap();
    let d = net.predict_tensor(&dup).unwrap();
    assert_eq!(d[0], d[1]);
    let bad = Tensor::<f32>::zeros([1, 1, 64, 64]);
    assert!(matches!(net.predict_tensor(&bad), Err(Error::Contract(_))));

    let bytes = net.to_checkpoint(6).to_bytes();
    let restored = Cnn::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(restored.predict_tensor(&x).unwrap(), p);
}

#[test]
fn classify_threshold_rule() {
    assert_eq!(classify(0.51, 0.5), Label::Tumor);
    assert_eq!(classify(0.49, 0.5), Label::Healthy);
    assert_eq!(classify(0.5, 0.5), Label::Healthy);
    assert_eq!(classify(1e-6, 0.0), Label::Tumor);
}

/// Loss of the full classifier on two images as a function of one parameter tensor.
struct CnnLoss {
    net: Cnn<f64>,
    images: Tensor<f64>,
    targets: Vec<f64>,
    which: usize,
}

impl ScalarFunction for CnnLoss {
    fn eval<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let net = self.net.cast::<T>();
        let mut vars = net
            .params()
            .tensors()
            .iter()
            .map(|t| tape.constant(t))
            .collect::<Vec<_>>();
        vars[self.which] = x;
        let img = tape.constant(&self.images.cast());
        let p = net.forward(tape, &vars, img, Mode::Train, 99)?;
        let p = tape.flatten(p)?;
        let p = tape.reshape(p, &[2])?;
        let t: Vec<T> = self.targets.iter().map(|&v| T::from_f64(v)).collect();
        tape.bce(p, &t)
    }
}

#[test]
fn full_classifier_gradient_passes_finite_differences() {
    let net = Cnn::<f64>::new(0.5, &mut rng(8)).unwrap();
    let images = Tensor::<f64>::randn([2, 3, 64, 64], 0.0, 0.5, &mut rng(9));
    for which in [1, 3, 8, 9] {
        let f = CnnLoss {
            net: net.clone(),
            images: images.clone(),
            targets: vec![1.0, 0.0],
            which,
        };
        let point = net.params().tensors()[which].clone();
        // Small step: a wider one lets some of the 2x64x64 pre-activations cross a ReLU or pooling kink.
        let err = grad_check::<f64, _>(&f, &point, 1e-5).unwrap();
        assert!(err < 1e-4, "{}: {err:e}", net.params().names()[which]);
    }
}

fn toy_train_val(per_class: usize, seed: u64) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
    let all = make_toy_dataset(per_class, 32, seed).unwrap();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, r) in all.into_iter().enumerate() {
        if i % per_class < per_class * 4 / 5 {
            train.push(r);
        } else {
            val.push(r);
        }
    }
    (train, val)
}

#[test]
fn cnn_training_steps_and_determinism() {
    let (train, val) = toy_train_val(80, 1);
    let config = TrainConfig {
        epochs: 1,
        seed: 3,
        patience: None,
        ..Default::default()
    };
    let train128 = &train[..128];
    let (_, h) = train_cnn(train128, &val, &config).unwrap();
    assert_eq!(h.optimizer_steps, 2);
    assert_eq!(h.epochs.len(), 1);
    let (_, again) = train_cnn(train128, &val, &config).unwrap();
    assert_eq!(h, again);
    let e = h.epochs[0];
    assert!((0.0..=1.0).contains(&e.train_acc) && (0.0..=1.0).contains(&e.val_acc));
    assert!(matches!(
        train_cnn(&train, &train[..4], &config),
        Err(Error::Contract(_))
    ));
    let (x, t) = stack_records::<f32>(&train.iter().take(3).collect::<Vec<_>>()).unwrap();
    assert_eq!((x.shape(), t.len()), (&[3usize, 3, 64, 64][..], 3));
}

#[test]
fn training_loss_falls_over_ten_epochs() {
    let (train, val) = toy_train_val(64, 2);
    let mut drops = Vec::new();
    for seed in 0..5 {
        let config = TrainConfig {
            epochs: 10,
            seed,
            patience: None,
            ..Default::default()
        };
        let (_, h) = train_cnn(&train, &val, &config).unwrap();
        drops.push(h.epochs[9].train_loss - h.epochs[0].train_loss);
    }
    drops.sort_by(f64::total_cmp);
    assert!(drops[2] < 0.0, "{drops:?}");
}
