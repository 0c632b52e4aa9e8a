use pvgan::harness::{
    copy_params, grow_network, sample_latents, stream, train, Purpose, TrainConfig, Trainer,
};
use pvgan::layers::{build_generator, NetworkSpec};
use pvgan::progressive::Mode;
use pvgan::tensor::upsample_nearest3d;
use pvgan::Tensor;

fn small_spec() -> NetworkSpec {
    NetworkSpec::scaled(4, 8).truncated(3).unwrap()
}

#[test]
fn grown_generator_starts_at_the_old_output() {
    let spec = small_spec();
    let ladder = spec.ladder().unwrap();
    let mut rng = stream(3, Purpose::Init, 0);
    let mut old = build_generator::<f64, _>(&spec, ladder[0], 2, false, &mut rng).unwrap();
    let mut grown = grow_network(&old.graph, &spec, ladder[1], 2, &mut rng).unwrap();

    let z: Tensor<f64> = sample_latents(2, 8, &mut stream(3, Purpose::Latent, 0));
    let before = old.run(z.clone()).unwrap();
    grown.set_alpha(0.0).unwrap();
    let low = grown.run(z.clone()).unwrap();
    let f = ladder[1].ratio_over(&ladder[0]).unwrap();
    assert_eq!(low, upsample_nearest3d(&before, f).unwrap());
    // The old network is untouched by the copy.
    assert_eq!(old.run(z).unwrap(), before);

    // New stage plus the previous rung's to_rgb kept for the blended path.
    let c0 = spec.stage_channels(0).unwrap();
    let old_rgb = 3 * c0 + 3;
    assert_eq!(
        grown.graph.param_count(),
        spec.generator_param_count(1).unwrap() + old_rgb
    );
    assert_eq!(
        old.graph.param_count(),
        spec.generator_param_count(0).unwrap()
    );
}

#[test]
fn copy_is_bit_exact_and_by_name() {
    let spec = small_spec();
    let ladder = spec.ladder().unwrap();
    let mut rng = stream(5, Purpose::Init, 0);
    let a = build_generator::<f64, _>(&spec, ladder[1], 1, false, &mut rng).unwrap();
    let mut b = build_generator::<f64, _>(&spec, ladder[1], 1, true, &mut rng).unwrap();
    let n = copy_params(&a.graph, &mut b.graph).unwrap();
    assert_eq!(n, a.graph.params().len());
    for (name, id) in a.graph.params() {
        let other = b.graph.find(&name).unwrap();
        assert_eq!(a.graph.value(id), b.graph.value(other), "{name}");
    }
}

fn video_cfg() -> TrainConfig {
    TrainConfig::parse_str(
        "dataset = moving_dot_video
         ladder = 4x4x4,8x8x8
         latent_dim = 8
         batch_size = 4
         images_per_phase = 16
         images_per_transition = 24
         total_images = 72
         eval_samples = 8",
    )
    .unwrap()
}

#[test]
fn zero_budget_gives_empty_report() {
    let mut cfg = video_cfg();
    cfg.total_images = 0;
    let r = train(&cfg).unwrap();
    assert_eq!((r.steps, r.images), (0, 0));
    assert!(r.loss_g.is_empty() && r.swd.is_empty() && r.phases.is_empty());
}

#[test]
fn alpha_ramps_within_transitions() {
    let r = train(&video_cfg()).unwrap();
    let modes: Vec<Mode> = r.phases.iter().map(|p| p.mode).collect();
    assert_eq!(modes, [Mode::Stable, Mode::Transition, Mode::Stable]);
    assert_eq!(r.phases[1].generator_output, vec![4, 3, 8, 8, 8]);
    let t = &r.phases[1];
    let steps = t.start_step as usize..r.phases[2].start_step as usize;
    let alphas = &r.alpha[steps];
    assert_eq!(alphas[0], 0.0);
    for w in alphas.windows(2) {
        assert!(w[1] > w[0]);
        assert!((w[1] - w[0] - 4.0 / 24.0).abs() < 1e-12);
    }
    assert!(r.alpha[r.phases[2].start_step as usize..]
        .iter()
        .all(|&a| a == 1.0));
}

#[test]
fn report_bytes_are_reproducible() {
    let cfg = video_cfg();
    let a = train(&cfg).unwrap().to_json().unwrap();
    let b = train(&cfg).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_across_a_phase_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = video_cfg();
    let mut a = Trainer::<f64>::new(cfg.clone()).unwrap();
    for _ in 0..4 {
        a.step().unwrap();
    }
    a.save_checkpoint(dir.path()).unwrap();
    let mut b = Trainer::<f64>::resume(cfg, dir.path()).unwrap();
    for _ in 0..4 {
        a.step().unwrap();
        b.step().unwrap();
    }
    assert_eq!(a.report().to_json().unwrap(), b.report().to_json().unwrap());
}

#[test]
fn single_precision_trains() {
    let mut cfg = video_cfg();
    cfg.precision = pvgan::harness::Precision::F32;
    let r = train(&cfg).unwrap();
    assert!(r.loss_g.iter().all(|v| v.is_finite()));
}
