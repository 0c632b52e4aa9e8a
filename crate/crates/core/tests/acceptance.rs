//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvgan::gradcheck::{check_gradient, check_second_order, run_op_cases, GradCheckConfig};
use pvgan::harness::{train, TrainConfig};
use pvgan::layers::{mlp, NetworkSpec};
use pvgan::losses::{
    exact_wd_1d, gradient_penalty, swd, swgan_objective, LossConfig, PenaltySpace, ProjectionSet,
};
use pvgan::metrics::{
    frechet_distance, gaussian_stats, inception_score, GaussianStats, ProbMatrix,
};
use pvgan::progressive::{advance, alpha, phase_table, GrowthSchedule, Mode, PhaseState};
use pvgan::{Graph, NodeId, Tensor, Tensor64};

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> std::result::Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let cfg = GradCheckConfig {
        probes: 100,
        eps: 1e-5,
        tolerance: 1e-4,
        ..Default::default()
    };
    let reports = run_op_cases(None, &cfg).map_err(|e| e.to_string())?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.to_string())
        .collect();
    ensure(failed.is_empty(), failed.join("; "))?;
    for net in [
        "generator_b4",
        "discriminator_b4",
        "gan_b4",
        "gan_b4_transition",
    ] {
        ensure(
            reports.iter().any(|r| r.name == net),
            format!("network case {net} missing"),
        )?;
    }
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    within(t.elapsed(), 120)?;
    Ok(format!(
        "{} cases, worst rel err {worst:.2e}, {:.1}s",
        reports.len(),
        t.elapsed().as_secs_f64()
    ))
}

struct PenaltyCase {
    name: &'static str,
    graph: Graph<f64>,
    penalty: NodeId,
    /// Scalar whose parameter gradient is the penalty's inner first-order gradient.
    inner: NodeId,
    params: Vec<NodeId>,
}

fn bind_inputs(
    g: &mut Graph<f64>,
    rng: &mut ChaCha8Rng,
    b: usize,
) -> (NodeId, NodeId, NodeId, NodeId) {
    let mut input = |g: &mut Graph<f64>, name: &str, dims: &[usize], lo: f64, hi: f64| {
        let id = g.input(name, dims).unwrap();
        let n: usize = dims.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        g.set_value(id, Tensor::from_f64(dims.to_vec(), &v).unwrap())
            .unwrap();
        id
    };
    let xr = input(g, "x_real", &[b, 2], -2.0, 2.0);
    let xf = input(g, "x_fake", &[b, 2], -2.0, 2.0);
    let ux = input(g, "u_x", &[b], 0.0, 1.0);
    let uy = input(g, "u_y", &[b], 0.0, 1.0);
    (xr, xf, ux, uy)
}

fn penalty_cases() -> Vec<PenaltyCase> {
    let mut out = Vec::new();
    let b = 5;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut g = Graph::new();
    let (xr, xf, ux, _) = bind_inputs(&mut g, &mut rng, b);
    let mut init = rng.clone();
    let mut critic = |g: &mut Graph<f64>, x: NodeId| mlp(g, x, &[8, 8, 1], 0.2, "d", &mut init);
    let penalty = gradient_penalty(&mut g, &mut critic, xr, xf, ux, 1.0).unwrap();
    let s = critic(&mut g, xr).unwrap();
    let inner = g.sum_all(s);
    let params = g.params().into_iter().map(|(_, id)| id).collect();
    out.push(PenaltyCase {
        name: "critic gradient penalty",
        graph: g,
        penalty,
        inner,
        params,
    });

    for space in [PenaltySpace::Encoding, PenaltySpace::Data] {
        for which in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(22);
            let mut g = Graph::new();
            let (xr, xf, ux, uy) = bind_inputs(&mut g, &mut rng, b);
            let mut init = rng.clone();
            let proj = ProjectionSet::<f64>::random(4, 0.2, &mut rng)
                .register(&mut g)
                .unwrap();
            let mut enc =
                |g: &mut Graph<f64>, x: NodeId| mlp(g, x, &[8, 8, 4], 0.2, "d.enc", &mut init);
            let cfg = LossConfig {
                lambda1: 1.0,
                lambda2: 1.0,
                penalty_space: space,
                ..Default::default()
            };
            let l = swgan_objective(&mut g, &mut enc, &proj, xr, xf, ux, uy, &cfg).unwrap();
            let e = enc(&mut g, xr).unwrap();
            let d = proj.apply(&mut g, e).unwrap();
            let inner = g.sum_all(d);
            let all: Vec<(String, NodeId)> = g.params();
            let (name, penalty, params) = if which == 0 {
                let enc_only = all
                    .iter()
                    .filter(|(n, _)| n.starts_with("d."))
                    .map(|(_, id)| *id)
                    .collect();
                ("encoder penalty", l.penalty_encoder, enc_only)
            } else {
                (
                    "projection penalty",
                    l.penalty_projection,
                    all.iter().map(|(_, id)| *id).collect(),
                )
            };
            let name = match (name, space) {
                ("encoder penalty", PenaltySpace::Data) => continue,
                ("encoder penalty", _) => "encoder penalty",
                (_, PenaltySpace::Encoding) => "projection penalty (encoding space)",
                (_, PenaltySpace::Data) => "projection penalty (data space)",
            };
            out.push(PenaltyCase {
                name,
                graph: g,
                penalty,
                inner,
                params,
            });
        }
    }
    out
}

fn second_order() -> Outcome {
    let t = Instant::now();
    let cfg = GradCheckConfig {
        probes: 100,
        tolerance: 1e-3,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for mut case in penalty_cases() {
        let count = case
            .params
            .iter()
            .map(|&p| case.graph.dims(p).iter().product::<usize>())
            .sum::<usize>();
        ensure(count <= 200, format!("{}: {count} parameters", case.name))?;
        let a = check_gradient(&mut case.graph, case.penalty, &case.params, case.name, &cfg)
            .map_err(|e| e.to_string())?;
        let b = check_second_order(&mut case.graph, case.inner, &case.params, case.name, &cfg)
            .map_err(|e| e.to_string())?;
        for r in [a, b] {
            ensure(r.passed, r.to_string())?;
            worst = worst.max(r.max_rel_err);
        }
        n += 1;
    }
    within(t.elapsed(), 120)?;
    Ok(format!(
        "{n} penalty terms, worst rel err {worst:.2e}, {:.1}s",
        t.elapsed().as_secs_f64()
    ))
}

/// Minimum over all permutations of the mean matched distance (Heap's algorithm).
fn brute_force_wd(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| (x[i] - y[j]).abs())
            .sum::<f64>()
            / n as f64
    };
    let mut best = cost(&perm);
    let mut c = vec![0; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn transport_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.random_range(1..=8);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (tx, ty) = (
            Tensor64::from_f64(vec![n], &x).unwrap(),
            Tensor64::from_f64(vec![n], &y).unwrap(),
        );
        let fast = exact_wd_1d(&tx, &ty).map_err(|e| e.to_string())?;
        let err = (fast - brute_force_wd(&x, &y)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, format!("trial {trial}: error {err:e}"))?;
        let col = |v: &[f64]| Tensor64::from_f64(vec![n, 1], v).unwrap();
        let sliced = swd(
            &col(&x),
            &col(&y),
            &Tensor64::from_f64(vec![1, 1], &[1.0]).unwrap(),
        )
        .map_err(|e| e.to_string())?;
        ensure(
            sliced == fast,
            format!("trial {trial}: swd {sliced} vs exact {fast}"),
        )?;
    }
    Ok(format!(
        "1000 trials, worst error {worst:.1e}, K=1 swd identical"
    ))
}

fn close(what: &str, got: f64, want: f64) -> std::result::Result<(), String> {
    ensure(
        (got - want).abs() <= 1e-8,
        format!("{what}: got {got}, want {want}"),
    )
}

fn metric_forms() -> Outcome {
    let probs = |rows: usize, cols: usize, v: &[f64]| {
        ProbMatrix::new(Tensor64::from_f64(vec![rows, cols], v).unwrap()).unwrap()
    };
    close(
        "IS of equal rows",
        inception_score(&probs(3, 3, &[0.2, 0.3, 0.5].repeat(3))),
        1.0,
    )?;
    close(
        "IS of one-hot pair",
        inception_score(&probs(2, 2, &[1.0, 0.0, 0.0, 1.0])),
        2.0,
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = Vec::new();
    for _ in 0..5 {
        let r: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = r.iter().sum();
        rows.extend(r.iter().map(|v| v / s));
    }
    let marginal: Vec<f64> = (0..3)
        .map(|j| (0..5).map(|i| rows[i * 3 + j]).sum::<f64>() / 5.0)
        .collect();
    let mut kl = 0.0;
    for i in 0..5 {
        for j in 0..3 {
            let p = rows[i * 3 + j];
            kl += p * (p / marginal[j]).ln() / 5.0;
        }
    }
    close(
        "IS of random 5x3",
        inception_score(&probs(5, 3, &rows)),
        kl.exp(),
    )?;

    let same =
        gaussian_stats(&Tensor64::from_f64(vec![3, 2], &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap())
            .unwrap();
    ensure(
        same.cov.iter().all(|&c| c == 0.0),
        "identical rows give non-zero covariance",
    )?;
    let two = gaussian_stats(&Tensor64::from_f64(vec![2, 1], &[0.0, 2.0]).unwrap()).unwrap();
    close("mean of {0, 2}", two.mean[0], 1.0)?;
    close("variance of {0, 2}", two.cov[0], 2.0)?;

    let fid = |a: &GaussianStats, b: &GaussianStats| frechet_distance(a, b).unwrap();
    let g = |mean: Vec<f64>, cov: Vec<f64>| GaussianStats { mean, cov };
    let a = g(vec![0.3, -1.0], vec![2.0, 0.5, 0.5, 1.0]);
    close("FID of identical stats", fid(&a, &a), 0.0)?;
    close(
        "FID 1-D shift",
        fid(&g(vec![0.0], vec![1.0]), &g(vec![1.0], vec![1.0])),
        1.0,
    )?;
    close(
        "FID I vs 4I",
        fid(
            &g(vec![0.0; 2], vec![1.0, 0.0, 0.0, 1.0]),
            &g(vec![0.0; 2], vec![4.0, 0.0, 0.0, 4.0]),
        ),
        2.0,
    )?;

    for _ in 0..100 {
        let f = rng.random_range(1..=6);
        let diag = |rng: &mut ChaCha8Rng| {
            let m: Vec<f64> = (0..f).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s: Vec<f64> = (0..f).map(|_| rng.random_range(0.1..3.0)).collect();
            (m, s)
        };
        let ((ma, sa), (mb, sb)) = (diag(&mut rng), diag(&mut rng));
        let cov = |s: &[f64]| {
            let mut c = vec![0.0; f * f];
            for i in 0..f {
                c[i * f + i] = s[i] * s[i];
            }
            c
        };
        let want: f64 = (0..f)
            .map(|i| (ma[i] - mb[i]).powi(2) + (sa[i] - sb[i]).powi(2))
            .sum();
        let (a, b) = (g(ma.clone(), cov(&sa)), g(mb.clone(), cov(&sb)));
        close("diagonal FID", fid(&a, &b), want)?;
        close("FID symmetry", fid(&b, &a), want)?;
    }
    Ok("IS, stats and FID examples plus 100 diagonal pairs within 1e-8".into())
}

fn schedule_contract() -> Outcome {
    let sched = GrowthSchedule::with_default_ladder(1000);
    let rows = phase_table(&sched);
    let want: [[usize; 3]; 7] = [
        [4, 4, 4],
        [8, 8, 8],
        [8, 16, 16],
        [8, 32, 32],
        [16, 64, 64],
        [16, 128, 128],
        [32, 256, 256],
    ];
    let stable: Vec<[usize; 3]> = rows
        .iter()
        .filter(|r| r.mode == Mode::Stable)
        .map(|r| r.rung)
        .collect();
    ensure(stable == want, format!("rung sequence {stable:?}"))?;
    ensure(rows.len() == 13, format!("{} phases", rows.len()))?;
    for (i, r) in rows.iter().enumerate() {
        if i > 0 {
            ensure(
                rows[i - 1].images_end == Some(r.images_start),
                format!("gap before phase {i}"),
            )?;
        }
        if r.mode == Mode::Transition {
            ensure(
                r.alpha_start == 0.0 && r.alpha_end == 1.0,
                format!("phase {i} alpha {} -> {}", r.alpha_start, r.alpha_end),
            )?;
            let entry = PhaseState {
                rung_index: r.rung_index,
                images_seen: 0,
                mode: Mode::Transition,
            };
            ensure(
                alpha(entry, &sched) == 0.0,
                format!("alpha at entry of phase {i}"),
            )?;
            let before_exit = advance(entry, &sched, sched.images_per_transition - 1);
            let exit = advance(entry, &sched, sched.images_per_transition);
            ensure(
                alpha(before_exit, &sched) < 1.0
                    && exit.mode == Mode::Stable
                    && alpha(exit, &sched) == 1.0,
                format!("alpha at exit of phase {i}"),
            )?;
        }
    }
    Ok("7 rungs in order, 6 fade-ins with alpha 0 at entry and 1 at exit".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

fn toy_ratio(loss: &str) -> std::result::Result<(f64, Vec<f64>), String> {
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let cfg = TrainConfig::parse_str(&format!(
            "dataset = gauss_mix_2d
             loss = {loss}
             seed = {seed}
             latent_dim = 2
             toy_hidden = 64
             batch_size = 256
             n_projections = 8
             total_images = {}
             eval_samples = 1024",
            5000 * 256
        ))
        .map_err(|e| e.to_string())?;
        let r = train(&cfg).map_err(|e| e.to_string())?;
        ensure(r.steps == 5000, format!("seed {seed}: {} steps", r.steps))?;
        ratios.push(r.swd.last().unwrap().swd / r.swd[0].swd);
    }
    Ok((median(ratios.clone()), ratios))
}

fn toy_convergence() -> Outcome {
    let t = Instant::now();
    let (direct, dr) = toy_ratio("swd_direct")?;
    let t_direct = t.elapsed();
    let t = Instant::now();
    let (adv, ar) = toy_ratio("swgan")?;
    let t_adv = t.elapsed();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|r| format!("{r:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let summary = format!(
        "swd_direct median ratio {direct:.3} [{}] in {:.0}s; swgan median ratio {adv:.3} [{}] in {:.0}s",
        fmt(&dr),
        t_direct.as_secs_f64(),
        fmt(&ar),
        t_adv.as_secs_f64()
    );
    ensure(direct <= 0.2, format!("swd_direct above 20%: {summary}"))?;
    ensure(adv <= 0.5, format!("swgan above 50%: {summary}"))?;
    within(t_direct, 300)?;
    within(t_adv, 900)?;
    Ok(summary)
}

fn progressive_run() -> Outcome {
    let t = Instant::now();
    let cfg = TrainConfig::parse_str(
        "dataset = moving_dot_video
         loss = swgan
         ladder = 4x4x4,8x8x8,8x16x16
         base_channels = 4
         latent_dim = 16
         batch_size = 8
         images_per_phase = 320
         total_images = 1600
         eval_every = 20
         eval_samples = 32",
    )
    .map_err(|e| e.to_string())?;
    let r = train(&cfg).map_err(|e| e.to_string())?;
    let spec = NetworkSpec::with_ladder(4, 16, &cfg.ladder).map_err(|e| e.to_string())?;
    let ladder = spec.ladder().map_err(|e| e.to_string())?;
    let modes: Vec<(usize, Mode)> = r.phases.iter().map(|p| (p.rung_index, p.mode)).collect();
    let want = [
        (0, Mode::Stable),
        (1, Mode::Transition),
        (1, Mode::Stable),
        (2, Mode::Transition),
        (2, Mode::Stable),
    ];
    ensure(modes == want, format!("phases {modes:?}"))?;

    let f = spec.feature_width().map_err(|e| e.to_string())?;
    let proj_params = f * f + 2 * f;
    for p in &r.phases {
        let k = p.rung_index;
        let rung = ladder[k];
        ensure(
            p.rung == rung.as_array(),
            format!("phase rung {:?}", p.rung),
        )?;
        ensure(
            p.generator_output == vec![8, 3, rung.t, rung.h, rung.w],
            format!("output {:?} at rung {k}", p.generator_output),
        )?;
        let (old_g, old_d) = if p.mode == Mode::Transition {
            let c = spec.stage_channels(k - 1).map_err(|e| e.to_string())?;
            let cd = spec.disc_input_channels(k - 1).map_err(|e| e.to_string())?;
            (3 * c + 3, 3 * cd + cd)
        } else {
            (0, 0)
        };
        let g_want = spec.generator_param_count(k).map_err(|e| e.to_string())? + old_g;
        let d_want = spec
            .discriminator_param_count(k, false)
            .map_err(|e| e.to_string())?
            + old_d
            + proj_params;
        ensure(
            p.generator_params == g_want,
            format!(
                "rung {k} {:?}: G has {} params, spec {g_want}",
                p.mode, p.generator_params
            ),
        )?;
        ensure(
            p.discriminator_params == d_want,
            format!(
                "rung {k} {:?}: D has {} params, spec {d_want}",
                p.mode, p.discriminator_params
            ),
        )?;
    }

    for (i, p) in r.phases.iter().enumerate() {
        let end = r
            .phases
            .get(i + 1)
            .map_or(r.alpha.len(), |n| n.start_step as usize);
        let a = &r.alpha[p.start_step as usize..end];
        match p.mode {
            Mode::Stable => ensure(
                a.iter().all(|&x| x == 1.0),
                format!("alpha below 1 in stable phase {i}"),
            )?,
            Mode::Transition => {
                ensure(
                    a[0] == 0.0,
                    format!("transition {i} starts at alpha {}", a[0]),
                )?;
                let step = a[1] - a[0];
                for w in a.windows(2) {
                    ensure(
                        w[1] > w[0] && (w[1] - w[0] - step).abs() < 1e-12,
                        format!("alpha not linear in phase {i}"),
                    )?;
                }
            }
        }
    }
    ensure(
        r.loss_g.iter().chain(&r.loss_d).all(|v| v.is_finite()),
        "non-finite loss recorded",
    )?;
    within(t.elapsed(), 1800)?;
    Ok(format!(
        "{} steps over 5 phases, shapes and parameter counts match the scaled spec, {:.0}s",
        r.steps,
        t.elapsed().as_secs_f64()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 gradient correctness", gradients),
        ("2 second-order correctness", second_order),
        ("3 optimal-transport oracle", transport_oracle),
        ("4 metric closed forms", metric_forms),
        ("5 schedule contract", schedule_contract),
        ("6 toy convergence", toy_convergence),
        ("7 progressive toy run", progressive_run),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in criteria {
        if only.as_ref().is_some_and(|o| !name.contains(o.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if only.is_none() {
        println!(
            "NOT REPRODUCED criterion 8 published video scores: need a pretrained C3D classifier, the full datasets and \
             multi-GPU training; the metric formulas are covered by criterion 4 and `pvgan metrics` accepts external features"
        );
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
