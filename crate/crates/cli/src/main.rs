use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pvgan::gradcheck::{run_op_cases, GradCheckConfig};
use pvgan::harness::{
    stream, train, DatasetKind, GaussMix, MovingDot, Purpose, SyntheticDataset, TrainConfig,
};
use pvgan::losses::swd_monte_carlo;
use pvgan::metrics::{frechet_distance, gaussian_stats, inception_score_splits, ProbMatrix};
use pvgan::progressive::phase_table;
use pvgan::tensor::{read_matrix_file, write_pvt1_file};
use pvgan::{Error, Result, Shape3d, Tensor};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pvgan", version, about = "Progressive video GAN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key = value config file and print the run report.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the growth phase table of a config as JSON.
    Schedule {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference check of every differentiable op.
    Gradcheck {
        /// Comma-separated case names (default: all).
        #[arg(long, value_delimiter = ',')]
        ops: Option<Vec<String>>,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write synthetic samples as PVT1 (or CSV for 2-D points).
    GenData {
        #[arg(long)]
        kind: DatasetKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clip extents for videos, as TxHxW.
        #[arg(long, default_value = "8x16x16")]
        rung: String,
        #[arg(long, default_value_t = 1)]
        speed: i64,
    },
    /// Evaluation metrics on externally produced features or probabilities.
    Metrics {
        #[command(subcommand)]
        metric: Metric,
    },
}

#[derive(Subcommand)]
enum Metric {
    /// Inception score of an N x C class-probability matrix.
    Is {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long, default_value_t = 1)]
        splits: usize,
    },
    /// Frechet distance between Gaussian fits of two feature matrices.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
    },
    /// Monte Carlo sliced Wasserstein distance between two sample sets.
    Swd {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        /// Random orthogonal frames to average over.
        #[arg(long, default_value_t = 4)]
        projections: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_rung(s: &str) -> Result<Shape3d> {
    let n: Vec<usize> = s
        .split('x')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad rung {s:?}")))
        })
        .collect::<Result<_>>()?;
    match n[..] {
        [t, h, w] => Shape3d::new(t, h, w),
        _ => Err(Error::Config(format!("rung {s:?} must look like TxHxW"))),
    }
}

fn load_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let mut text = std::fs::read_to_string(path)?;
    for o in overrides {
        if !o.contains('=') {
            return Err(Error::Config(format!("override {o:?} must be key=value")));
        }
        text.push('\n');
        text.push_str(o);
    }
    TrainConfig::parse_str(&text)
}

fn write_csv(path: &Path, t: &Tensor<f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let w = t.dims()[1];
    for row in t.data().chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", cells.join(","))?;
    }
    Ok(())
}

fn metric_json(metric: &str, value: f64, n: usize) -> String {
    json!({ "metric": metric, "value": value, "n_samples": n }).to_string()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let report = train(&cfg)?;
            if let Some(last) = report.swd.last() {
                eprintln!(
                    "trained {} steps on {} images; swd {:.6} -> {:.6}",
                    report.steps, report.images, report.swd[0].swd, last.swd
                );
            }
            println!("{}", report.to_json()?);
        }
        Command::Schedule { config } => {
            let cfg = load_config(&config, &[])?;
            println!(
                "{}",
                serde_json::to_string_pretty(&phase_table(&cfg.schedule()?))?
            );
        }
        Command::Gradcheck { ops, probes, seed } => {
            let cfg = GradCheckConfig {
                probes,
                seed,
                ..Default::default()
            };
            let reports = run_op_cases(ops.as_deref(), &cfg)?;
            let failed = reports.iter().filter(|r| !r.passed).count();
            for r in &reports {
                println!("{r}");
            }
            println!("{} checked, {failed} failed", reports.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::GenData {
            kind,
            out,
            n,
            seed,
            rung,
            speed,
        } => {
            let ds = match kind {
                DatasetKind::GaussMix2d => SyntheticDataset::GaussMix2d(GaussMix::default()),
                DatasetKind::MovingDotVideo => SyntheticDataset::MovingDotVideo(MovingDot {
                    max_speed: speed,
                    ..MovingDot::new(parse_rung(&rung)?)
                }),
            };
            let t: Tensor<f64> = ds.sample_at(seed, 0, n)?;
            let csv = out
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            match (csv, t.rank()) {
                (true, 2) => write_csv(&out, &t)?,
                (true, _) => return Err(Error::Config("CSV output holds 2-D points only".into())),
                _ => write_pvt1_file(&out, &t)?,
            }
            eprintln!("wrote {:?} to {}", t.dims(), out.display());
        }
        Command::Metrics { metric } => {
            let line = match metric {
                Metric::Is { probs, splits } => {
                    let p = ProbMatrix::new(read_matrix_file::<f64>(&probs)?)?;
                    metric_json(
                        "inception_score",
                        inception_score_splits(&p, splits)?,
                        p.n_samples(),
                    )
                }
                Metric::Fid { real, fake } => {
                    let a = read_matrix_file::<f64>(&real)?;
                    let b = read_matrix_file::<f64>(&fake)?;
                    let d = frechet_distance(&gaussian_stats(&a)?, &gaussian_stats(&b)?)?;
                    metric_json("frechet_distance", d, a.dims()[0].min(b.dims()[0]))
                }
                Metric::Swd {
                    real,
                    fake,
                    projections,
                    seed,
                } => {
                    let a = read_matrix_file::<f64>(&real)?;
                    let b = read_matrix_file::<f64>(&fake)?;
                    let est = swd_monte_carlo(
                        &a,
                        &b,
                        projections,
                        &mut stream(seed, Purpose::EvalProjection, 0),
                    )?;
                    json!({
                        "metric": "sliced_wasserstein",
                        "value": est.value,
                        "n_samples": a.dims()[0],
                        "std_err": est.std_err,
                        "n_directions": est.n_directions,
                    })
                    .to_string()
                }
            };
            println!("{line}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
