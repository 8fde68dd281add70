//! Command-line surface of the simulation harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mimolab::core::channel::snr_to_noise_var;
use mimolab::core::modem::make_constellation;
use mimolab::core::pcen::{train_pcen, TrainOptions};
use mimolab::core::proxy::{
    toy_end_to_end_train, train_surrogate, E2eTrainOptions, ProxyTrainOptions, ToyPipeline,
};
use mimolab::core::rng::SeededRng;
use mimolab::core::channel::ChannelRealization;
use mimolab::core::numerics::sample_cgauss;
use mimolab::io::{
    self, read_csi, read_curve, read_payload, read_ppm, write_pcen_params, write_preprocessor,
    write_surrogate, HarnessConfig, ReportFormat,
};
use mimolab::link::{run_link, selftest, sweep, LinkSetup, Payload, SweepAxis};
use mimolab::metrics::bd_metric;
use mimolab::throughput::measure_throughput;

#[derive(Parser)]
#[command(name = "mimolab", version, about = "Link-level MIMO transmission laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonIo {
    /// Link configuration JSON (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args, Clone)]
struct PayloadArgs {
    /// Binary payload file, transported byte-exactly.
    #[arg(long, conflicts_with = "image")]
    payload: Option<PathBuf>,
    /// Uncompressed 8-bit PPM (P6) image payload; enables PSNR reporting.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Source dimensions HxW of an externally compressed payload, for CBR
    /// accounting (e.g. 256x256).
    #[arg(long)]
    source_dims: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// One link run over the configured channel.
    Simulate {
        #[command(flatten)]
        io: CommonIo,
        #[command(flatten)]
        payload: PayloadArgs,
        /// Also measure throughput for this many seconds.
        #[arg(long)]
        throughput_secs: Option<f64>,
    },
    /// Monte-Carlo sweep over an SNR or CBR axis.
    Sweep {
        #[command(flatten)]
        io: CommonIo,
        #[command(flatten)]
        payload: PayloadArgs,
        /// Comma-separated SNR points in dB.
        #[arg(long, conflicts_with = "cbr")]
        snr: Option<String>,
        /// Comma-separated CBR targets (realized through repetitions).
        #[arg(long)]
        cbr: Option<String>,
    },
    /// Fit refinement parameters over a channel ensemble.
    TrainPcen {
        #[command(flatten)]
        io: CommonIo,
        /// Number of generated channel realizations (ignored with --csi).
        #[arg(long, default_value_t = 200)]
        realizations: usize,
        /// CSI ensemble file to train on instead of generated channels.
        #[arg(long)]
        csi: Option<PathBuf>,
        /// Unfolding depth.
        #[arg(long, default_value_t = 8)]
        t_iters: usize,
        /// Outer training rounds cap.
        #[arg(long, default_value_t = 50)]
        max_rounds: usize,
    },
    /// Fit a differentiable surrogate of the reference pipeline and run the
    /// end-to-end preprocessor demonstration.
    TrainProxy {
        #[command(flatten)]
        io: CommonIo,
        /// Data dimension of the toy vectors.
        #[arg(long, default_value_t = 6)]
        dim: usize,
        /// Quantizer resolution in bits.
        #[arg(long, default_value_t = 4)]
        quant_bits: usize,
        /// Pipeline SNR in dB.
        #[arg(long, default_value_t = 25.0)]
        snr_db: f64,
        /// Training epochs for the surrogate fit.
        #[arg(long, default_value_t = 6000)]
        epochs: usize,
        /// Where to store the trained preprocessor (optional).
        #[arg(long)]
        preprocessor_out: Option<PathBuf>,
    },
    /// Bjontegaard deltas between two rate-quality curves.
    Bd {
        /// CSV with `rate,quality` rows (reference curve).
        #[arg(long)]
        curve_a: PathBuf,
        /// CSV with `rate,quality` rows (test curve).
        #[arg(long)]
        curve_b: PathBuf,
    },
    /// Determinism self-check of the full pipeline.
    Selftest,
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect()
}

fn load_config(io: &CommonIo) -> mimolab::Result<HarnessConfig> {
    let mut hc = match &io.config {
        Some(path) => HarnessConfig::load(path)?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = io.seed {
        hc.seed = seed;
    }
    Ok(hc)
}

fn load_payload(args: &PayloadArgs) -> mimolab::Result<Payload> {
    let source_pixels = match &args.source_dims {
        Some(t) => {
            let parts: Vec<&str> = t.split(['x', 'X']).collect();
            if parts.len() != 2 {
                return Err(mimolab::HarnessError::Format(format!(
                    "source dims must look like 256x256, got {t:?}"
                )));
            }
            let h = parts[0]
                .parse()
                .map_err(|_| mimolab::HarnessError::Format(format!("bad height {:?}", parts[0])))?;
            let w = parts[1]
                .parse()
                .map_err(|_| mimolab::HarnessError::Format(format!("bad width {:?}", parts[1])))?;
            Some((h, w))
        }
        None => None,
    };
    match (&args.payload, &args.image) {
        (Some(path), None) => Ok(Payload::Bytes {
            data: read_payload(path)?,
            source_pixels,
        }),
        (None, Some(path)) => Ok(Payload::Image(read_ppm(path)?)),
        (None, None) => Err(mimolab::HarnessError::Format(
            "need --payload <file> or --image <file.ppm>".into(),
        )),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    }
}

fn report_format(io: &CommonIo) -> mimolab::Result<ReportFormat> {
    match io.format.as_str() {
        "csv" => Ok(ReportFormat::Csv),
        "json" => Ok(ReportFormat::Json),
        other => Err(mimolab::HarnessError::Format(format!(
            "unknown format {other:?} (csv, json)"
        ))),
    }
}

fn run() -> mimolab::Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            io,
            payload,
            throughput_secs,
        } => {
            let hc = load_config(&io)?;
            let format = report_format(&io)?;
            let setup = LinkSetup::from_harness_config(&hc)?;
            let payload = load_payload(&payload)?;
            let mut report = run_link(&setup, &payload)?;
            if let Some(secs) = throughput_secs {
                let t = measure_throughput(&setup, &payload, secs)?;
                report.throughput = t.single_items_per_sec;
                eprintln!(
                    "throughput: {:.2} items/s single, {:.2} items/s parallel",
                    t.single_items_per_sec, t.parallel_items_per_sec
                );
            }
            io::stdout_or_file(io.out.as_deref(), &io::render_reports(&[report], format))
        }
        Command::Sweep {
            io,
            payload,
            snr,
            cbr,
        } => {
            let hc = load_config(&io)?;
            let format = report_format(&io)?;
            let setup = LinkSetup::from_harness_config(&hc)?;
            let payload = load_payload(&payload)?;
            let axis = match (snr, cbr) {
                (Some(list), None) => SweepAxis::SnrDb(
                    parse_list(&list).map_err(mimolab::HarnessError::Format)?,
                ),
                (None, Some(list)) => {
                    SweepAxis::Cbr(parse_list(&list).map_err(mimolab::HarnessError::Format)?)
                }
                _ => {
                    return Err(mimolab::HarnessError::Format(
                        "need exactly one of --snr or --cbr".into(),
                    ))
                }
            };
            let reports = sweep(&setup, &axis, &payload)?;
            io::stdout_or_file(io.out.as_deref(), &io::render_reports(&reports, format))
        }
        Command::TrainPcen {
            io,
            realizations,
            csi,
            t_iters,
            max_rounds,
        } => {
            let hc = load_config(&io)?;
            let (cfg, _) = hc.resolve()?;
            let ensemble: Vec<ChannelRealization> = match csi {
                Some(path) => read_csi(&path)?
                    .into_iter()
                    .map(ChannelRealization::perfect)
                    .collect(),
                None => {
                    let base = SeededRng::new(cfg.seed ^ 0xe5e);
                    (0..realizations)
                        .map(|j| {
                            let mut r = base.derive(j as u64);
                            ChannelRealization::perfect(
                                sample_cgauss(&mut r, cfg.n_r, cfg.n_t, 1.0)
                                    .expect("unit variance"),
                            )
                        })
                        .collect()
                }
            };
            let c = make_constellation(cfg.modulation);
            let opts = TrainOptions {
                t_iters,
                max_rounds,
                seed: cfg.seed,
                ..TrainOptions::default()
            };
            let outcome = train_pcen(&ensemble, &cfg, &c, &opts)?;
            eprintln!(
                "trained over {} realizations: loss {:.6} -> {:.6} in {} rounds (converged: {})",
                ensemble.len(),
                outcome.report.initial_loss,
                outcome.report.final_loss,
                outcome.report.rounds,
                outcome.report.converged
            );
            let out = io
                .out
                .unwrap_or_else(|| PathBuf::from("pcen-params.json"));
            write_pcen_params(&out, &outcome.params)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::TrainProxy {
            io,
            dim,
            quant_bits,
            snr_db,
            epochs,
            preprocessor_out,
        } => {
            let hc = load_config(&io)?;
            let pipeline = ToyPipeline::digital(dim, quant_bits, snr_db, hc.seed ^ 0x9d0)?;
            let mut data_rng = SeededRng::new(hc.seed ^ 0xda7a);
            let dataset: Vec<Vec<f64>> = (0..160)
                .map(|_| (0..dim).map(|_| data_rng.next_f64()).collect())
                .collect();
            let opts = ProxyTrainOptions {
                epochs,
                seed: hc.seed ^ 0x5eed,
                ..ProxyTrainOptions::default()
            };
            let (surrogate, report) = train_surrogate(&pipeline, &dataset, &opts)?;
            eprintln!(
                "surrogate holdout loss: {:.6} -> {:.6}",
                report.initial_holdout_loss, report.final_holdout_loss
            );
            let out = io.out.unwrap_or_else(|| PathBuf::from("surrogate.json"));
            write_surrogate(&out, &surrogate)?;
            eprintln!("wrote {}", out.display());
            if let Some(prep_path) = preprocessor_out {
                let e2e = E2eTrainOptions::for_dim(dim);
                let (prep, rep) =
                    toy_end_to_end_train(dim, &pipeline, &surrogate, &dataset, &e2e)?;
                eprintln!(
                    "end-to-end composite loss: {:.6} -> {:.6}",
                    rep.initial_composite, rep.final_composite
                );
                write_preprocessor(&prep_path, &prep)?;
                eprintln!("wrote {}", prep_path.display());
            }
            // context for the operating point
            let nv = snr_to_noise_var(snr_db, 1.0)?;
            eprintln!("pipeline noise variance at {snr_db} dB: {nv:.4}");
            Ok(())
        }
        Command::Bd { curve_a, curve_b } => {
            let a = read_curve(&curve_a)?;
            let b = read_curve(&curve_b)?;
            let (bd_rate, bd_quality) = bd_metric(&a, &b)?;
            println!("bd_rate_percent,{bd_rate}");
            println!("bd_quality,{bd_quality}");
            Ok(())
        }
        Command::Selftest => {
            for line in selftest()? {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
