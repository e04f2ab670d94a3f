use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use btcq::codebook::InitStrategy;
use btcq::format::{decode_weights, deserialize, serialize, write_weights};
use btcq::lut::{bench_lut_vs_dense, BenchParams, BenchSize, DEFAULT_SEGMENT};
use btcq::pipeline::{
    btc_quantize, dequantize_original, effective_bits, nm_mask_bits, overlay_bits, payload_bits, transform_fit,
    QuantizeConfig, QuantizeReport, QuantizedLayer, TransformFitConfig,
};
use btcq::{DenseMatrix, Error, Result};

#[derive(Parser)]
#[command(name = "btcq", version, about = "Sub-1-bit binary codebook weight compression")]
struct Cli {
    /// Worker threads for the compute kernels (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Init {
    Frequency,
    Random,
}

#[derive(Args)]
struct QuantArgs {
    #[arg(long, default_value_t = 10)]
    v: usize,
    #[arg(long, default_value_t = 256)]
    c: usize,
    #[arg(long, default_value_t = 0.0)]
    salient_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_points: usize,
    #[arg(long, default_value_t = 15)]
    arb_iters: u64,
    #[arg(long, default_value_t = 5)]
    codebook_iters: usize,
    #[arg(long, value_enum, default_value_t = Init::Frequency)]
    init: Init,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Segment width used when checking the LUT-GEMM layout.
    #[arg(long, default_value_t = DEFAULT_SEGMENT)]
    mu_seg: usize,
}

impl QuantArgs {
    fn config(&self) -> QuantizeConfig {
        QuantizeConfig {
            v: self.v,
            c: self.c,
            salient_fraction: self.salient_fraction,
            split_points: self.split_points,
            arb_iters: self.arb_iters,
            codebook_iters: self.codebook_iters,
            init: match self.init {
                Init::Frequency => InitStrategy::Frequency,
                Init::Random => InitStrategy::Random { seed: self.seed },
            },
            ..QuantizeConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compress a BTCW weight file into a BTCQ layer.
    Quantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        quant: QuantArgs,
    },
    /// Reconstruct weights from a BTCQ layer into a BTCW file.
    Dequantize {
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the input path with a `.mat` extension.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Original weights, for reporting the reconstruction MSE.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Storage accounting for a BTCQ layer, or for given dimensions.
    Stats {
        #[arg(long = "in", conflicts_with_all = ["v", "c", "rows", "cols"])]
        input: Option<PathBuf>,
        #[arg(long, required_unless_present = "input")]
        v: Option<usize>,
        #[arg(long, required_unless_present = "input")]
        c: Option<usize>,
        #[arg(long, required_unless_present = "input")]
        rows: Option<usize>,
        #[arg(long, required_unless_present = "input")]
        cols: Option<usize>,
    },
    /// Bits per weight of an N:M sparsity mask with binary values.
    NmBits {
        #[arg(long)]
        keep: u64,
        #[arg(long)]
        group: u64,
    },
    /// Time dense, packed-sign and LUT-GEMM kernels.
    Bench {
        /// Sizes as BATCHxOUTxIN.
        #[arg(long, num_args = 1.., default_values = ["64x256x256"])]
        sizes: Vec<BenchSize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 16)]
        v: usize,
        #[arg(long, default_value_t = 256)]
        c: usize,
        #[arg(long, default_value_t = DEFAULT_SEGMENT)]
        mu_seg: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a sign-flip and Kronecker transform on calibration rows, then quantize with it.
    TransformFit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// BTCW calibration activations; random rows are drawn when absent.
        #[arg(long)]
        calib: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        calib_rows: usize,
        #[arg(long, default_value_t = 1)]
        sign_sweeps: usize,
        #[arg(long, default_value_t = 3)]
        p_iters: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[command(flatten)]
        quant: QuantArgs,
    },
    /// Write a random BTCW weight file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    decode_weights(&fs::read(path)?)
}

fn write_matrix(path: &Path, w: &DenseMatrix) -> Result<()> {
    let mut buf = Vec::new();
    write_weights(w, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn read_layer(path: &Path) -> Result<QuantizedLayer> {
    deserialize(&fs::read(path)?)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<DenseMatrix> {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        // sum of uniforms: bell-shaped with light tails
        (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.5
    })
}

fn print_accounting(v: usize, c: usize, n: usize, m: usize) -> Result<()> {
    let e = effective_bits(v, c, n, m)?;
    println!("index_bits_per_weight={}", e.index_bits_per_weight);
    println!("codebook_bits={}", e.codebook_bits);
    println!("total_bits={}", e.total_bits);
    println!("bits_per_weight={}", e.bits_per_weight);
    println!("codebook_overhead={}", e.codebook_bits / e.total_bits);
    println!("fractional_index_bits_per_weight={}", e.fractional_index_bits_per_weight);
    println!("fractional_bits_per_weight={}", e.fractional_bits_per_weight);
    Ok(())
}

fn print_layer(layer: &QuantizedLayer) -> Result<()> {
    println!("rows={}", layer.n);
    println!("cols={}", layer.m);
    println!("v={}", layer.v);
    println!("c={}", layer.c());
    println!("index_count={}", layer.indices.len());
    print_accounting(layer.v, layer.c(), layer.n, layer.m)?;
    let weights = (layer.n * layer.m) as f64;
    let overlay = overlay_bits(layer);
    println!("payload_bits={}", payload_bits(layer));
    println!("salient_count={}", layer.overlay.as_ref().map_or(0, |o| o.count()));
    println!("overlay_bits={overlay}");
    println!("scale_bits={}", 64 * layer.n);
    println!(
        "bits_per_weight_with_overlay={}",
        (payload_bits(layer) + overlay) as f64 / weights
    );
    println!("transform={}", layer.transform.is_some());
    println!(
        "split_thresholds={}",
        layer.split_thresholds.as_ref().map_or(0, |t| t.len())
    );
    Ok(())
}

fn print_report(r: &QuantizeReport, weights: usize) {
    println!("pre_codebook_error={}", r.pre_codebook_error);
    println!("post_codebook_error={}", r.post_codebook_error);
    println!("mse={}", r.post_codebook_error / weights as f64);
    if let Some(e) = r.original_space_error {
        println!("original_space_error={e}");
    }
    println!("codebook_exact={}", r.codebook_exact);
    println!("codebook_iterations={}", r.codebook_iterations);
    println!("alpha_clamps={}", r.alpha_clamps);
    if let Some(e) = r.grouped_error {
        println!("grouped_error={e}");
        println!("grouping_reduced={}", r.grouping_reduced);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Quantize { input, out, quant } => {
            let w = read_matrix(&input)?;
            let q = btc_quantize(&w, None, &quant.config())?;
            fs::write(&out, serialize(&q.layer)?)?;
            print_layer(&q.layer)?;
            print_report(&q.report, w.data().len());
            println!("lut_layout={}", q.layer.has_lut_layout(quant.mu_seg));
        }
        Command::Dequantize { input, out, reference } => {
            let layer = read_layer(&input)?;
            let w = dequantize_original(&layer)?;
            let out = out.unwrap_or_else(|| input.with_extension("mat"));
            write_matrix(&out, &w)?;
            println!("out={}", out.display());
            println!("rows={}", w.rows());
            println!("cols={}", w.cols());
            if let Some(path) = reference {
                let r = read_matrix(&path)?;
                if r.shape() != w.shape() {
                    return Err(Error::Shape("reference and layer shapes differ".into()));
                }
                let sse: f64 = r.data().iter().zip(w.data()).map(|(a, b)| (a - b).powi(2)).sum();
                println!("mse={}", sse / w.data().len().max(1) as f64);
            }
        }
        Command::Stats {
            input,
            v,
            c,
            rows,
            cols,
        } => match input {
            Some(path) => print_layer(&read_layer(&path)?)?,
            None => {
                let missing = || Error::Argument("stats needs --in or all of --v --c --rows --cols".into());
                print_accounting(
                    v.ok_or_else(missing)?,
                    c.ok_or_else(missing)?,
                    rows.ok_or_else(missing)?,
                    cols.ok_or_else(missing)?,
                )?
            }
        },
        Command::NmBits { keep, group } => {
            println!("bits_per_weight={}", nm_mask_bits(keep, group)?);
        }
        Command::Bench {
            sizes,
            reps,
            v,
            c,
            mu_seg,
            seed,
        } => {
            for row in bench_lut_vs_dense(&sizes, reps, BenchParams { v, c, mu_seg, seed })? {
                println!("{row}");
            }
        }
        Command::TransformFit {
            input,
            out,
            calib,
            calib_rows,
            sign_sweeps,
            p_iters,
            lr,
            quant,
        } => {
            let w = read_matrix(&input)?;
            let x = match calib {
                Some(path) => read_matrix(&path)?,
                None => random_matrix(calib_rows, w.cols(), &mut ChaCha8Rng::seed_from_u64(quant.seed))?,
            };
            let cfg = TransformFitConfig {
                quant: quant.config(),
                sign_sweeps,
                p_iters,
                lr,
                ..TransformFitConfig::default()
            };
            let fit = transform_fit(&w, &x, &cfg)?;
            let q = btc_quantize(&w, Some(&fit.transform), &cfg.quant)?;
            fs::write(&out, serialize(&q.layer)?)?;
            println!("initial_objective={}", fit.initial_objective);
            println!("final_objective={}", fit.final_objective);
            println!("trace_len={}", fit.trace.len());
            println!("sign_flips={}", fit.sign_flips);
            println!("p_steps={}", fit.p_steps);
            println!("termination={:?}", fit.termination);
            println!("equivalence_error={}", fit.equivalence_error);
            print_report(&q.report, w.data().len());
        }
        Command::Synth { out, rows, cols, seed } => {
            let w = random_matrix(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))?;
            write_matrix(&out, &w)?;
            println!("out={}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("btcq: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("btcq: {e}");
            ExitCode::from(1)
        }
    }
}
