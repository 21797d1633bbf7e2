use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gip_core::polyact::Preset;
use gip_core::slotvm::{DEFAULT_MAX_LEVEL, DEFAULT_SLOT_COUNT};
use gip_core::{
    convert_model, execute, oracle_pipeline, pack, plan, unpack, HEContext, ModelGraph,
    PlainTensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{exit, CliError, Result};
use crate::model::{load_model, save_model};
use crate::report::{render, render_plan, Format};
use crate::tensor_io::{read_feature_map, write_tensor, Dtype, RawTensor};
use crate::toy::{random_input, toy_model};

#[derive(Debug, Parser)]
#[command(name = "gip", version, about = "Packed CNN inference on a CKKS slot simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Relu,
    Silu,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Relu => Preset::Relu,
            PresetArg::Silu => Preset::Silu,
        }
    }
}

#[derive(Debug, Args)]
struct HeArgs {
    /// Base packing grid side. Defaults to the largest power of two not
    /// above the input side whose square fits the slot count.
    #[arg(long, value_parser = parse_pow2)]
    base_size: Option<usize>,
    /// Slots per ciphertext (power of two).
    #[arg(long, default_value_t = DEFAULT_SLOT_COUNT, value_parser = parse_pow2)]
    slots: usize,
    /// Level budget of a fresh or bootstrapped ciphertext.
    #[arg(long, default_value_t = DEFAULT_MAX_LEVEL, value_parser = clap::value_parser!(u32).range(1..))]
    max_level: u32,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replace activations with PolyAct-RN and max pooling with average pooling.
    Convert {
        model_in: PathBuf,
        #[arg(long, value_enum)]
        preset: PresetArg,
        model_out: PathBuf,
        /// Declare the input resized to RESIZE x RESIZE.
        #[arg(long, value_parser = parse_pow2)]
        resize: Option<usize>,
    },
    /// Pack an input tensor, run the model on the simulator and unpack the result.
    Run {
        model: PathBuf,
        input: PathBuf,
        /// Output tensor path [default: <input>.out.tensor]
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        he: HeArgs,
        /// Write the cost report here (JSON for a .json extension, else text).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare packed execution against the plaintext pipeline on random inputs.
    Verify {
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest accepted max-abs difference.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[command(flatten)]
        he: HeArgs,
    },
    /// Print packing factors, levels, bootstraps and predicted counts per node.
    Plan {
        model: PathBuf,
        #[command(flatten)]
        he: HeArgs,
    },
    /// Evaluate the model with the plaintext reference operators.
    Oracle {
        model: PathBuf,
        input: PathBuf,
        /// Output tensor path [default: <input>.oracle.tensor]
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a small seeded sample model (and optionally a random input).
    Toy {
        model_out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write a random input tensor here.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn parse_pow2(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_power_of_two() {
        Ok(v)
    } else {
        Err(format!("{v} is not a power of two"))
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Convert {
            model_in,
            preset,
            model_out,
            resize,
        } => cmd_convert(&model_in, preset.into(), &model_out, resize),
        Command::Run {
            model,
            input,
            output,
            he,
            report,
        } => {
            let output = output.unwrap_or_else(|| with_suffix(&input, "out"));
            cmd_run(&model, &input, &output, &he, report.as_deref())
        }
        Command::Verify {
            model,
            trials,
            seed,
            tolerance,
            he,
        } => cmd_verify(&model, trials, seed, tolerance, &he),
        Command::Plan { model, he } => cmd_plan(&model, &he),
        Command::Oracle {
            model,
            input,
            output,
        } => {
            let output = output.unwrap_or_else(|| with_suffix(&input, "oracle"));
            cmd_oracle(&model, &input, &output)
        }
        Command::Toy {
            model_out,
            seed,
            input,
        } => cmd_toy(&model_out, seed, input.as_deref()),
    }
}

fn with_suffix(p: &Path, tag: &str) -> PathBuf {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("tensor");
    p.with_file_name(format!("{stem}.{tag}.tensor"))
}

fn cmd_convert(model_in: &Path, preset: Preset, model_out: &Path, resize: Option<usize>) -> Result<i32> {
    let m = load_model(model_in)?;
    let (converted, summary) = convert_model(&m, preset, resize)?;
    for id in &summary.activations {
        println!("activation {id}: polyact_rn({})", preset.name());
    }
    for id in &summary.maxpools {
        println!("maxpool {id}: avgpool");
    }
    if let Some(r) = summary.resized {
        println!("input resized {}x{} -> {}x{}", r.from.0, r.from.1, r.to, r.to);
    }
    if summary.is_empty() {
        println!("nothing to convert");
    }
    save_model(model_out, &converted)?;
    Ok(exit::OK)
}

fn context(he: &HeArgs) -> Result<HEContext> {
    Ok(HEContext::new(he.slots, he.max_level)?)
}

fn base_size(he: &HeArgs, m: &ModelGraph) -> usize {
    he.base_size.unwrap_or_else(|| {
        let side = m.input().height.max(1);
        let mut b = 1;
        while b * 2 <= side && (b * 2) * (b * 2) <= he.slots {
            b *= 2;
        }
        b
    })
}

/// Brings `x` to the model's input resolution: unchanged when it already
/// matches, nearest-neighbour resampled when it matches the recorded
/// pre-resize shape.
fn fit_input(m: &ModelGraph, x: PlainTensor, origin: &Path) -> Result<PlainTensor> {
    let spec = m.input();
    let want = [spec.channels, spec.height, spec.width];
    if x.shape() == want {
        return Ok(x);
    }
    match m.resize() {
        Some(r) if x.shape() == [spec.channels, r.from.0, r.from.1] => {
            let (fh, fw) = r.from;
            Ok(PlainTensor::from_fn(spec.channels, spec.height, spec.width, |c, y, xx| {
                x.get(c, y * fh / spec.height, xx * fw / spec.width)
            }))
        }
        _ => Err(CliError::schema(
            origin,
            format!("input shape {:?}, model expects {:?}", x.shape(), want),
        )),
    }
}

fn cmd_run(model: &Path, input: &Path, output: &Path, he: &HeArgs, report: Option<&Path>) -> Result<i32> {
    let m = load_model(model)?;
    let x = fit_input(&m, read_feature_map(input)?, input)?;
    let ctx = context(he)?;
    let base = base_size(he, &m);
    let (y, cost) = execute(&m, &ctx, &pack(&x, base, &ctx)?)?;
    let y = unpack(&y)?;
    write_tensor(output, &RawTensor::from_plain(&y), Dtype::F32)?;
    let [c, h, w] = y.shape();
    println!("output {c}x{h}x{w} written to {}", output.display());
    if let Some(path) = report {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Text,
        };
        fs::write(path, render(&cost, format)).map_err(|e| CliError::io(path, e))?;
    }
    let t = cost.totals();
    println!(
        "totals: {} rotations, {} ct-ct mults, {} pt-ct mults, {} adds, {} bootstraps, max depth {}",
        t.rotations, t.ct_ct_mults, t.pt_ct_mults, t.adds, t.bootstraps, t.max_depth
    );
    Ok(exit::OK)
}

fn cmd_verify(model: &Path, trials: usize, seed: u64, tolerance: f64, he: &HeArgs) -> Result<i32> {
    let m = load_model(model)?;
    let ctx = context(he)?;
    let base = base_size(he, &m);
    // fail early on an unplannable model, even with no trials
    plan(&m, &ctx, base)?;
    if trials == 0 {
        eprintln!("warning: 0 trials requested, nothing was verified");
        return Ok(exit::OK);
    }
    let spec = m.input();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..trials {
        let x = random_input(&mut rng, spec.channels, spec.height, spec.width);
        let (y, _) = execute(&m, &ctx, &pack(&x, base, &ctx)?)?;
        let err = unpack(&y)?.max_abs_diff(&oracle_pipeline(&m, &x)?);
        println!("trial {i}: max abs error {err:.3e}");
        worst = worst.max(err);
    }
    println!("max abs error over {trials} trial(s): {worst:.3e} (tolerance {tolerance:e})");
    if worst <= tolerance {
        Ok(exit::OK)
    } else {
        println!("FAILED: tolerance exceeded");
        Ok(exit::MISMATCH)
    }
}

fn cmd_plan(model: &Path, he: &HeArgs) -> Result<i32> {
    let m = load_model(model)?;
    let ctx = context(he)?;
    let p = plan(&m, &ctx, base_size(he, &m))?;
    print!("{}", render_plan(&p));
    Ok(exit::OK)
}

fn cmd_oracle(model: &Path, input: &Path, output: &Path) -> Result<i32> {
    let m = load_model(model)?;
    let x = fit_input(&m, read_feature_map(input)?, input)?;
    let y = oracle_pipeline(&m, &x)?;
    write_tensor(output, &RawTensor::from_plain(&y), Dtype::F32)?;
    let [c, h, w] = y.shape();
    println!("output {c}x{h}x{w} written to {}", output.display());
    Ok(exit::OK)
}

fn cmd_toy(model_out: &Path, seed: u64, input: Option<&Path>) -> Result<i32> {
    let m = toy_model(seed);
    save_model(model_out, &m)?;
    println!("model written to {}", model_out.display());
    if let Some(path) = input {
        let s = m.input();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let x = random_input(&mut rng, s.channels, s.height, s.width);
        write_tensor(path, &RawTensor::from_plain(&x), Dtype::F32)?;
        println!("input written to {}", path.display());
    }
    Ok(exit::OK)
}
