//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! problem, 2 I/O or file-format problem, 3 numeric failure during
//! computation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use finpaint::checkpoint::Snapshot;
use finpaint::config::{
    apply_key, train_config_from_file, train_config_to_string, CHECKPOINT_DIR_ENV,
};
use finpaint::conv::{conv2d, ConvSpec, Mode, PadMode};
use finpaint::erf::erf_probe;
use finpaint::experiments::{run_paired_study, ExperimentConfig};
use finpaint::ffc::{FfcConfig, FfcLayer};
use finpaint::imageio::{load_pgm, load_png, save_pgm, save_png};
use finpaint::maskgen::{sample_training_mask_labeled, MaskKind, MaskPolicy};
use finpaint::metrics::inpaint_metrics;
use finpaint::nets::stack_input;
use finpaint::synth::{synth_texture, TextureSpec};
use finpaint::train::{inpaint_with, load_generator, TrainConfig, Trainer};
use finpaint::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "finpaint", version, about = "Fourier-convolution inpainting at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set iterations=500. Repeatable;
    /// applied after the file in the order given.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => train_config_from_file(p)?,
            None => TrainConfig::default(),
        };
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set '{s}': expected key=value")))?;
            apply_key(&mut cfg, k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a generator/discriminator pair and write a loss log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Loss log CSV destination; stdout when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Checkpoint directory. The FINPAINT_CHECKPOINT_DIR environment
        /// variable overrides this flag when set.
        #[arg(long)]
        ckpt_dir: Option<PathBuf>,
    },
    /// Fill the masked region of an image with a trained generator.
    Inpaint {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint written by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input RGB image (PNG).
        #[arg(long)]
        image: PathBuf,
        /// Binary mask (PGM, 255 = known, 0 = missing).
        #[arg(long)]
        mask: PathBuf,
        /// Output PNG; equals the input wherever the mask says known.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a batch of masks to PGM files plus a coverage stats CSV.
    Maskgen {
        #[arg(long, default_value = "large")]
        policy: MaskPolicy,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Square mask side in pixels.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Effective-receptive-field probe: gradient footprint of one output
    /// unit over the input frame.
    Erf {
        /// conv3x3 | ffc | generator
        #[arg(long, default_value = "conv3x3")]
        model: String,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Checkpoint for --model generator; random init when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        /// Optional sensitivity-map PNG (max-normalized).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on held-out synthetic textures.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Test-mask policy (gated to hide between 0 and 50% of the frame).
        #[arg(long, default_value = "wide-only")]
        policy: MaskPolicy,
        /// Metrics CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired Fourier-vs-regular study: wide-mask quality at the training
    /// resolution and transfer to larger frames.
    Experiment {
        /// Comma-separated training seeds.
        #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        eval_count: Option<usize>,
        /// Comma-separated evaluation resolutions; first is the training crop.
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<usize>>,
        /// Texture family: stripes | checkerboard | brick-grid | mixed.
        #[arg(long)]
        pattern: Option<String>,
        /// Texture period range in pixels.
        #[arg(long)]
        min_period: Option<usize>,
        #[arg(long)]
        max_period: Option<usize>,
        /// Generator learning-rate override.
        #[arg(long)]
        lr_g: Option<f64>,
        /// Where CSVs and side-by-side panels go.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn open_sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    })
}

fn run_train(config: ConfigArgs, log: Option<PathBuf>, ckpt_dir: Option<PathBuf>) -> Result<()> {
    let cfg = config.resolve()?;
    let ckpt_dir = std::env::var_os(CHECKPOINT_DIR_ENV)
        .map(PathBuf::from)
        .or(ckpt_dir);
    if let Some(dir) = &ckpt_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.cfg"), train_config_to_string(&cfg))?;
    }
    let mut trainer = Trainer::new(cfg)?;
    let mut sink = open_sink(log.as_deref())?;
    trainer.run(&mut sink, ckpt_dir.as_deref())?;
    Ok(())
}

fn run_inpaint(
    config: ConfigArgs,
    ckpt: &Path,
    image: &Path,
    mask: &Path,
    out: &Path,
) -> Result<()> {
    let cfg = config.resolve()?;
    let snap = Snapshot::load(ckpt)?;
    let mut gen = load_generator(cfg.gen, &snap)?;
    let x = load_png(image)?;
    let m = load_pgm(mask)?;
    let (_, _, h, w) = x.dims4()?;
    if (h, w) != (m.h, m.w) {
        return Err(Error::Config(format!(
            "image is {h}x{w} but mask is {}x{}",
            m.h, m.w
        )));
    }
    let o = inpaint_with(&mut gen, &x, &m)?;
    save_png(&o, out)
}

fn run_maskgen(policy: MaskPolicy, count: usize, size: usize, seed: u64, dir: &Path) -> Result<()> {
    if count == 0 || size == 0 {
        return Err(Error::Config("maskgen: count and size must be positive".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = String::from("index,file,kind,coverage\n");
    let mut total = 0.0;
    for i in 0..count {
        let (m, kind) = sample_training_mask_labeled(&mut rng, size, size, policy)?;
        let name = format!("mask_{i:04}.pgm");
        save_pgm(&m, &dir.join(&name))?;
        let cov = m.missing_fraction();
        total += cov;
        let kind = match kind {
            MaskKind::Wide => "wide",
            MaskKind::Narrow => "narrow",
            MaskKind::Box => "box",
        };
        stats.push_str(&format!("{i},{name},{kind},{cov}\n"));
    }
    stats.push_str(&format!("mean,,,{}\n", total / count as f64));
    std::fs::write(dir.join("stats.csv"), stats)?;
    println!("wrote {count} masks to {}", dir.display());
    Ok(())
}

fn run_erf(
    model: &str,
    size: usize,
    ckpt: Option<&Path>,
    config: ConfigArgs,
    out: Option<&Path>,
) -> Result<()> {
    if size < 8 {
        return Err(Error::Config("erf: size must be at least 8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Probe with a mid-gray frame plus noise so nonlinearities stay active.
    fn noisy(rng: &mut ChaCha8Rng, c: usize, size: usize) -> Result<Tensor> {
        use rand::Rng;
        let data = (0..c * size * size)
            .map(|_| rng.random_range(0.3..0.7))
            .collect();
        Tensor::constant(&[1, c, size, size], data)
    }
    let map = match model {
        "conv3x3" => {
            use rand::Rng;
            let wdata = (0..9).map(|_| rng.random_range(0.1..1.0)).collect();
            let weight = Tensor::new(&[1, 1, 3, 3], wdata, true)?;
            let input = noisy(&mut rng, 1, size)?;
            let spec = ConvSpec::same(3, PadMode::Zero);
            erf_probe(|x| conv2d(x, &weight, None, spec), &input, size / 2, size / 2)?
        }
        "ffc" => {
            let mut layer = FfcLayer::new(&mut rng, FfcConfig::new(4, 4, 0.5))?;
            let input = noisy(&mut rng, 4, size)?;
            erf_probe(|x| layer.forward(x, Mode::Eval, false), &input, size / 2, size / 2)?
        }
        "generator" => {
            let cfg = config.resolve()?;
            let mut gen = match ckpt {
                Some(p) => load_generator(cfg.gen, &Snapshot::load(p)?)?,
                None => finpaint::nets::Generator::new(cfg.gen, cfg.seed)?,
            };
            let x = noisy(&mut rng, 3, size)?;
            let m = finpaint::maskgen::Mask::full_known(size, size).to_tensor();
            let input = stack_input(&x, &m)?;
            erf_probe(|x| gen.forward(x, Mode::Eval, false), &input, size / 2, size / 2)?
        }
        other => return Err(Error::Config(format!("unknown erf model '{other}'"))),
    };
    println!(
        "model={model} size={size} footprint_pixels={} footprint_fraction={:.6}",
        map.footprint_pixels(),
        map.footprint_fraction()
    );
    if let Some(p) = out {
        save_png(&map.to_image()?, p)?;
    }
    Ok(())
}

fn run_eval(
    config: ConfigArgs,
    ckpt: &Path,
    count: usize,
    size: usize,
    seed: u64,
    policy: MaskPolicy,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = config.resolve()?;
    let mut gen = load_generator(cfg.gen, &Snapshot::load(ckpt)?)?;
    let spec: TextureSpec = cfg.texture;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sink = open_sink(out)?;
    writeln!(sink, "index,l1,l2,psnr,missing_pixels")?;
    let (mut l1, mut l2, mut psnr) = (0.0, 0.0, 0.0);
    for i in 0..count {
        let sample = synth_texture(&mut rng, &spec, size, size)?;
        let mask = finpaint::maskgen::sample_test_mask(&mut rng, size, size, policy, 64)?;
        let o = inpaint_with(&mut gen, &sample.image, &mask)?;
        let r = inpaint_metrics(&sample.image, &o, &mask)?;
        writeln!(sink, "{i},{},{},{},{}", r.l1, r.l2, r.psnr, r.missing_pixels)?;
        l1 += r.l1;
        l2 += r.l2;
        psnr += r.psnr;
    }
    let n = count as f64;
    writeln!(sink, "mean,{},{},{},", l1 / n, l2 / n, psnr / n)?;
    Ok(())
}

struct ExperimentOverrides {
    iterations: Option<usize>,
    eval_count: Option<usize>,
    resolutions: Option<Vec<usize>>,
    pattern: Option<String>,
    min_period: Option<usize>,
    max_period: Option<usize>,
    lr_g: Option<f64>,
}

fn run_experiment(seeds: Vec<u64>, ov: ExperimentOverrides, out_dir: &Path) -> Result<()> {
    let mut cfg = ExperimentConfig { seeds, ..Default::default() };
    if let Some(it) = ov.iterations {
        cfg.iterations = it;
    }
    if let Some(n) = ov.eval_count {
        cfg.eval_count = n;
    }
    if let Some(rs) = ov.resolutions {
        cfg.crop = rs[0];
        cfg.eval_resolutions = rs;
    }
    if let Some(p) = ov.pattern {
        cfg.texture.pattern = p.parse()?;
    }
    if let Some(p) = ov.min_period {
        cfg.texture.min_period = p;
    }
    if let Some(p) = ov.max_period {
        cfg.texture.max_period = p;
    }
    if let Some(lr) = ov.lr_g {
        cfg.lr_g = lr;
    }
    std::fs::create_dir_all(out_dir)?;
    let mut stderr = std::io::stderr();
    let results = run_paired_study(&cfg, Some(&mut stderr), Some(out_dir))?;
    std::fs::write(out_dir.join("wide_mask.csv"), results.wide_mask_csv())?;
    std::fs::write(out_dir.join("resolution.csv"), results.resolution_csv())?;
    let n = cfg.seeds.len();
    println!(
        "params: fourier={} regular={}",
        results.fourier_params, results.regular_params
    );
    println!(
        "wide-mask: fourier wins {}/{n}; resolution transfer: fourier wins {}/{n}",
        results.fourier_wide_mask_wins(),
        results.fourier_transfer_wins()
    );
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train { config, log, ckpt_dir } => run_train(config, log, ckpt_dir),
        Cmd::Inpaint { config, ckpt, image, mask, out } => {
            run_inpaint(config, &ckpt, &image, &mask, &out)
        }
        Cmd::Maskgen { policy, count, size, seed, out_dir } => {
            run_maskgen(policy, count, size, seed, &out_dir)
        }
        Cmd::Erf { model, size, ckpt, config, out } => {
            run_erf(&model, size, ckpt.as_deref(), config, out.as_deref())
        }
        Cmd::Eval { config, ckpt, count, size, seed, policy, out } => {
            run_eval(config, &ckpt, count, size, seed, policy, out.as_deref())
        }
        Cmd::Experiment {
            seeds,
            iterations,
            eval_count,
            resolutions,
            pattern,
            min_period,
            max_period,
            lr_g,
            out_dir,
        } => run_experiment(
            seeds,
            ExperimentOverrides {
                iterations,
                eval_count,
                resolutions,
                pattern,
                min_period,
                max_period,
                lr_g,
            },
            &out_dir,
        ),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Image(_) | Error::Checkpoint(_) => 2,
        Error::NonFinite(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
