//! `dsgan`: data preparation, training, generation and evaluation for the
//! dilated spatial GAN.
//!
//! Exit codes: 0 success, 1 validation error (bad flags or config), 2
//! runtime failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dilated_sgan::checkpoint::Checkpoint;
use dilated_sgan::data::{
    load_source, load_texture, make_toy_texture, PatchSampler, StripeOrientation, TextureImage,
    ToyTextureKind, ValueSpace,
};
use dilated_sgan::error::Error;
use dilated_sgan::eval::{emit_report, evaluate, summary_table};
use dilated_sgan::train::{generate, TrainOptions, Trainer};

use config::{resolve_under_root, RunConfig};

#[derive(Parser)]
#[command(name = "dsgan", version, about = "Dilated spatial GAN for ergodic texture synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural ergodic toy texture PNG.
    MakeToyData(MakeToyArgs),
    /// Train the adversarial pair on patches of a source image.
    Train(TrainArgs),
    /// Sample images from a trained checkpoint.
    Generate(GenerateArgs),
    /// Compare a real image set against synthetic images.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Stripes,
    Channels,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    Vertical,
    Horizontal,
}

#[derive(Args)]
struct MakeToyArgs {
    /// Base configuration file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<KindArg>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    band_width: Option<usize>,
    #[arg(long)]
    orientation: Option<OrientationArg>,
    #[arg(long)]
    band_count: Option<usize>,
    /// Output PNG path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Resume from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Noise grid height (output height is 2^deconv_layers times larger).
    #[arg(long)]
    noise_h: Option<usize>,
    /// Noise grid width.
    #[arg(long)]
    noise_w: Option<usize>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of real PNG images.
    #[arg(long)]
    real_dir: Option<PathBuf>,
    /// Directory of synthetic PNG images (alternative to --checkpoint).
    #[arg(long)]
    synthetic_dir: Option<PathBuf>,
    /// Checkpoint to sample synthetic images from (alternative to
    /// --synthetic-dir).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of synthetic images when sampling from a checkpoint.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Validation failures exit 1, runtime failures exit 2.
fn classify(err: &Error) -> u8 {
    match err {
        Error::InvalidParam { .. }
        | Error::UnsupportedImage { .. }
        | Error::PatchTooLarge { .. }
        | Error::NotDivisible { .. }
        | Error::ShapeMismatch { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    // clap's own usage errors are validation errors under this tool's
    // exit-code contract
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let result = match cli.command {
        Command::MakeToyData(args) => cmd_make_toy_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(classify(&err))
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(cfg)
}

fn cmd_make_toy_data(args: MakeToyArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.config)?;
    let toy = &mut cfg.data.toy;
    if let Some(kind) = args.kind {
        toy.kind = match kind {
            KindArg::Stripes => ToyTextureKind::Stripes,
            KindArg::Channels => ToyTextureKind::Channels,
        };
    }
    if let Some(h) = args.height {
        toy.height = h;
    }
    if let Some(w) = args.width {
        toy.width = w;
    }
    if let Some(s) = args.seed {
        toy.seed = s;
    }
    if let Some(b) = args.band_width {
        toy.band_width = b;
    }
    if let Some(o) = args.orientation {
        toy.orientation = match o {
            OrientationArg::Vertical => StripeOrientation::Vertical,
            OrientationArg::Horizontal => StripeOrientation::Horizontal,
        };
    }
    if let Some(c) = args.band_count {
        toy.band_count = c;
    }
    if let Some(out) = args.out {
        toy.out = Some(out);
    }

    let out = resolve_under_root(&cfg.data.toy.out.clone().ok_or_else(|| {
        Error::invalid_param("out", "give --out or set data.toy.out in the config")
    })?);

    let toy = &cfg.data.toy;
    let source = make_toy_texture(toy.kind, toy.height, toy.width, &toy.params(), toy.seed)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    TextureImage::new(source.pixels, ValueSpace::Storage).save_png(&out)?;
    cfg.write_snapshot(&snapshot_path_for_file(&out))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn snapshot_path_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push("_config.toml");
    out.with_file_name(name)
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.config)?;
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;

    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    cfg.write_snapshot(&out_dir.join("config_resolved.toml"))?;

    let source = match &cfg.data.source {
        Some(path) => load_source(path)?,
        None => {
            let toy = &cfg.data.toy;
            let source =
                make_toy_texture(toy.kind, toy.height, toy.width, &toy.params(), toy.seed)?;
            // keep a copy of the generated training data next to the run
            TextureImage::new(source.pixels.clone(), ValueSpace::Storage)
                .save_png(out_dir.join("training_source.png"))?;
            source
        }
    };

    let mut sampler = PatchSampler::new(source, cfg.data.patch_size, cfg.train.seed)?;
    let mut trainer = match &args.resume {
        Some(ck_path) => {
            let ck = Checkpoint::load(ck_path)?;
            let trainer = Trainer::from_checkpoint(&ck)?;
            trainer.restore_sampler(&mut sampler);
            trainer
        }
        None => Trainer::new(
            cfg.train.clone(),
            &cfg.network.generator_spec()?,
            &cfg.network.discriminator_spec()?,
        )?,
    };

    let opts = TrainOptions {
        out_dir: Some(out_dir.clone()),
        sample_count: 4,
    };
    let outcome = trainer.run(&mut sampler, &opts)?;

    let mut final_ck = outcome.checkpoint;
    final_ck.config_text = cfg.to_toml();
    let ck_path = out_dir.join("checkpoint_final.bin");
    final_ck.save(&ck_path)?;

    if let Some(reason) = outcome.abort {
        return Err(Error::TrainingAborted(format!(
            "{reason}; last good state kept at {}",
            out_dir.join("checkpoint_lastgood.bin").display()
        )));
    }
    let last = outcome.log.last().expect("nonempty log");
    println!(
        "trained {} iterations (loss_g={:.4}, loss_d={:.4}); checkpoint at {}",
        last.step,
        last.loss_g,
        last.loss_d,
        ck_path.display()
    );
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.config)?;
    if let Some(p) = args.checkpoint {
        cfg.generate.checkpoint = Some(p);
    }
    if let Some(h) = args.noise_h {
        cfg.generate.noise_height = h;
    }
    if let Some(w) = args.noise_w {
        cfg.generate.noise_width = w;
    }
    if let Some(c) = args.count {
        cfg.generate.count = c;
    }
    if let Some(s) = args.seed {
        cfg.generate.seed = s;
    }
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    cfg.validate()?;

    let ck_path = cfg.generate.checkpoint.clone().ok_or_else(|| {
        Error::invalid_param(
            "checkpoint",
            "give --checkpoint or set generate.checkpoint in the config",
        )
    })?;
    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    cfg.write_snapshot(&out_dir.join("config_resolved.toml"))?;

    let ck = Checkpoint::load(&ck_path)?;
    let images = generate(
        &ck,
        cfg.generate.noise_height,
        cfg.generate.noise_width,
        cfg.generate.count,
        cfg.generate.seed,
    )?;
    for (i, img) in images.iter().enumerate() {
        img.save_png(out_dir.join(format!("gen_{i:04}.png")))?;
    }
    println!(
        "wrote {} images of {}x{} to {}",
        images.len(),
        images[0].height(),
        images[0].width(),
        out_dir.display()
    );
    Ok(())
}

/// Reads every `.png` in a directory (sorted by file name) as a model-space
/// image.
fn load_image_dir(dir: &Path) -> Result<Vec<TextureImage>, Error> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid_param(
            "image directory",
            format!("{} contains no .png files", dir.display()),
        ));
    }
    paths.iter().map(|p| load_texture(p)).collect()
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let mut cfg = load_config(&args.config)?;
    if let Some(d) = args.real_dir {
        cfg.evaluate.real_dir = Some(d);
    }
    if let Some(d) = args.synthetic_dir {
        cfg.evaluate.synthetic_dir = Some(d);
    }
    if let Some(p) = args.checkpoint {
        cfg.generate.checkpoint = Some(p);
    }
    if let Some(c) = args.count {
        cfg.generate.count = c;
    }
    if let Some(s) = args.seed {
        cfg.generate.seed = s;
    }
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    cfg.validate()?;

    let real_dir = cfg.evaluate.real_dir.clone().ok_or_else(|| {
        Error::invalid_param("real_dir", "give --real-dir or set evaluate.real_dir")
    })?;
    let real = load_image_dir(&real_dir)?;

    let (synthetic, checkpoint_id) = match (&cfg.evaluate.synthetic_dir, &cfg.generate.checkpoint)
    {
        (Some(dir), _) => (load_image_dir(dir)?, None),
        (None, Some(ck_path)) => {
            let ck = Checkpoint::load(ck_path)?;
            let scale = ck.generator_spec.spatial_scale();
            let (h, w) = (real[0].height(), real[0].width());
            if h % scale != 0 || w % scale != 0 {
                return Err(Error::NotDivisible {
                    height: h,
                    width: w,
                    divisor: scale,
                });
            }
            let images = generate(
                &ck,
                h / scale,
                w / scale,
                cfg.generate.count,
                cfg.generate.seed,
            )?;
            let id = format!("{} (step {})", ck_path.display(), ck.step);
            (images, Some(id))
        }
        (None, None) => {
            return Err(Error::invalid_param(
                "synthetic images",
                "give --synthetic-dir or --checkpoint",
            ));
        }
    };

    let out_dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    cfg.write_snapshot(&out_dir.join("config_resolved.toml"))?;

    let report = evaluate(&real, &synthetic, &cfg.metrics, checkpoint_id)?;
    let files = emit_report(&report, &out_dir)?;

    println!("{}", summary_table(&report));
    for f in &files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
