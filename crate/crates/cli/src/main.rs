//! `miniseg` command line: train, eval, bench, demo, gradcheck, dump-data.
//!
//! Exit codes: 0 success, 1 contract/config errors (including bad flags,
//! with usage printed), 2 I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use miniseg_cli::{evalrun, flops, gradsuite, latency, ppm};
use miniseg_core::checkpoint;
use miniseg_core::config::{MetaArch, ModelConfig};
use miniseg_core::data::{
    gen_pseudo_video, gen_scene, mask_rle, sample_prompts, DatasetStream, PromptMode,
};
use miniseg_core::error::Error;
use miniseg_core::infer::{infer_interactive, infer_panoptic, infer_prompt_video, infer_vis};
use miniseg_core::model::build_model;
use miniseg_core::prompt::{format_prompt_file, PromptKind};
use miniseg_core::train::{clip_tensor, train_step, AdamW};
use miniseg_core::update::UpdateKind;

#[derive(Parser)]
#[command(name = "miniseg", about = "multi-purpose segmentation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on the synthetic mixed-task stream.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on held-out synthetic data.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 50)]
        scenes: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// FLOPs, parameters, and forward latency for a decoder/arch choice.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "pool_dcg")]
        decoder: String,
        #[arg(long, default_value = "c")]
        arch: String,
        #[arg(long, default_value_t = 30)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Run one scene/clip through a checkpoint and write PPM overlays.
    Demo {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        scope: String,
    },
    /// Write synthetic scenes as PPM images with ASCII ground truth.
    DumpData {
        #[arg(long, default_value_t = 4)]
        scenes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // contract errors (bad/unknown flags) exit 1 with usage text
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> miniseg_core::Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::load(p),
        None => Ok(ModelConfig::default()),
    }
}

fn run(cli: Cli) -> miniseg_core::Result<()> {
    match cli.command {
        Command::Train {
            config,
            steps,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            cfg.validate()?;
            cmd_train(&cfg, seed, &out)
        }
        Command::Eval {
            ckpt,
            task,
            scenes,
            seed,
        } => cmd_eval(&ckpt, &task, scenes, seed),
        Command::Bench {
            config,
            decoder,
            arch,
            iters,
            warmup,
        } => {
            let mut cfg = load_config(&config)?;
            cfg.decoder_kind = UpdateKind::from_name(&decoder)?;
            cfg.meta_arch = MetaArch::from_name(&arch)?;
            cfg.validate()?;
            cmd_bench(&cfg, iters, warmup)
        }
        Command::Demo {
            ckpt,
            task,
            seed,
            out,
        } => cmd_demo(&ckpt, &task, seed, &out),
        Command::Gradcheck { scope } => cmd_gradcheck(&scope),
        Command::DumpData { scenes, seed, out } => cmd_dump_data(scenes, seed, &out),
    }
}

fn cmd_train(cfg: &ModelConfig, seed: u64, out: &Path) -> miniseg_core::Result<()> {
    let mut model = build_model(cfg, seed)?;
    let mut opt = AdamW::new(cfg.train);
    let stream = DatasetStream::new(cfg.data, cfg.input_size, cfg.clip_len, seed ^ 0xda7a_5eed)?;
    for (i, item) in stream.take(cfg.train.steps as usize).enumerate() {
        let batch = item?;
        let loss = train_step(&mut model, &batch, &mut opt, cfg)?;
        println!(
            "step={} loss={:.6} lr={:.3e} batch={}",
            i + 1,
            loss,
            opt.lr_at(opt.step),
            batch.kind_name()
        );
    }
    checkpoint::save(&model, &opt, out)?;
    println!("saved={}", out.display());
    Ok(())
}

fn cmd_eval(ckpt: &Path, task: &str, scenes: u64, seed: u64) -> miniseg_core::Result<()> {
    let (model, _opt, data) = checkpoint::load_model(ckpt)?;
    let dcfg = data.config.data;
    match task {
        "panoptic" => {
            let report = evalrun::eval_panoptic(&model, scenes, seed, &dcfg)?;
            print!("{}", report.table());
            print!("task=panoptic scenes={scenes} seed={seed} {}", report.kv_lines());
        }
        "vis" => {
            let report = evalrun::eval_vis(&model, scenes, seed, &dcfg)?;
            print!("{}", report.table());
            print!("task=vis clips={scenes} seed={seed} {}", report.kv_lines());
        }
        "interactive" => {
            let miou = evalrun::eval_interactive(&model, scenes, seed, &dcfg)?;
            println!("task=interactive scenes={scenes} seed={seed} miou={miou:.4}");
        }
        "promptvideo" => {
            let miou = evalrun::eval_prompt_video(&model, scenes, seed, &dcfg)?;
            println!("task=promptvideo clips={scenes} seed={seed} pv_miou={miou:.4}");
        }
        other => {
            return Err(Error::Config(format!(
                "unknown task '{other}' (expected panoptic|vis|interactive|promptvideo)"
            )))
        }
    }
    Ok(())
}

fn cmd_bench(cfg: &ModelConfig, iters: usize, warmup: usize) -> miniseg_core::Result<()> {
    let report = flops::count_flops(cfg, cfg.decoder_kind, cfg.input_size);
    print!("arch={} {}", cfg.meta_arch.name(), report.kv_lines());
    let model = build_model(cfg, 0)?;
    let exact_params = miniseg_core::params::count_params(&model);
    println!("params_exact={exact_params}");
    let image = miniseg_tensor::Tensor::full(&[3, cfg.input_size, cfg.input_size], 0.5);
    let lat = latency::measure_latency(&model, &image, iters, warmup)?;
    print!("{}", lat.kv_lines());
    Ok(())
}

fn cmd_demo(ckpt: &Path, task: &str, seed: u64, out: &Path) -> miniseg_core::Result<()> {
    std::fs::create_dir_all(out)?;
    let (model, _opt, data) = checkpoint::load_model(ckpt)?;
    let dcfg = data.config.data;
    let size = model.cfg.input_size;
    let scene = gen_scene(seed, size, &dcfg)?;
    ppm::write_ppm(&out.join("input.ppm"), size, size, &ppm::image_to_rgb(&scene.image))?;
    match task {
        "panoptic" => {
            let result = infer_panoptic(&model, &scene.image, &model.cfg.infer)?;
            let overlay = ppm::panoptic_overlay(&scene.image, &result, 0.55);
            ppm::write_ppm(&out.join("panoptic.ppm"), size, size, &overlay)?;
            println!("task=panoptic segments={}", result.segments.len());
        }
        "vis" => {
            let clip = gen_pseudo_video(&scene, model.cfg.clip_len, seed ^ 0x71d)?;
            let input = clip_tensor(&clip)?;
            let tracks = infer_vis(&model, &input, &model.cfg.infer)?;
            for (t, frame) in clip.frames.iter().enumerate() {
                let mut rgb = ppm::image_to_rgb(&frame.image);
                for track in &tracks {
                    if track.present[t] {
                        let tint = ppm::id_color(track.id);
                        let base = rgb.clone();
                        for (p, &m) in track.masks[t].iter().enumerate() {
                            if m {
                                for ch in 0..3 {
                                    rgb[3 * p + ch] = (0.45 * base[3 * p + ch] as f64
                                        + 0.55 * tint[ch] as f64)
                                        .round() as u8;
                                }
                            }
                        }
                    }
                }
                ppm::write_ppm(&out.join(format!("frame_{t}.ppm")), size, size, &rgb)?;
            }
            println!("task=vis tracks={}", tracks.len());
        }
        "interactive" => {
            let (samples, _) = sample_prompts(&scene, PromptMode::Test, seed ^ 0xcafe);
            let prompts: Vec<_> = samples.iter().map(|s| s.prompt).collect();
            std::fs::write(out.join("prompts.txt"), format_prompt_file(&prompts))?;
            let masks = infer_interactive(&model, &scene.image, &prompts)?;
            let mut marked = ppm::image_to_rgb(&scene.image);
            for p in &prompts {
                if let PromptKind::Point { x, y } = p.kind {
                    ppm::draw_marker(&mut marked, size, size, x as usize, y as usize, [255, 40, 40]);
                }
            }
            ppm::write_ppm(&out.join("input_prompts.ppm"), size, size, &marked)?;
            for (k, mask) in masks.iter().enumerate() {
                let overlay = ppm::mask_overlay(&scene.image, mask, ppm::id_color(k as u32 + 1), 0.55);
                ppm::write_ppm(&out.join(format!("mask_{k}.ppm")), size, size, &overlay)?;
            }
            println!("task=interactive prompts={}", prompts.len());
        }
        "promptvideo" => {
            let clip = gen_pseudo_video(&scene, model.cfg.clip_len, seed ^ 0x3c)?;
            let input = clip_tensor(&clip)?;
            let (samples, _) = sample_prompts(&clip.frames[0], PromptMode::Test, seed ^ 0x77);
            let prompt = samples
                .iter()
                .find(|s| clip.frames[0].entities[s.target_index].is_thing)
                .map(|s| s.prompt)
                .ok_or_else(|| Error::Contract("scene has no thing to prompt".into()))?;
            let masks = infer_prompt_video(&model, &input, &prompt)?;
            for (t, frame) in clip.frames.iter().enumerate() {
                let overlay = ppm::mask_overlay(&frame.image, &masks[t], [240, 60, 60], 0.55);
                ppm::write_ppm(&out.join(format!("pv_frame_{t}.ppm")), size, size, &overlay)?;
            }
            println!("task=promptvideo frames={}", masks.len());
        }
        other => {
            return Err(Error::Config(format!(
                "unknown task '{other}' (expected panoptic|vis|interactive|promptvideo)"
            )))
        }
    }
    Ok(())
}

fn cmd_gradcheck(scope: &str) -> miniseg_core::Result<()> {
    let reports = match scope {
        "ops" => gradsuite::ops_suite()?,
        "decoder" => gradsuite::decoder_suite()?,
        "loss" => gradsuite::loss_suite()?,
        other => {
            return Err(Error::Config(format!(
                "unknown scope '{other}' (expected ops|decoder|loss)"
            )))
        }
    };
    let mut all_passed = true;
    for r in &reports {
        println!("{r}");
        all_passed &= r.passed;
    }
    if all_passed {
        Ok(())
    } else {
        Err(Error::Contract("gradient check failed".into()))
    }
}

fn cmd_dump_data(scenes: u64, seed: u64, out: &Path) -> miniseg_core::Result<()> {
    std::fs::create_dir_all(out)?;
    let cfg = ModelConfig::default();
    for i in 0..scenes {
        let scene = gen_scene(seed.wrapping_add(i), cfg.input_size, &cfg.data)?;
        let size = scene.size;
        ppm::write_ppm(
            &out.join(format!("scene_{i}.ppm")),
            size,
            size,
            &ppm::image_to_rgb(&scene.image),
        )?;
        let mut gt = String::new();
        for e in &scene.entities {
            let instance = e.instance_id.map(|v| v as i64).unwrap_or(-1);
            gt.push_str(&format!("{} {} {instance}", e.class_id, e.is_thing as u8));
            for count in mask_rle(&e.mask) {
                gt.push_str(&format!(" {count}"));
            }
            gt.push('\n');
        }
        std::fs::write(out.join(format!("scene_{i}.txt")), gt)?;
    }
    println!("scenes={scenes} out={}", out.display());
    Ok(())
}
