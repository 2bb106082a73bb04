use std::path::{Path, PathBuf};

use log::info;
use rpc_core::bitstream::{deserialize, measured_bpp, serialize};
use rpc_core::codec::{center, compress as encode, decompress as decode, nominal_bpp, uncenter, Model, TILE};
use rpc_core::image_io::{load_png, reflect_pad, save_png};
use rpc_core::sabr::{allocate, apply_mask, clamp_window, target_quality_for, tile_error};
use rpc_core::tensor::Tensor;
use rpc_core::train::Checkpoint;
use serde_json::json;

use crate::config::{log_resolved, resolve, CliConfig};
use crate::failure::{CmdResult, Failure};
use crate::{CompressArgs, DecompressArgs};

/// Loads a checkpoint as an inference model, refusing one whose layout
/// differs from the config's `codec.architecture`, and applies priming
/// overrides.
pub fn load_model(
    config: &CliConfig,
    flag: Option<PathBuf>,
    prime: Option<usize>,
    diffuse: Option<usize>,
) -> CmdResult<(PathBuf, Model<f64>)> {
    let path = resolve("checkpoint", flag, config.codec.checkpoint.clone())
        .ok_or_else(|| Failure::Config("--checkpoint is required".into()))?;
    let ck = Checkpoint::load(&path).map_err(|e| Failure::Checkpoint(format!("{}: {e}", path.display())))?;
    if let Some(expected) = &config.codec.architecture {
        ck.check_architecture(expected).map_err(|e| Failure::Checkpoint(format!("{}: {e}", path.display())))?;
    }
    let mut model: Model<f64> = ck.model().map_err(Failure::checkpoint)?;
    let kp = resolve("prime", prime, config.codec.k_prime).unwrap_or(model.config().k_prime);
    let kd = resolve("diffuse", diffuse, config.codec.k_diffuse).unwrap_or(model.config().k_diffuse);
    model.set_priming(kp, kd);
    Ok((path, model))
}

fn write_png(path: &Path, centred: &Tensor<f64>, width: u32, height: u32) -> CmdResult {
    let cropped = centred.crop(0, 0, 0, height as usize, width as usize).map_err(Failure::runtime)?;
    save_png(path, &uncenter(&cropped)).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

pub fn compress(config: &CliConfig, args: CompressArgs) -> CmdResult {
    let (ckpt, model) = load_model(config, args.checkpoint, args.prime, args.diffuse)?;
    let max = model.config().max_iterations;
    let iterations = resolve("iterations", args.iterations, config.codec.iterations).unwrap_or(max);
    if iterations == 0 || iterations > max {
        return Err(Failure::Config(format!("--iterations must be in 1..={max}, got {iterations}")));
    }
    let entropy = args.entropy || config.codec.entropy.unwrap_or(false);
    let sabr = args.sabr || config.sabr.enabled.unwrap_or(false);
    let target_rate = resolve("target-rate", args.target_rate, config.sabr.target_rate).unwrap_or(iterations);
    let target_quality = resolve("target-quality", args.target_quality, config.sabr.target_quality);
    if sabr && (target_rate == 0 || target_rate > max) {
        return Err(Failure::Config(format!("--target-rate must be in 1..={max}, got {target_rate}")));
    }
    log_resolved(
        "compress",
        &json!({
            "input": args.input, "output": args.output, "checkpoint": ckpt,
            "iterations": iterations, "k_prime": model.config().k_prime, "k_diffuse": model.config().k_diffuse,
            "entropy": entropy, "sabr": sabr, "target_rate": target_rate, "target_quality": target_quality,
        }),
    );

    let image = load_png(&args.input).map_err(Failure::config)?;
    let s = image.shape();
    let (width, height) = (s.width() as u32, s.height() as u32);
    if s.width() % TILE != 0 || s.height() % TILE != 0 {
        info!("padding {width}x{height} to whole {TILE}x{TILE} tiles by reflection");
    }
    let padded = center(&reflect_pad(&image, TILE));

    let (bytes, recon, stored) = if sabr {
        let run = encode(&model, &padded, max).map_err(Failure::config)?;
        let curves = run.reconstructions.iter().map(|r| tile_error(&padded, r)).collect::<Result<Vec<_>, _>>();
        let curves = curves.map_err(Failure::eval)?;
        let quality = match target_quality {
            Some(q) => q,
            None => target_quality_for(&curves, target_rate).map_err(Failure::eval)?,
        };
        let map = allocate(&curves, quality, target_rate).map_err(Failure::eval)?;
        let kept = clamp_window(target_rate).1;
        let masked = apply_mask(&run.codes.truncated(kept), &map).map_err(Failure::eval)?;
        let bytes = serialize(&masked, Some(&map), width, height, entropy).map_err(Failure::stream)?;
        let recon = decode(&model, &masked, 0.0).map_err(Failure::runtime)?;
        info!(
            "allocated {:.3} iterations per tile on average (window {:?}, tile error target {quality:.6})",
            map.total() as f64 / (map.rows() * map.cols()) as f64,
            clamp_window(target_rate)
        );
        (bytes, recon, kept)
    } else {
        let mut run = encode(&model, &padded, iterations).map_err(Failure::config)?;
        let bytes = serialize(&run.codes, None, width, height, entropy).map_err(Failure::stream)?;
        (bytes, run.reconstructions.pop().expect("at least one iteration"), iterations)
    };
    std::fs::write(&args.output, &bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", args.output.display())))?;
    let bpp = measured_bpp(bytes.len(), width, height).map_err(Failure::stream)?;
    println!(
        "{}: {} bytes, {bpp:.6} bpp ({stored} iterations stored, nominal {:.6} bpp)",
        args.output.display(),
        bytes.len(),
        nominal_bpp(stored)
    );
    if let Some(path) = &args.recon {
        write_png(path, &recon, width, height)?;
    }
    Ok(())
}

pub fn decompress(config: &CliConfig, args: DecompressArgs) -> CmdResult {
    let bytes = std::fs::read(&args.input).map_err(|e| Failure::Config(format!("{}: {e}", args.input.display())))?;
    let container = deserialize(&bytes).map_err(|e| Failure::Stream(format!("{}: {e}", args.input.display())))?;
    let (ckpt, model) = load_model(config, args.checkpoint, args.prime, args.diffuse)?;
    log_resolved(
        "decompress",
        &json!({
            "input": args.input, "output": args.output, "checkpoint": ckpt,
            "k_prime": model.config().k_prime, "k_diffuse": model.config().k_diffuse,
        }),
    );
    let t = container.codes.iterations();
    if t > model.config().max_iterations {
        return Err(Failure::Checkpoint(format!(
            "stream holds {t} iterations but the model runs at most {}",
            model.config().max_iterations
        )));
    }
    let recon = decode(&model, &container.codes, 0.0).map_err(Failure::runtime)?;
    write_png(&args.output, &recon, container.width, container.height)?;
    println!("{}: {}x{}, {t} iterations", args.output.display(), container.width, container.height);
    Ok(())
}
