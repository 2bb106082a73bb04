use log::info;
use rpc_core::train::{self as core_train, Checkpoint, TrainError, Trainer};
use serde_json::json;

use crate::config::{log_resolved, resolve_train, CliConfig, TrainOverrides};
use crate::failure::{CmdResult, Failure};
use crate::TrainArgs;

fn classify(e: TrainError) -> Failure {
    match e {
        TrainError::Config(_) | TrainError::NoLargeImage { .. } | TrainError::Dataset(_) => Failure::config(e),
        TrainError::Checkpoint(_) => Failure::checkpoint(e),
        other => Failure::runtime(other),
    }
}

pub fn run(config: &CliConfig, args: TrainArgs) -> CmdResult {
    let mut flags: TrainOverrides = Vec::new();
    let mut set = |key: &'static str, v: Option<serde_json::Value>| {
        if let Some(v) = v {
            flags.push((key, v));
        }
    };
    set("seed", args.seed.map(|v| json!(v)));
    set("steps", args.steps.map(|v| json!(v)));
    set("learning_rate", args.learning_rate.map(|v| json!(v)));
    set("batch_size", args.batch_size.map(|v| json!(v)));
    set("patch_size", args.patch_size.map(|v| json!(v)));
    set("iterations", args.iterations.map(|v| json!(v)));
    set("k_prime", args.k_prime.map(|v| json!(v)));
    set("k_diffuse", args.k_diffuse.map(|v| json!(v)));
    set("dataset", args.dataset.map(|v| json!(v)));
    set("output", args.output.map(|v| json!(v)));
    set("checkpoint_interval", args.checkpoint_interval.map(|v| json!(v)));
    let resolved = resolve_train(config, args.preset, flags)?;
    log_resolved("train", &resolved);

    let images = core_train::load_dataset(&resolved.dataset).map_err(classify)?;
    info!("loaded {} images from {}", images.len(), resolved.dataset.display());
    let mut trainer = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path).map_err(|e| Failure::Checkpoint(format!("{}: {e}", path.display())))?;
            info!("resuming from {} at step {}", path.display(), ck.step);
            Trainer::resume(resolved.clone(), images, ck).map_err(classify)?
        }
        None => Trainer::new(resolved.clone(), images).map_err(classify)?,
    };
    let every = (resolved.steps / 20).max(1);
    let summary = core_train::run(&mut trainer, |r| {
        if r.step % every == 0 {
            info!("step {} loss {:.6} baseline {:.6} grad norm {:.4}", r.step, r.loss, r.baseline, r.grad_norm);
        }
    })
    .map_err(classify)?;
    println!(
        "trained {} steps; loss log {}; final checkpoint {}",
        summary.losses.len(),
        resolved.output.join("loss.csv").display(),
        summary.final_checkpoint.display()
    );
    Ok(())
}
