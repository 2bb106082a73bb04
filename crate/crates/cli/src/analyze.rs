use std::str::FromStr;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rpc_core::codec::{ArchitectureConfig, Model};
use rpc_core::image_io::write_synthetic_corpus;
use rpc_core::support::{
    empirical_receptive_field, iir_error, iir_simulate, image_support, max_support_bits, min_priming, Probe,
};

use crate::codec::load_model;
use crate::config::{log_resolved, CliConfig};
use crate::failure::{CmdResult, Failure};
use crate::{AnalyzeArgs, SynthArgs};

fn triple<A: FromStr, B: FromStr, C: FromStr>(flag: &str, text: &str) -> CmdResult<(A, B, C)> {
    let bad = || Failure::Config(format!("--{flag} expects three comma-separated values, got {text:?}"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok((
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    ))
}

pub fn analyze(config: &CliConfig, args: AnalyzeArgs) -> CmdResult {
    if let Some(text) = &args.support {
        let (t, kp, kd): (usize, usize, usize) = triple("support", text)?;
        let stacks = max_support_bits(t, kp, kd).map_err(Failure::config)?;
        let pixels = image_support(t, kp, kd).map_err(Failure::config)?;
        println!("t,k_prime,k_diffuse,support_stacks,support_pixels");
        println!("{t},{kp},{kd},{stacks},{pixels}");
        return Ok(());
    }
    if let Some(text) = &args.iir {
        let (n, a, t_max): (usize, f64, usize) = triple("iir", text)?;
        let sim = iir_simulate(n, a, t_max).map_err(Failure::config)?;
        println!("t,closed_form,simulated");
        for (t, s) in sim[n - 1].iter().enumerate() {
            println!("{t},{},{s}", iir_error(n, a, t).map_err(Failure::config)?);
        }
        let depth = min_priming(n, a).map_err(Failure::config)?;
        info!("{n} filters at a = {a}: error falls to a^2 after {depth} steps");
        return Ok(());
    }

    let model = match &args.checkpoint {
        Some(_) => load_model(config, args.checkpoint.clone(), args.prime, args.diffuse)?.1,
        None => {
            let arch = config.codec.architecture.clone().unwrap_or_else(ArchitectureConfig::desk);
            let arch = arch.with_priming(args.prime.unwrap_or(0), args.diffuse.unwrap_or(0));
            Model::init(arch, &mut ChaCha8Rng::seed_from_u64(args.seed)).map_err(Failure::config)?
        }
    };
    let probe = match args.probe.as_str() {
        "gradient" => Probe::Gradient { offset: (0, 0) },
        _ => Probe::Flip,
    };
    let (kp, kd) = (model.config().k_prime, model.config().k_diffuse);
    log_resolved(
        "analyze",
        &serde_json::json!({
            "probe": args.probe, "t_max": args.t_max, "images": args.images, "seed": args.seed,
            "k_prime": kp, "k_diffuse": kd, "checkpoint": args.checkpoint,
        }),
    );
    println!("t,analytic_stacks,width_stacks,height_stacks");
    for t in 0..=args.t_max {
        let analytic = max_support_bits(t, kp, kd).map_err(Failure::config)?;
        let grid = 2 * analytic as usize + 1;
        let field = empirical_receptive_field(&model, t, grid, args.images, args.seed, probe).map_err(Failure::eval)?;
        println!("{t},{analytic},{},{}", field.width_stacks, field.height_stacks);
    }
    Ok(())
}

pub fn synth_corpus(args: SynthArgs) -> CmdResult {
    let bad = || Failure::Config(format!("--size expects N or HxW, got {:?}", args.size));
    let (h, w) = match args.size.split_once(['x', 'X']) {
        Some((h, w)) => (h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?),
        None => {
            let n: usize = args.size.parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    if h == 0 || w == 0 || args.count == 0 {
        return Err(Failure::Config("count and size must be positive".into()));
    }
    let paths = write_synthetic_corpus(&args.dir, args.count, h, w, args.seed).map_err(Failure::runtime)?;
    println!("wrote {} images to {}", paths.len(), args.dir.display());
    Ok(())
}
