use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rpc_core::eval::{rd_curves, Variant};
use rpc_core::image_io::load_dir;
use rpc_core::metrics::Metric;
use rpc_core::rd::{auc, bd_quality, bd_rate, BdOptions, RdCurve, RdError};
use serde_json::json;

use crate::codec::load_model;
use crate::config::{log_resolved, resolve, CliConfig};
use crate::failure::{CmdResult, Failure};
use crate::{BdArgs, EvalArgs};

fn parse_list<T>(names: &[String], parse: impl Fn(&str) -> Option<T>, what: &str) -> CmdResult<Vec<T>> {
    names
        .iter()
        .map(|n| parse(n.trim()).ok_or_else(|| Failure::Config(format!("unknown {what} {n:?}"))))
        .collect()
}

/// `rd.csv` → `rd.<variant>.<metric>.csv` in the same directory.
pub fn curve_path(out: &Path, variant: Variant, metric: Metric) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("rd");
    out.with_file_name(format!("{stem}.{}.{}.csv", variant.name(), metric.name()))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

pub fn eval(config: &CliConfig, args: EvalArgs) -> CmdResult {
    let e = &config.eval;
    let dataset = resolve("dataset", args.dataset, e.dataset.clone())
        .ok_or_else(|| Failure::Config("--dataset is required".into()))?;
    let variant_names = resolve("variants", args.variants, e.variants.clone()).unwrap_or_else(|| vec!["nominal".into()]);
    let metric_names = resolve("metrics", args.metrics, e.metrics.clone())
        .unwrap_or_else(|| vec!["psnr".into(), "ssim".into(), "msssim".into()]);
    let variants = parse_list(&variant_names, Variant::parse, "variant")?;
    let requested = parse_list(&metric_names, Metric::parse, "metric")?;
    let out = resolve("out", args.out, e.out.clone()).unwrap_or_else(|| PathBuf::from("rd.csv"));
    let (ckpt, model) = load_model(config, args.checkpoint, args.prime, args.diffuse)?;
    let max = model.config().max_iterations;
    let iterations = resolve("iterations", args.iterations, e.iterations).unwrap_or(max);
    if iterations == 0 || iterations > max {
        return Err(Failure::Config(format!("--iterations must be in 1..={max}, got {iterations}")));
    }
    log_resolved(
        "eval",
        &json!({
            "dataset": dataset, "checkpoint": ckpt, "variants": variant_names, "metrics": metric_names,
            "iterations": iterations, "out": out,
            "k_prime": model.config().k_prime, "k_diffuse": model.config().k_diffuse,
        }),
    );

    if !dataset.is_dir() {
        return Err(Failure::Config(format!("dataset directory {} does not exist", dataset.display())));
    }
    let images: Vec<_> = load_dir(&dataset).map_err(Failure::config)?.into_iter().map(|(_, im)| im).collect();
    let smallest = images.iter().map(|im| im.shape().height().min(im.shape().width())).min().unwrap_or(0);
    let metrics: Vec<Metric> = requested
        .into_iter()
        .filter(|m| {
            let ok = smallest >= m.min_size();
            if !ok {
                let (name, need) = (m.name(), m.min_size());
                warn!("skipping {name}: needs images of at least {need}x{need}, smallest is {smallest}");
            }
            ok
        })
        .collect();
    if metrics.is_empty() {
        return Err(Failure::Eval("no requested metric applies to these image sizes".into()));
    }
    info!("evaluating {} images at up to {iterations} iterations", images.len());
    let sets = rd_curves(&model, &images, &variants, &metrics, iterations).map_err(Failure::eval)?;

    let mut w = BufWriter::new(File::create(&out).map_err(io(&out))?);
    writeln!(w, "variant,metric,iterations,bpp,quality").map_err(io(&out))?;
    for set in &sets {
        for (i, (bpp, q)) in set.curve.points().iter().enumerate() {
            writeln!(w, "{},{},{},{bpp},{q}", set.variant.name(), set.metric.name(), i + 1).map_err(io(&out))?;
        }
        let path = curve_path(&out, set.variant, set.metric);
        set.curve.write_csv(File::create(&path).map_err(io(&path))?).map_err(Failure::runtime)?;
    }
    w.flush().map_err(io(&out))?;

    println!("variant,metric,auc,skipped");
    for set in &sets {
        match auc(&set.curve) {
            Ok(s) => println!("{},{},{:.6},{}", set.variant.name(), set.metric.name(), s.value, s.skipped),
            Err(e) => warn!("no AUC for {} {}: {e}", set.variant.name(), set.metric.name()),
        }
    }
    Ok(())
}

fn read_curve(path: &Path) -> CmdResult<RdCurve> {
    let file = File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    RdCurve::read_csv(file).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

pub fn bd(args: BdArgs) -> CmdResult {
    let reference = read_curve(&args.reference)?;
    let test = read_curve(&args.test)?;
    let options = BdOptions { extend_reference_to: args.extend_reference };
    let (name, result) = if args.quality {
        ("bd_quality_db", bd_quality(&reference, &test, options))
    } else {
        ("bd_rate_percent", bd_rate(&reference, &test, options))
    };
    let summary = result.map_err(|e| match e {
        RdError::NoOverlap(_) | RdError::TooFewPoints { .. } | RdError::Fit => Failure::eval(e),
        other => Failure::config(other),
    })?;
    if summary.skipped > 0 {
        warn!("skipped {} points with infinite quality", summary.skipped);
    }
    println!("measure,value,skipped");
    println!("{name},{},{}", summary.value, summary.skipped);
    Ok(())
}
