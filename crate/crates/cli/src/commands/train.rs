use anyhow::{bail, Result};
use clap::ArgMatches;
use dictlearn::eval::{evaluate_stream, EvalReport};
use dictlearn::store::{read_dataset, read_header, BatchReader};
use dictlearn::synth::{mmcs, GroundTruthDictionary, RecoveryReport};
use dictlearn::{Dictionary, TrainConfig, TrainReport};
use serde::Serialize;

use super::{announce, usage, Ctx};
use crate::cli::TrainArgs;
use crate::config::{Resolver, TrainSection};

#[derive(Serialize)]
struct Params<'a> {
    data: &'a std::path::Path,
    truth: Option<&'a std::path::Path>,
    holdout: Option<&'a std::path::Path>,
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct Report {
    train: TrainReport,
    recovery: Option<RecoveryReport>,
    holdout: Option<EvalReport>,
}

pub fn run(args: TrainArgs, m: &ArgMatches, s: TrainSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "train");
    let data_path = r.required(r.path(args.data, s.data), "data")?;
    let out = r.required(r.path(args.out, s.out), "out")?;
    let truth_path = r.path(args.truth, s.truth);
    let holdout_path = r.path(args.holdout, s.holdout);

    let alpha = if r.on_command_line("alpha") {
        args.alpha
    } else if let Some(p) = args.preset {
        p.alpha()
    } else {
        s.alpha.or(s.preset.map(|p| p.alpha())).unwrap_or(args.alpha)
    };
    let tied = if args.untied { false } else { s.tied.unwrap_or(true) };
    let dead_reinit = args.dead_reinit || s.dead_reinit.unwrap_or(false);
    let config = TrainConfig {
        alpha,
        ratio: r.value("ratio", args.ratio, s.ratio),
        learning_rate: r.value("learning_rate", args.learning_rate, s.learning_rate),
        epochs: r.value("epochs", args.epochs, s.epochs),
        batch_size: r.value("batch_size", args.batch_size, s.batch_size),
        seed: ctx.seed,
        tied,
        dead_reinit,
        dead_threshold_per_10m: r.value("dead_threshold", args.dead_threshold, s.dead_threshold),
    };

    let mut run = ctx.run("train", out);
    run.input("data", &data_path)?;
    if let Some(p) = &truth_path {
        run.input("truth", p)?;
    }
    if let Some(p) = &holdout_path {
        run.input("holdout", p)?;
    }
    let header = read_header(&data_path)?;
    let d_in = header.d_in as usize;
    config.validate(d_in).map_err(usage)?;
    if let Some(p) = &holdout_path {
        let h = read_header(p)?;
        if h.d_in != header.d_in {
            bail!("holdout {} has d_in {}, training data has {d_in}", p.display(), h.d_in);
        }
    }
    let truth = match &truth_path {
        Some(p) => {
            let dict = Dictionary::load(p)?;
            if dict.d_in() != d_in {
                bail!("truth {} has d_in {}, training data has {d_in}", p.display(), dict.d_in());
            }
            Some(GroundTruthDictionary::new(dict.decoder().mapv(f64::from))?)
        }
        None => None,
    };
    run.prepare()?;

    let data = read_dataset(&data_path)?;
    let (dict, train_report) = dictlearn::sae::train(&data, &config)?;
    drop(data);

    let recovery = truth.as_ref().map(|t| mmcs(dict.decoder(), t)).transpose()?;
    let holdout = match &holdout_path {
        Some(p) => Some(evaluate_stream(&dict, BatchReader::open(p, 4096)?, config.dead_threshold_per_10m)?),
        None => None,
    };

    let path = run.out_path("dictionary.sdic");
    dict.save(&path)?;
    run.output(path.clone());
    announce(&path);
    let path = run.out_path("loss.csv");
    train_report.write_loss_csv(&path)?;
    run.output(path);
    let report = Report {
        train: train_report,
        recovery,
        holdout,
    };
    announce(&run.write_json("report.json", &report)?);

    let params = Params {
        data: &data_path,
        truth: truth_path.as_deref(),
        holdout: holdout_path.as_deref(),
        train: &config,
    };
    announce(&run.finish(&params)?);
    Ok(())
}
