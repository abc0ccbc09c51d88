use std::path::Path;

use anyhow::{bail, Result};
use clap::ArgMatches;
use dictlearn::baselines::{
    fit_ica, fit_pca_online, make_fixed_directions, DirectionCodec, DirectionSet, FixedKind, IcaConfig, TopK,
};
use dictlearn::eval::{evaluate_stream, Codec, EvalReport};
use dictlearn::store::{read_dataset, read_header, read_sdic, BatchReader};
use dictlearn::Dictionary;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{announce, Ctx};
use crate::cli::BaselineKind;
use crate::cli::{BaselineArgs, EvalArgs};
use crate::config::{BaselineSection, EvalSection, Resolver, UsageError};

const BATCH: usize = 4096;

fn check_width(codec: &dyn Codec, data: &Path) -> Result<()> {
    let h = read_header(data)?;
    if h.d_in as usize != codec.d_in() {
        bail!("{} has d_in {}, the dictionary expects {}", data.display(), h.d_in, codec.d_in());
    }
    Ok(())
}

fn stream_eval(codec: &dyn Codec, data: &Path, threshold: u64) -> Result<EvalReport> {
    Ok(evaluate_stream(codec, BatchReader::open(data, BATCH)?, threshold)?)
}

pub fn run_eval(args: EvalArgs, m: &ArgMatches, s: EvalSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "eval");
    let dict_path = r.required(r.path(args.dict, s.dict), "dict")?;
    let data_path = r.required(r.path(args.data, s.data), "data")?;
    let out = r.required(r.path(args.out, s.out), "out")?;
    let linear = args.linear || s.linear.unwrap_or(false);
    let topk = r.optional(args.topk, s.topk);
    let threshold = r.value("dead_threshold", args.dead_threshold, s.dead_threshold);

    let mut run = ctx.run("eval", out);
    run.input("dict", &dict_path)?;
    run.input("data", &data_path)?;
    let rec = read_sdic(&dict_path)?;

    let (kind, report) = if rec.is_direction_set() {
        let set = DirectionSet::from_record(rec)?;
        let codec = DirectionCodec::new(&set, topk.map(|k_active| TopK { k_active }), !linear)
            .map_err(|e| UsageError(e.to_string()))?;
        check_width(&codec, &data_path)?;
        run.prepare()?;
        (json!(set.kind()), stream_eval(&codec, &data_path, threshold)?)
    } else {
        if linear || topk.is_some() {
            return Err(UsageError("--linear and --topk apply to direction sets only".into()).into());
        }
        let dict = Dictionary::from_record(rec)?;
        check_width(&dict, &data_path)?;
        run.prepare()?;
        (json!("dictionary"), stream_eval(&dict, &data_path, threshold)?)
    };

    let out_json = json!({
        "kind": kind,
        "linear": linear,
        "topk": topk,
        "fvu": report.fvu,
        "mean_l0": report.mean_l0,
        "dead_count": report.dead_count,
        "n_samples": report.n_samples,
    });
    announce(&run.write_json("eval.json", &out_json)?);
    let params = json!({
        "dict": dict_path,
        "data": data_path,
        "linear": linear,
        "topk": topk,
        "dead_threshold": threshold,
    });
    announce(&run.finish(&params)?);
    Ok(())
}

#[derive(Serialize)]
struct BaselineReport {
    kind: BaselineKind,
    k: usize,
    d_in: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    explained_variance: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ica_converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ica_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ica_rows: Option<usize>,
    linear: EvalReport,
    clamped: EvalReport,
}

pub fn run_baseline(args: BaselineArgs, m: &ArgMatches, s: BaselineSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "baseline");
    let data_path = r.required(r.path(args.data, s.data), "data")?;
    let out = r.required(r.path(args.out, s.out), "out")?;
    let kind = r.value("kind", args.kind, s.kind);
    let topk = r.optional(args.topk, s.topk);
    let subsample = r.value("ica_subsample", args.ica_subsample, s.ica_subsample);
    let max_iter = r.value("ica_max_iter", args.ica_max_iter, s.ica_max_iter);
    let threshold = r.value("dead_threshold", args.dead_threshold, s.dead_threshold);

    let mut run = ctx.run("baseline", out);
    run.input("data", &data_path)?;
    let d_in = read_header(&data_path)?.d_in as usize;
    let k = r.optional(args.k, s.k).unwrap_or(d_in);
    if k == 0 {
        return Err(UsageError("--k must be positive".into()).into());
    }
    if kind != BaselineKind::Random && k > d_in {
        return Err(UsageError(format!("--k {k} exceeds d_in {d_in} for {kind:?}")).into());
    }
    if kind == BaselineKind::Neuron && k != d_in {
        return Err(UsageError(format!("the neuron basis needs --k equal to d_in ({d_in})")).into());
    }
    if kind == BaselineKind::Ica && subsample == 0 {
        return Err(UsageError("--ica-subsample must be positive".into()).into());
    }
    if let Some(t) = topk {
        if t == 0 || t > k {
            return Err(UsageError(format!("--topk must lie in 1..={k}")).into());
        }
    }
    run.prepare()?;

    let mut report_extra = (None, None, None, None);
    let set = match kind {
        BaselineKind::Pca => {
            let fit = fit_pca_online(BatchReader::open(&data_path, BATCH)?, k)?;
            report_extra.0 = Some(fit.explained_variance);
            fit.directions
        }
        BaselineKind::Ica => {
            let data = read_dataset(&data_path)?;
            let data = if data.len() > subsample {
                let mut idx = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(ctx.seed), data.len(), subsample)
                    .into_vec();
                idx.sort_unstable();
                data.select_rows(&idx)
            } else {
                data
            };
            let cfg = IcaConfig {
                max_iter,
                seed: ctx.seed,
                ..IcaConfig::new(k)
            };
            let fit = fit_ica(data.view(), &cfg)?;
            report_extra.1 = Some(fit.converged);
            report_extra.2 = Some(fit.iterations);
            report_extra.3 = Some(data.len());
            fit.directions
        }
        BaselineKind::Random => make_fixed_directions(FixedKind::Random, d_in, k, ctx.seed)?,
        BaselineKind::Neuron => make_fixed_directions(FixedKind::NeuronBasis, d_in, k, ctx.seed)?,
    };

    let path = run.out_path("directions.sdic");
    set.save(&path)?;
    run.output(path.clone());
    announce(&path);

    let linear = stream_eval(&DirectionCodec::new(&set, None, false)?, &data_path, threshold)?;
    let clamped = stream_eval(
        &DirectionCodec::new(&set, topk.map(|k_active| TopK { k_active }), true)?,
        &data_path,
        threshold,
    )?;
    let report = BaselineReport {
        kind,
        k,
        d_in,
        explained_variance: report_extra.0,
        ica_converged: report_extra.1,
        ica_iterations: report_extra.2,
        ica_rows: report_extra.3,
        linear,
        clamped,
    };
    announce(&run.write_json("report.json", &report)?);
    let params = json!({
        "data": data_path,
        "kind": kind,
        "k": k,
        "topk": topk,
        "ica_subsample": subsample,
        "ica_max_iter": max_iter,
        "dead_threshold": threshold,
        "seed": ctx.seed,
    });
    announce(&run.finish(&params)?);
    Ok(())
}
