use anyhow::{bail, Result};
use clap::ArgMatches;
use dictlearn::eval::{logit_effect, token_histogram, unembed_feature, Unembedding};
use dictlearn::store::{read_dataset, read_token_stream};
use dictlearn::Dictionary;
use serde::Serialize;
use serde_json::json;

use super::{announce, Ctx};
use crate::cli::{HistogramArgs, LogitEffectArgs};
use crate::config::{HistogramSection, LogitEffectSection, Resolver, UsageError};

fn check_feature(feature: usize, dict: &Dictionary) -> Result<()> {
    if feature >= dict.d_hid() {
        return Err(UsageError(format!("--feature {feature} is out of range for {} features", dict.d_hid())).into());
    }
    Ok(())
}

pub fn run_histogram(args: HistogramArgs, m: &ArgMatches, s: HistogramSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "histogram");
    let dict_path = r.required(r.path(args.dict, s.dict), "dict")?;
    let data_path = r.required(r.path(args.data, s.data), "data")?;
    let tokens_path = r.required(r.path(args.tokens, s.tokens), "tokens")?;
    let out = r.required(r.path(args.out, s.out), "out")?;
    let feature = r.required(r.optional(args.feature, s.feature), "feature")?;
    let bins = r.value("bins", args.bins, s.bins);
    if bins == 0 {
        return Err(UsageError("--bins must be positive".into()).into());
    }

    let mut run = ctx.run("histogram", out);
    run.input("dict", &dict_path)?;
    run.input("data", &data_path)?;
    run.input("tokens", &tokens_path)?;
    let dict = Dictionary::load(&dict_path)?;
    check_feature(feature, &dict)?;
    run.prepare()?;

    let data = read_dataset(&data_path)?;
    let tokens = read_token_stream(&tokens_path)?;
    let labels: Vec<&str> = tokens.iter().map(|t| t.token.as_str()).collect();
    let hist = token_histogram(feature, &dict, &data, &labels, bins)?;

    let path = run.out_path("histogram.csv");
    hist.write_csv(&path)?;
    run.output(path.clone());
    announce(&path);
    announce(&run.write_json("histogram.json", &hist)?);
    let params = json!({
        "dict": dict_path,
        "data": data_path,
        "tokens": tokens_path,
        "feature": feature,
        "bins": bins,
    });
    announce(&run.finish(&params)?);
    Ok(())
}

#[derive(Serialize)]
struct TokenValue {
    token: String,
    value: f64,
}

#[derive(Serialize)]
struct LogitEffectReport {
    feature: usize,
    /// Tokens ranked by the feature direction's own logit contribution.
    unembed_top: Vec<TokenValue>,
    active_rows: usize,
    /// Mean logit change over active rows when the feature is ablated; most
    /// decreased first.
    ablation_decreased: Vec<TokenValue>,
    ablation_increased: Vec<TokenValue>,
}

pub fn run_logit_effect(args: LogitEffectArgs, m: &ArgMatches, s: LogitEffectSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "logit-effect");
    let dict_path = r.required(r.path(args.dict, s.dict), "dict")?;
    let data_path = r.required(r.path(args.data, s.data), "data")?;
    let unembed_path = r.required(r.path(args.unembed, s.unembed), "unembed")?;
    let vocab_path = r.required(r.path(args.vocab, s.vocab), "vocab")?;
    let out = r.required(r.path(args.out, s.out), "out")?;
    let feature = r.required(r.optional(args.feature, s.feature), "feature")?;
    let top_n = r.value("top_n", args.top_n, s.top_n);

    let mut run = ctx.run("logit-effect", out);
    run.input("dict", &dict_path)?;
    run.input("data", &data_path)?;
    run.input("unembed", &unembed_path)?;
    run.input("vocab", &vocab_path)?;
    let dict = Dictionary::load(&dict_path)?;
    check_feature(feature, &dict)?;
    let unembed = Unembedding::load(&unembed_path, &vocab_path)?;
    if unembed.matrix.ncols() != dict.d_in() {
        bail!(
            "unembedding {} has {} columns, the dictionary expects {}",
            unembed_path.display(),
            unembed.matrix.ncols(),
            dict.d_in()
        );
    }
    if top_n == 0 || top_n > unembed.vocab.len() {
        return Err(UsageError(format!("--top-n must lie in 1..={}", unembed.vocab.len())).into());
    }
    run.prepare()?;

    let unembed_top = unembed_feature(feature, &dict, unembed.matrix.view(), &unembed.vocab, top_n)?
        .into_iter()
        .map(|(token, value)| TokenValue { token, value })
        .collect();

    let data = read_dataset(&data_path)?;
    let mut sum = vec![0.0f64; unembed.vocab.len()];
    let mut active_rows = 0usize;
    for i in 0..data.len() {
        let x = data.row(i);
        if dict.activation(feature, x)? > 0.0 {
            active_rows += 1;
            let delta = logit_effect(feature, &dict, x, unembed.matrix.view())?;
            sum.iter_mut().zip(delta.iter()).for_each(|(s, d)| *s += d);
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / active_rows.max(1) as f64).collect();
    let mut order: Vec<usize> = (0..mean.len()).collect();
    order.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));
    let pick = |i: &usize| TokenValue {
        token: unembed.vocab[*i].clone(),
        value: mean[*i],
    };
    let report = LogitEffectReport {
        feature,
        unembed_top,
        active_rows,
        ablation_decreased: order.iter().take(top_n).map(pick).collect(),
        ablation_increased: order.iter().rev().take(top_n).map(pick).collect(),
    };
    announce(&run.write_json("logit_effect.json", &report)?);
    let params = json!({
        "dict": dict_path,
        "data": data_path,
        "unembed": unembed_path,
        "vocab": vocab_path,
        "feature": feature,
        "top_n": top_n,
    });
    announce(&run.finish(&params)?);
    Ok(())
}
