use anyhow::{bail, Result};
use clap::ArgMatches;
use dictlearn::autointerp::{
    run_autointerp_batch, HttpClient, HttpConfig, InterpOptions, MockClient, MockKind, Prompts, RetryPolicy,
    ScoringMode, SimulatorClient,
};
use dictlearn::store::{read_dataset, read_token_stream};
use dictlearn::Dictionary;
use serde_json::json;

use super::{announce, Ctx};
use crate::cli::{InterpArgs, InterpMode, MockChoice};
use crate::config::{InterpSection, Resolver, UsageError};

pub fn run(args: InterpArgs, m: &ArgMatches, s: InterpSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "interp");
    let dict_path = r.required(r.path(args.dict, s.dict), "dict")?;
    let data_path = r.required(r.path(args.data, s.data), "data")?;
    let tokens_path = r.required(r.path(args.tokens, s.tokens), "tokens")?;
    let out = r.required(r.path(args.out, s.out), "out")?;
    let features = r.list(args.feature, s.features);
    if features.is_empty() {
        return Err(r.missing("feature"));
    }
    let mode = r.value("mode", args.mode, s.mode);
    let mock = r.optional(args.mock, s.mock);
    let prompts_dir = r.path(args.prompts, s.prompts);
    let max_lines = r.value("max_lines", args.max_lines, s.max_lines);
    let parallelism = r.value("parallelism", args.parallelism, s.parallelism);
    let max_retries = r.value("max_retries", args.max_retries, s.max_retries);
    if parallelism == 0 {
        return Err(UsageError("--parallelism must be positive".into()).into());
    }

    let mut run = ctx.run("interp", out);
    run.input("dict", &dict_path)?;
    run.input("data", &data_path)?;
    run.input("tokens", &tokens_path)?;
    let prompts = match &prompts_dir {
        Some(dir) => {
            run.input_dir("prompts", dir)?;
            Prompts::load(dir)?
        }
        None => Prompts::default(),
    };
    let client: Box<dyn SimulatorClient> = match mock {
        Some(MockChoice::Perfect) => Box::new(MockClient::new(MockKind::Perfect)),
        Some(MockChoice::Constant) => Box::new(MockClient::new(MockKind::Constant)),
        Some(MockChoice::Noisy) => Box::new(MockClient::new(MockKind::Noisy { seed: ctx.seed })),
        None => Box::new(HttpClient::new(HttpConfig::from_env()?)),
    };
    let dict = Dictionary::load(&dict_path)?;
    if let Some(&f) = features.iter().find(|&&f| f >= dict.d_hid()) {
        return Err(UsageError(format!("--feature {f} is out of range for {} features", dict.d_hid())).into());
    }
    run.prepare()?;
    let transcripts = run.out_path("transcripts");
    std::fs::create_dir_all(&transcripts)?;

    let data = read_dataset(&data_path)?;
    let tokens = read_token_stream(&tokens_path)?;
    let opts = InterpOptions {
        mode: match mode {
            InterpMode::TopRandom => ScoringMode::TopAndRandom,
            InterpMode::Random => ScoringMode::RandomOnly,
        },
        seed: ctx.seed,
        max_lines,
        retry: RetryPolicy {
            max_retries,
            ..RetryPolicy::default()
        },
        prompts,
        transcript_dir: Some(transcripts.clone()),
    };
    let results = run_autointerp_batch(&features, &dict, &data, &tokens, client.as_ref(), &opts, parallelism);

    let mut failed = 0;
    let entries: Vec<serde_json::Value> = features
        .iter()
        .zip(&results)
        .map(|(&f, res)| match res {
            Ok(outcome) => serde_json::to_value(outcome).expect("outcome serialises"),
            Err(e) => {
                failed += 1;
                json!({"status": "error", "feature_index": f, "error": e.to_string()})
            }
        })
        .collect();
    run.output(transcripts);
    announce(&run.write_json("interp.json", &entries)?);
    let params = json!({
        "dict": dict_path,
        "data": data_path,
        "tokens": tokens_path,
        "features": features,
        "mode": mode,
        "mock": mock,
        "prompts": prompts_dir,
        "max_lines": max_lines,
        "parallelism": parallelism,
        "max_retries": max_retries,
        "seed": ctx.seed,
    });
    announce(&run.finish(&params)?);
    if failed > 0 {
        bail!("{failed} of {} features failed; see interp.json", features.len());
    }
    Ok(())
}
