use anyhow::Result;
use clap::ArgMatches;
use dictlearn::synth::{generate, synthetic_meta, SyntheticConfig};

use super::{announce, usage, Ctx};
use crate::cli::SynthArgs;
use crate::config::{Resolver, SynthSection};

pub fn run(args: SynthArgs, m: &ArgMatches, s: SynthSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "synth");
    let out = r.required(r.path(args.out, s.out), "out")?;
    let config = SyntheticConfig {
        n_gt: r.value("n_gt", args.n_gt, s.n_gt),
        d: r.value("d", args.d, s.d),
        n_samples: r.value("n_samples", args.n_samples, s.n_samples),
        avg_active: r.value("avg_active", args.avg_active, s.avg_active),
        coeff_scale: r.value("coeff_scale", args.coeff_scale, s.coeff_scale),
        noise_sigma: r.value("noise_sigma", args.noise_sigma, s.noise_sigma),
        seed: ctx.seed,
    };
    config.validate().map_err(usage)?;

    let mut run = ctx.run("synth", out);
    run.prepare()?;
    let data = generate(&config)?;
    let meta = synthetic_meta();

    let path = run.out_path("data.sact");
    data.dataset.write(&path, &meta)?;
    run.output(path);
    let path = run.out_path("truth.sdic");
    data.truth.to_dictionary().save(&path)?;
    run.output(path);
    let path = run.out_path("codes.sact");
    data.codes.write(&path, &meta)?;
    run.output(path);
    let path = run.write_json("synth.json", &config)?;
    announce(&path);

    announce(&run.finish(&config)?);
    Ok(())
}
