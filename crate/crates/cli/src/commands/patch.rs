use anyhow::{bail, Result};
use clap::ArgMatches;
use dictlearn::patching::{
    build_causal_tree, greedy_feature_ordering, CaseManifest, Identity, LayerTransition, Linear, OrderingMode,
    ToyOracle,
};
use dictlearn::store::read_dataset;
use dictlearn::Dictionary;
use serde_json::json;

use super::{announce, usage, Ctx};
use crate::cli::{OrderMode, PatchArgs, TreeArgs};
use crate::config::{PatchSection, Resolver, TreeSection, UsageError};

pub fn run_patch(args: PatchArgs, m: &ArgMatches, s: PatchSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "patch");
    let dict_path = r.required(r.path(args.dict, s.dict), "dict")?;
    let cases_path = r.required(r.path(args.cases, s.cases), "cases")?;
    let unembed_path = r.required(r.path(args.unembed, s.unembed), "unembed")?;
    let out = r.required(r.path(args.out, s.out), "out")?;
    let candidates = r.list(args.candidates, s.candidates);
    let mode = r.value("mode", args.mode, s.mode);
    let budget = r.optional(args.budget, s.budget);

    let mut run = ctx.run("patch", out);
    run.input("dict", &dict_path)?;
    run.input("cases", &cases_path)?;
    run.input("unembed", &unembed_path)?;
    let manifest = CaseManifest::read(&cases_path)?;
    if manifest.cases.is_empty() {
        bail!("case manifest {} lists no cases", cases_path.display());
    }
    for (i, c) in manifest.cases.iter().enumerate() {
        run.input(&format!("cases[{i}].base"), &c.base)?;
        run.input(&format!("cases[{i}].target"), &c.target)?;
    }
    let dict = Dictionary::load(&dict_path)?;
    let candidates = if candidates.is_empty() {
        (0..dict.d_hid()).collect()
    } else {
        candidates
    };
    let budget = budget.unwrap_or(candidates.len());
    let oracle = ToyOracle::new(read_dataset(&unembed_path)?.into_inner()).map_err(usage)?;
    let cases = manifest.load_cases(&dict, &oracle)?;
    run.prepare()?;

    let mode = match mode {
        OrderMode::Independent => OrderingMode::Independent,
        OrderMode::Greedy => OrderingMode::Greedy,
    };
    let ordering = greedy_feature_ordering(&cases, &dict, &oracle, &candidates, mode, budget).map_err(usage)?;
    let path = run.out_path("trajectory.csv");
    ordering.write_csv(&path)?;
    run.output(path.clone());
    announce(&path);
    announce(&run.write_json("ordering.json", &ordering)?);
    let params = json!({
        "dict": dict_path,
        "cases": cases_path,
        "unembed": unembed_path,
        "candidates": candidates,
        "mode": mode,
        "budget": budget,
    });
    announce(&run.finish(&params)?);
    Ok(())
}

pub fn run_tree(args: TreeArgs, m: &ArgMatches, s: TreeSection, ctx: &Ctx) -> Result<()> {
    let r = Resolver::new(m, &ctx.base_dir, "tree");
    let dict_paths = r.paths(args.dicts, s.dicts);
    let data_paths = r.paths(args.data, s.data);
    let transition_paths = r.paths(args.transitions, s.transitions);
    let out = r.required(r.path(args.out, s.out), "out")?;
    let layer = r.required(r.optional(args.layer, s.layer), "layer")?;
    let feature = r.required(r.optional(args.feature, s.feature), "feature")?;
    let depth = r.value("depth", args.depth, s.depth);
    let fanout = r.value("fanout", args.fanout, s.fanout);
    if dict_paths.is_empty() {
        return Err(r.missing("dicts"));
    }
    if data_paths.len() != dict_paths.len() {
        return Err(UsageError(format!(
            "--data lists {} files but --dicts lists {}",
            data_paths.len(),
            dict_paths.len()
        ))
        .into());
    }
    if !transition_paths.is_empty() && transition_paths.len() + 1 != dict_paths.len() {
        return Err(UsageError(format!(
            "--transitions needs one map per layer boundary ({}), got {}",
            dict_paths.len() - 1,
            transition_paths.len()
        ))
        .into());
    }
    if layer >= dict_paths.len() {
        return Err(UsageError(format!("--layer {layer} is out of range for {} layers", dict_paths.len())).into());
    }
    if depth == 0 || fanout == 0 {
        return Err(UsageError("--depth and --fanout must be positive".into()).into());
    }

    let mut run = ctx.run("tree", out);
    for (i, p) in dict_paths.iter().enumerate() {
        run.input(&format!("dicts[{i}]"), p)?;
    }
    for (i, p) in data_paths.iter().enumerate() {
        run.input(&format!("data[{i}]"), p)?;
    }
    for (i, p) in transition_paths.iter().enumerate() {
        run.input(&format!("transitions[{i}]"), p)?;
    }
    let dicts = dict_paths.iter().map(|p| Dictionary::load(p)).collect::<Result<Vec<_>, _>>()?;
    if feature >= dicts[layer].d_hid() {
        return Err(UsageError(format!(
            "--feature {feature} is out of range for {} features at layer {layer}",
            dicts[layer].d_hid()
        ))
        .into());
    }
    run.prepare()?;
    let data = data_paths.iter().map(|p| read_dataset(p)).collect::<Result<Vec<_>, _>>()?;
    let transition: Box<dyn LayerTransition> = if transition_paths.is_empty() {
        Box::new(Identity)
    } else {
        let maps = transition_paths
            .iter()
            .map(|p| read_dataset(p).map(|d| d.into_inner()))
            .collect::<Result<Vec<_>, _>>()?;
        Box::new(Linear { maps })
    };
    let tree = build_causal_tree((layer, feature), &dicts, &data, transition.as_ref(), depth, fanout)?;
    announce(&run.write_json("tree.json", &tree)?);
    let params = json!({
        "dicts": dict_paths,
        "data": data_paths,
        "transitions": transition_paths,
        "layer": layer,
        "feature": feature,
        "depth": depth,
        "fanout": fanout,
    });
    announce(&run.finish(&params)?);
    Ok(())
}
