//! The `train`, `eval`, `dump-attention` and `synth` commands.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use hire_core::checkpoint::load_model;
use hire_core::data::{make_split, parse_csv, parse_movielens, write_movielens_like, CsvOptions, SplitOptions, SyntheticSpec};
use hire_core::embedding::{ContextInput, Schema};
use hire_core::eval::{build_eval_set, evaluate_set, format_csv, format_table, relevance_threshold, EvalSet, Popularity};
use hire_core::sampler::TrainingSampler;
use hire_core::train::{write_trace_csv, Trainer};
use hire_core::{HireModel, RatingGraph};

use crate::config::{ConfigError, Format, RunConfig};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))
}

fn load_graph(cfg: &RunConfig) -> Result<RatingGraph> {
    let path = cfg.data.as_ref().ok_or_else(|| ConfigError("no dataset given (use --data)".into()))?;
    let parsed = match cfg.format {
        Format::MovieLens => parse_movielens(path)?,
        Format::Csv => parse_csv(path, &CsvOptions::default())?,
    };
    if parsed.malformed > 0 || parsed.duplicates > 0 {
        log::warn!("skipped {} malformed lines, {} duplicate ratings overridden", parsed.malformed, parsed.duplicates);
    }
    let g = parsed.graph;
    log::info!("{} users, {} items, {} ratings", g.n_users(), g.n_items(), g.ratings().len());
    Ok(g)
}

fn load_checkpoint(path: &Path, g: &RatingGraph) -> Result<HireModel<f32>> {
    let model: HireModel<f32> =
        load_model(path).map_err(|e| ConfigError(format!("cannot load checkpoint {}: {e}", path.display())))?;
    model.schema.check_compatible(g)?;
    Ok(model)
}

fn eval_set(cfg: &RunConfig, g: &RatingGraph) -> Result<EvalSet> {
    let split = make_split(g, cfg.scenario, &SplitOptions::default(), cfg.seed)?;
    Ok(build_eval_set(g, &split, &cfg.eval_config())?)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let g = load_graph(cfg)?;
    let split = make_split(&g, cfg.scenario, &SplitOptions::default(), cfg.seed)?;
    let sampler = TrainingSampler::from_split(&g, &split, cfg.sampler, cfg.n, cfg.m, cfg.support)?;
    let model = HireModel::<f32>::new(cfg.model.clone(), Schema::from_graph(&g), cfg.seed)?;
    log::info!("{} parameters, cell width {}", model.param_count(), model.e());
    let mut trainer = Trainer::new(model, cfg.train_config())?;
    create_dir(&cfg.out)?;
    write(&cfg.out.join("config.txt"), &cfg.snapshot())?;
    let outcome = trainer.run(&sampler);
    write_trace_csv(&cfg.out.join("trace.csv"), &trainer.trace)?;
    let summary = outcome?;
    trainer.checkpoint().write(&cfg.out.join("model.ckpt"))?;
    println!(
        "trained {} steps{}, final loss {:.5}; wrote {}",
        summary.steps,
        if summary.converged { " (converged)" } else { "" },
        summary.final_loss,
        cfg.out.display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    if cfg.checkpoint.is_none() && !cfg.with_baseline {
        return Err(ConfigError("nothing to evaluate: give --checkpoint and/or --with-baseline".into()).into());
    }
    let g = load_graph(cfg)?;
    let model = cfg.checkpoint.as_deref().map(|p| load_checkpoint(p, &g)).transpose()?;
    let set = eval_set(cfg, &g)?;
    let threshold = relevance_threshold(g.r_max());
    let mut reports = Vec::new();
    if let Some(model) = &model {
        reports.push(evaluate_set(model, &set, &cfg.ks, threshold)?);
    }
    if cfg.with_baseline {
        let pop = Popularity::fit(&set.visible)?;
        reports.push(evaluate_set(&pop, &set, &cfg.ks, threshold)?);
    }
    let table = format_table(&reports);
    create_dir(&cfg.out)?;
    write(&cfg.out.join("config.txt"), &cfg.snapshot())?;
    write(&cfg.out.join("report.txt"), &table)?;
    write(&cfg.out.join("report.csv"), &format_csv(&reports))?;
    print!("{table}");
    Ok(())
}

/// Largest deviation of a row sum from 1 over `rows` rows of width `cols`.
fn row_sum_error(data: &[f32], cols: usize) -> f64 {
    data.chunks(cols)
        .map(|r| (r.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn dump_attention(cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| ConfigError("dump-attention needs --checkpoint".into()))?;
    let g = load_graph(cfg)?;
    let model = load_checkpoint(path, &g)?;
    let set = eval_set(&RunConfig { contexts: 1, ..cfg.clone() }, &g)?;
    let ctx = set.contexts.first().ok_or_else(|| ConfigError("no test context could be built".into()))?;
    let blocks = model.dump_attention(&ContextInput::new(&set.graph, ctx))?;

    let dir = cfg.out.join("attention");
    create_dir(&dir)?;
    let mut context = String::from("axis,position,id\n");
    for (k, &u) in ctx.user_ids.iter().enumerate() {
        let _ = writeln!(context, "user,{k},{}", set.graph.users().raw_ids[u as usize]);
    }
    for (k, &i) in ctx.item_ids.iter().enumerate() {
        let _ = writeln!(context, "item,{k},{}", set.graph.items().raw_ids[i as usize]);
    }
    write(&dir.join("context.csv"), &context)?;

    let tolerance = 1e-4;
    let mut manifest = String::from("file,block,layer,head,slice,rows,cols,max_row_sum_error,row_stochastic\n");
    let (mut files, mut failures) = (0usize, 0usize);
    for (b, att) in blocks.iter().enumerate() {
        for (layer, t) in [("mbu", &att.mbu), ("mbi", &att.mbi), ("mba", &att.mba)] {
            if !cfg.layers.iter().any(|l| l == layer) {
                continue;
            }
            let (slices, heads, rows, cols) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
            for s in 0..slices {
                for h in 0..heads {
                    let start = (s * heads + h) * rows * cols;
                    let data = &t.data()[start..start + rows * cols];
                    let name = format!("block{b}_{layer}_head{h}_slice{s}.csv");
                    let mut body = String::new();
                    for r in data.chunks(cols) {
                        let line: Vec<String> = r.iter().map(|x| x.to_string()).collect();
                        let _ = writeln!(body, "{}", line.join(","));
                    }
                    write(&dir.join(&name), &body)?;
                    let err = row_sum_error(data, cols);
                    let ok = err <= tolerance;
                    failures += usize::from(!ok);
                    files += 1;
                    let _ = writeln!(manifest, "{name},{b},{layer},{h},{s},{rows},{cols},{err:e},{ok}");
                }
            }
        }
    }
    write(&dir.join("manifest.csv"), &manifest)?;
    println!("wrote {files} attention matrices to {}; {failures} failed the row-sum check", dir.display());
    if failures > 0 {
        anyhow::bail!("{failures} attention matrices are not row-stochastic");
    }
    Ok(())
}

/// Writes a synthetic dataset in the MovieLens layout.
pub fn synth(out: &Path, users: usize, movies: usize, seed: u64) -> Result<()> {
    create_dir(out)?;
    let spec = SyntheticSpec {
        users,
        movies,
        ..SyntheticSpec::default()
    };
    write_movielens_like(out, &spec, seed)?;
    println!("wrote synthetic MovieLens-style data to {}", out.display());
    Ok(())
}
