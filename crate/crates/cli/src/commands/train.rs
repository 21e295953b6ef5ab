//! `brpolab train`: single runs and multi-arm recipes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;

use brpolab_core::env::SynthEnv;
use brpolab_core::record::write_records_file;
use brpolab_core::trainer::{imitation_policy, load_checkpoint, task_pool, train, TrainPaths};
use brpolab_core::ExperimentConfig;

use crate::recipes::{self, RecipeInit};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run a named recipe from the recipe book instead of a single arm.
    #[arg(long)]
    recipe: Option<String>,

    /// Seeds for the recipe's paired arms (comma-separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,

    /// Start from a policy checkpoint instead of the untrained policy.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
}

pub fn run(global: &GlobalArgs, args: &TrainArgs) -> anyhow::Result<()> {
    let cfg = global.load_config()?;
    match &args.recipe {
        None => {
            let out = global.ensure_out()?;
            let paths = TrainPaths::under(out);
            let initial = args
                .init_checkpoint
                .as_ref()
                .map(|p| load_checkpoint(p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            let summary = train(&cfg, initial, Some(&paths))?;
            println!(
                "trained {} iterations; final eval quality {:.4} (length {:.2}, filler {:.2})",
                summary.iterations_run,
                summary.final_eval.mean_quality,
                summary.final_eval.mean_length,
                summary.final_eval.mean_filler
            );
            println!("metrics: {}", paths.metrics.display());
            println!("checkpoint: {}", paths.checkpoint.display());
            Ok(())
        }
        Some(name) => run_recipe(global, &cfg, name, &args.seeds),
    }
}

fn run_recipe(
    global: &GlobalArgs,
    cfg: &ExperimentConfig,
    name: &str,
    seeds: &[u64],
) -> anyhow::Result<()> {
    let recipe = recipes::find(name).ok_or_else(|| {
        let known: Vec<&str> = recipes::BOOK.iter().map(|r| r.name).collect();
        anyhow::anyhow!("unknown recipe {name:?}; known recipes: {}", known.join(", "))
    })?;
    let seeds: Vec<u64> = if seeds.is_empty() {
        recipe.default_seeds.to_vec()
    } else {
        seeds.to_vec()
    };
    let out = global.ensure_out()?;

    for arm in recipe.arms {
        let overrides: Vec<String> = arm.overrides.iter().map(|s| s.to_string()).collect();
        let arm_cfg = cfg.with_overrides(&overrides)?;
        for &seed in &seeds {
            let mut run_cfg = arm_cfg.clone();
            run_cfg.seed = seed;
            let dir = run_dir(out, recipe.name, arm.name, seed);
            std::fs::create_dir_all(&dir)?;
            let paths = TrainPaths::under(&dir);
            let initial = match arm.init {
                RecipeInit::Untrained => None,
                RecipeInit::Imitation => {
                    let env = SynthEnv::new(run_cfg.env.clone())
                        .map_err(|e| anyhow::anyhow!(e.to_string()))?;
                    let tasks = task_pool(&env, run_cfg.seed, run_cfg.train.task_pool);
                    let warm = imitation_policy(&env, &tasks, run_cfg.policy.context_order, 2.0);
                    write_records_file(&dir.join("init_checkpoint.jsonl"), [&warm])?;
                    Some(warm)
                }
            };
            let summary = train(&run_cfg, initial, Some(&paths))
                .with_context(|| format!("recipe {name} {} seed {seed}", arm.name))?;
            println!(
                "{} seed {seed}: final quality {:.4}, length {:.2}, filler {:.2} -> {}",
                arm.name,
                summary.final_eval.mean_quality,
                summary.final_eval.mean_length,
                summary.final_eval.mean_filler,
                paths.metrics.display()
            );
        }
    }
    let expected = recipe.expected_outputs(&seeds);
    for rel in &expected {
        let path = out.join(rel);
        if !path.exists() {
            bail!("recipe output missing: {}", path.display());
        }
    }
    println!(
        "recipe {name} complete: {} metrics files under {}",
        expected.len(),
        out.join(recipe.name).display()
    );
    Ok(())
}

pub fn run_dir(out: &Path, recipe: &str, arm: &str, seed: u64) -> PathBuf {
    out.join(recipe).join(format!("{arm}_seed{seed}"))
}
