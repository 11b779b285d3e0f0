//! `train`: run the policy optimizer against the configured environment,
//! persisting curves and a resumable checkpoint.

use std::path::Path;

use anyhow::{Context, Result};

use copersim::policy::{Checkpoint, EpochRow, Trainer};
use copersim::scenario::save_scenario;

use crate::config::RunConfig;
use crate::rundir::{init_run_dir, write_text};

pub fn run(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    let dir = init_run_dir(out, cfg)?;
    let env = cfg.build_environment()?;
    save_scenario(&env.scenario, &dir.join("scenario.json"))?;
    write_text(&dir, "codebook.csv", &env.codebook.to_csv_string())?;

    let train_cfg = cfg.train_config();
    let steps = train_cfg.steps;
    let mut trainer = match resume {
        Some(path) => {
            let cp = Checkpoint::load(path)
                .with_context(|| format!("cannot load checkpoint {}", path.display()))?;
            Trainer::from_checkpoint(cp)?
        }
        None => Trainer::new(&env, cfg.alpha.0, cfg.lambda.0, train_cfg)?,
    };
    trainer.run_steps(&env, steps)?;

    let mut curves = String::from(EpochRow::CSV_HEADER);
    curves.push('\n');
    for row in &trainer.curves {
        curves.push_str(&row.to_csv_row());
        curves.push('\n');
    }
    write_text(&dir, "curves.csv", &curves)?;

    trainer
        .to_checkpoint()
        .save(&dir.join("checkpoint.json"))
        .context("persist checkpoint")?;

    let (action, outcome) = trainer.greedy_outcome(&env)?;
    let eval = format!(
        "action,reward,latency_s,utility_iou,utility_pq,mean_sinr_db\n{},{},{},{},{},{}\n",
        action.encode(),
        outcome.reward,
        outcome.latency_max_s,
        outcome.utility_iou,
        outcome.utility_pq,
        outcome.mean_sinr_db,
    );
    write_text(&dir, "eval.csv", &eval)?;
    Ok(())
}
