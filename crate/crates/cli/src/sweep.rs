//! `sweep`: run an axis of experiment points (Top-K ratio, UAV count, or
//! latency weight) across derived seeds in a worker pool and emit one
//! aggregated CSV.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};

use copersim::channel::realize_channel;
use copersim::env::Environment;
use copersim::link::build_codebook;
use copersim::metrics::{
    ground_truth_bev, iou_semantic, match_instances, panoptic_quality, proxy_perceive,
};
use copersim::policy::Trainer;
use copersim::rng::derive_seed_indexed;
use copersim::scenario::{generate_scenario, render_view, Scenario};
use copersim::sparsify::{importance_map, neighborhood_score, top_k_select, SparseImage};

use crate::config::RunConfig;
use crate::rundir::{init_run_dir, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Lambda,
    Kappa,
    UavCount,
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "kappa" => Ok(Self::Kappa),
            "uav_count" | "uav-count" => Ok(Self::UavCount),
            other => bail!("unknown sweep axis '{other}' (expected lambda, kappa, or uav_count)"),
        }
    }
}

fn worker_count(tasks: usize) -> usize {
    let configured = std::env::var("COPERSIM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1);
    let fallback = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    configured.unwrap_or(fallback).min(tasks.max(1))
}

/// Run independent tasks on a small worker pool, preserving input order.
fn run_parallel<T, F>(tasks: Vec<F>) -> Result<Vec<T>>
where
    T: Send,
    F: Fn() -> Result<T> + Send + Sync,
{
    let n = tasks.len();
    let results: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = worker_count(n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= n {
                    break;
                }
                let out = tasks[idx]();
                results.lock().unwrap()[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every task ran"))
        .collect()
}

/// Sequence-level mean IoU and PQ of the proxy prediction built at the
/// observation frame from the given UAVs at ratio `kappa`.
fn eval_point(scenario: &Scenario, selected: &[usize], kappa: f64) -> Result<(f64, f64)> {
    let frame = scenario.observation_frame();
    let mut masks: Vec<SparseImage> = Vec::with_capacity(selected.len());
    for &u in selected {
        let view = render_view(scenario, &scenario.uavs[u], frame)?;
        let scores = neighborhood_score(&importance_map(&view));
        masks.push(top_k_select(&view, &scores, kappa)?);
    }
    let refs: Vec<&SparseImage> = masks.iter().collect();
    let pred = proxy_perceive(scenario, frame, selected, &refs)?;
    let frames = scenario.prediction_frames();
    let mut iou_sum = 0.0;
    let mut pq_sum = 0.0;
    for &t in &frames {
        let gt = ground_truth_bev(scenario, t)?;
        iou_sum += iou_semantic(&pred, &gt)?;
        pq_sum += panoptic_quality(&match_instances(&pred, &gt)?).pq;
    }
    Ok((iou_sum / frames.len() as f64, pq_sum / frames.len() as f64))
}

fn sweep_scenario(cfg: &RunConfig, seed_idx: usize, num_uavs: usize) -> Result<Scenario> {
    let mut scn = cfg.scenario.clone();
    scn.num_uavs = num_uavs;
    scn.rng_seed = derive_seed_indexed(cfg.seed, "sweep-scenario", seed_idx as u64);
    Ok(generate_scenario(&scn)?)
}

fn sweep_environment(cfg: &RunConfig, seed_idx: usize) -> Result<Environment> {
    let scenario = sweep_scenario(cfg, seed_idx, cfg.scenario.num_uavs)?;
    let channel = realize_channel(
        &scenario,
        &cfg.channel,
        derive_seed_indexed(cfg.seed, "sweep-channel", seed_idx as u64),
    )?;
    Ok(Environment {
        scenario,
        channel,
        kappa_grid: cfg.kappa.clone(),
        codebook: build_codebook(cfg.codebook.n_x, cfg.codebook.n_y, cfg.codebook.o_x, cfg.codebook.o_y),
        power_w: cfg.link.power_w,
        noise_var: cfg.link.noise_var,
        bits_per_sample: cfg.link.bits_per_sample,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn run(cfg: &RunConfig, axis: SweepAxis, points: Option<usize>, out: &Path) -> Result<()> {
    let dir = init_run_dir(out, cfg)?;
    let seeds = cfg.sweep.seeds;
    let csv = match axis {
        SweepAxis::Kappa => {
            let mut values = cfg.sweep.kappa_points.clone();
            if let Some(n) = points {
                values.truncate(n.max(1));
            }
            let tasks: Vec<_> = (0..seeds)
                .map(|seed_idx| {
                    let values = values.clone();
                    move || -> Result<Vec<(f64, usize, f64, f64)>> {
                        let scenario = sweep_scenario(cfg, seed_idx, cfg.scenario.num_uavs)?;
                        let selected: Vec<usize> = (0..scenario.uavs.len()).collect();
                        values
                            .iter()
                            .map(|&kappa| {
                                let (iou, pq) = eval_point(&scenario, &selected, kappa)?;
                                Ok((kappa, seed_idx, iou, pq))
                            })
                            .collect()
                    }
                })
                .collect();
            let per_seed = run_parallel(tasks)?;
            let mut csv = String::from("kappa,seed,mean_iou,mean_pq\n");
            for (i, &kappa) in values.iter().enumerate() {
                for rows in &per_seed {
                    let (k, seed_idx, iou, pq) = rows[i];
                    csv.push_str(&format!("{k},{seed_idx},{iou},{pq}\n"));
                }
            }
            for (i, &kappa) in values.iter().enumerate() {
                let ious: Vec<f64> = per_seed.iter().map(|rows| rows[i].2).collect();
                let pqs: Vec<f64> = per_seed.iter().map(|rows| rows[i].3).collect();
                csv.push_str(&format!("{kappa},mean,{},{}\n", mean(&ious), mean(&pqs)));
            }
            csv
        }
        SweepAxis::UavCount => {
            let mut counts: Vec<usize> = cfg
                .sweep
                .uav_counts
                .iter()
                .copied()
                .filter(|&c| c >= 1)
                .collect();
            if let Some(n) = points {
                counts.truncate(n.max(1));
            }
            let max_count = *counts.iter().max().unwrap_or(&1);
            let kappa = cfg.kappa.value(cfg.simulate.kappa_index)?;
            let tasks: Vec<_> = (0..seeds)
                .map(|seed_idx| {
                    let counts = counts.clone();
                    move || -> Result<Vec<(usize, usize, f64, f64)>> {
                        // One scenario with the maximum UAV count; smaller
                        // counts select prefixes so the sweep isolates the
                        // fusion effect.
                        let scenario = sweep_scenario(cfg, seed_idx, max_count)?;
                        counts
                            .iter()
                            .map(|&count| {
                                let selected: Vec<usize> = (0..count).collect();
                                let (iou, pq) = eval_point(&scenario, &selected, kappa)?;
                                Ok((count, seed_idx, iou, pq))
                            })
                            .collect()
                    }
                })
                .collect();
            let per_seed = run_parallel(tasks)?;
            let mut csv = String::from("uav_count,seed,mean_iou,mean_pq\n");
            for (i, &count) in counts.iter().enumerate() {
                for rows in &per_seed {
                    let (c, seed_idx, iou, pq) = rows[i];
                    csv.push_str(&format!("{c},{seed_idx},{iou},{pq}\n"));
                }
            }
            for (i, &count) in counts.iter().enumerate() {
                let ious: Vec<f64> = per_seed.iter().map(|rows| rows[i].2).collect();
                let pqs: Vec<f64> = per_seed.iter().map(|rows| rows[i].3).collect();
                csv.push_str(&format!("{count},mean,{},{}\n", mean(&ious), mean(&pqs)));
            }
            csv
        }
        SweepAxis::Lambda => {
            let mut lambdas = cfg.sweep.lambda_points.clone();
            if let Some(n) = points {
                lambdas.truncate(n.max(1));
            }
            let window = cfg.sweep.eval_window;
            struct LambdaRow {
                reward: f64,
                latency: f64,
                utility: f64,
                sinr_db: f64,
            }
            let mut tasks: Vec<Box<dyn Fn() -> Result<LambdaRow> + Send + Sync>> = Vec::new();
            for &lambda in &lambdas {
                for seed_idx in 0..seeds {
                    tasks.push(Box::new(move || {
                        let env = sweep_environment(cfg, seed_idx)?;
                        let mut train_cfg = cfg.train_config();
                        train_cfg.steps = cfg.sweep.train_steps;
                        train_cfg.seed =
                            derive_seed_indexed(cfg.seed, "sweep-policy", seed_idx as u64);
                        let steps = train_cfg.steps;
                        let mut trainer = Trainer::new(&env, cfg.alpha.0, lambda, train_cfg)?;
                        trainer.run_steps(&env, steps)?;
                        let tail = &trainer.curves[trainer.curves.len().saturating_sub(window)..];
                        Ok(LambdaRow {
                            reward: mean(&tail.iter().map(|r| r.reward).collect::<Vec<_>>()),
                            latency: mean(&tail.iter().map(|r| r.latency_s).collect::<Vec<_>>()),
                            utility: mean(&tail.iter().map(|r| r.utility).collect::<Vec<_>>()),
                            sinr_db: mean(&tail.iter().map(|r| r.mean_sinr_db).collect::<Vec<_>>()),
                        })
                    }));
                }
            }
            let rows = run_parallel(tasks)?;
            let mut csv =
                String::from("lambda,seed,mean_reward,mean_latency_s,mean_utility,mean_sinr_db,crossing\n");
            for (li, &lambda) in lambdas.iter().enumerate() {
                for seed_idx in 0..seeds {
                    let row = &rows[li * seeds + seed_idx];
                    csv.push_str(&format!(
                        "{lambda},{seed_idx},{},{},{},{},\n",
                        row.reward, row.latency, row.utility, row.sinr_db
                    ));
                }
            }
            // Aggregates plus the utility/SNR crossing flag on normalized
            // curves.
            let agg: Vec<(f64, f64, f64, f64)> = lambdas
                .iter()
                .enumerate()
                .map(|(li, _)| {
                    let slice = &rows[li * seeds..(li + 1) * seeds];
                    (
                        mean(&slice.iter().map(|r| r.reward).collect::<Vec<_>>()),
                        mean(&slice.iter().map(|r| r.latency).collect::<Vec<_>>()),
                        mean(&slice.iter().map(|r| r.utility).collect::<Vec<_>>()),
                        mean(&slice.iter().map(|r| r.sinr_db).collect::<Vec<_>>()),
                    )
                })
                .collect();
            let crossing = crossing_lambda(&lambdas, &agg);
            for (li, &lambda) in lambdas.iter().enumerate() {
                let (r, l, u, s) = agg[li];
                let flag = match crossing {
                    Some(ci) if ci == li => "crossing",
                    _ => "",
                };
                csv.push_str(&format!("{lambda},mean,{r},{l},{u},{s},{flag}\n"));
            }
            csv
        }
    };
    write_text(&dir, "sweep.csv", &csv)?;
    Ok(())
}

/// Index of the first lambda where the normalized utility curve falls
/// below the normalized SNR curve (both scaled to [0, 1] over the sweep).
fn crossing_lambda(lambdas: &[f64], agg: &[(f64, f64, f64, f64)]) -> Option<usize> {
    if lambdas.len() < 2 {
        return None;
    }
    let norm = |values: Vec<f64>| -> Vec<f64> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            return vec![0.5; values.len()];
        }
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    let utility = norm(agg.iter().map(|a| a.2).collect());
    let snr = norm(agg.iter().map(|a| a.3).collect());
    let diff: Vec<f64> = utility.iter().zip(snr.iter()).map(|(u, s)| u - s).collect();
    for i in 1..diff.len() {
        if diff[i - 1] > 0.0 && diff[i] <= 0.0 {
            return Some(i);
        }
    }
    None
}
