//! `simulate`: evaluate a fixed joint action over every frame of one
//! sequence and persist the run ledgers.

use std::path::Path;

use anyhow::{Context, Result};

use copersim::camera::BevGrid;
use copersim::env::{Environment, JointAction};
use copersim::link::{exhaustive_precoder_search, LinkState, SearchMode, SearchObjective};
use copersim::metrics::{
    ground_truth_bev, iou_semantic, match_instances, panoptic_quality, proxy_perceive,
};
use copersim::scenario::{render_view, save_scenario};
use copersim::sparsify::{importance_map, neighborhood_score, top_k_select, SparseImage};

use crate::config::RunConfig;
use crate::rundir::{init_run_dir, join_per_uav, write_text};

pub fn effective_mask(cfg: &RunConfig) -> u32 {
    if cfg.simulate.uav_mask == 0 {
        (1 << cfg.scenario.num_uavs) - 1
    } else {
        cfg.simulate.uav_mask
    }
}

/// Resolve the configured action, searching precoders when requested.
pub fn resolve_action(cfg: &RunConfig, env: &Environment) -> Result<JointAction> {
    let num_uavs = env.num_uavs();
    let mask = effective_mask(cfg);
    let precoder_idx = if cfg.simulate.precoder_search {
        let link = LinkState {
            association: (0..num_uavs).map(|u| mask & (1 << u) != 0).collect(),
            precoder_idx: vec![0; num_uavs],
            power_w: vec![env.power_w; num_uavs],
            noise_var: env.noise_var,
        };
        exhaustive_precoder_search(
            &env.channel,
            &link,
            &env.codebook,
            SearchObjective::PerUavRate,
            SearchMode::Greedy { max_sweeps: 3 },
        )?
        .precoder_idx
    } else {
        vec![cfg.simulate.precoder_index; num_uavs]
    };
    let action = JointAction {
        uav_mask: mask,
        kappa_idx: vec![cfg.simulate.kappa_index; num_uavs],
        precoder_idx,
    };
    action.validate(num_uavs, &env.kappa_grid, env.codebook.len())?;
    Ok(action)
}

fn sparse_views(
    env: &Environment,
    action: &JointAction,
    frame: usize,
) -> Result<(Vec<usize>, Vec<SparseImage>)> {
    let selected = action.selected(env.num_uavs());
    let mut masks = Vec::with_capacity(selected.len());
    for &u in &selected {
        let view = render_view(&env.scenario, &env.scenario.uavs[u], frame)?;
        let scores = neighborhood_score(&importance_map(&view));
        let kappa = env.kappa_grid.value(action.kappa_idx[u])?;
        masks.push(top_k_select(&view, &scores, kappa)?);
    }
    Ok((selected, masks))
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dir = init_run_dir(out, cfg)?;
    let scenario = cfg.build_scenario()?;
    save_scenario(&scenario, &dir.join("scenario.json")).context("persist scenario")?;
    let env = cfg.build_environment()?;
    write_text(&dir, "codebook.csv", &env.codebook.to_csv_string())?;

    let action = resolve_action(cfg, &env)?;
    let alpha = cfg.alpha.0;
    let lambda = cfg.lambda.0;

    // Step ledger: one row per anchor frame.
    let mut steps = String::from(
        "frame,action,latency_s,utility_iou,utility_pq,reward,wire_bits,rates_bps\n",
    );
    for frame in 0..scenario.frames() {
        let out = env.step(frame, &action, alpha, lambda)?;
        steps.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            frame,
            action.encode(),
            out.latency_max_s,
            out.utility_iou,
            out.utility_pq,
            out.reward,
            out.wire_bits_total,
            join_per_uav(&out.rates_bps),
        ));
    }
    write_text(&dir, "steps.csv", &steps)?;

    // Frame-level perception metrics against same-frame ground truth.
    let mut metrics = String::from("frame,iou,pq,sq,rq,tp,fp,fn\n");
    for frame in 0..scenario.frames() {
        let (selected, masks) = sparse_views(&env, &action, frame)?;
        let refs: Vec<&SparseImage> = masks.iter().collect();
        let pred = proxy_perceive(&scenario, frame, &selected, &refs)?;
        let gt = ground_truth_bev(&scenario, frame)?;
        let iou = iou_semantic(&pred, &gt)?;
        let pq = panoptic_quality(&match_instances(&pred, &gt)?);
        metrics.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            frame, iou, pq.pq, pq.sq, pq.rq, pq.tp, pq.fp, pq.fn_
        ));
    }
    write_text(&dir, "metrics.csv", &metrics)?;

    if cfg.simulate.export_bev {
        let frame = scenario.observation_frame();
        let (selected, masks) = sparse_views(&env, &action, frame)?;
        let refs: Vec<&SparseImage> = masks.iter().collect();
        let pred = proxy_perceive(&scenario, frame, &selected, &refs)?;
        let mut pred_grid = BevGrid::empty(scenario.bev);
        for inst in &pred.instances {
            for &(w, h) in &inst.cells {
                pred_grid.add_hit(w, h, inst.id);
            }
        }
        write_text(&dir, "bev_pred.csv", &pred_grid.to_csv_string())?;
        let gt = ground_truth_bev(&scenario, frame)?;
        let mut gt_grid = BevGrid::empty(scenario.bev);
        for inst in &gt.instances {
            for &(w, h) in &inst.cells {
                gt_grid.add_hit(w, h, inst.id);
            }
        }
        write_text(&dir, "bev_gt.csv", &gt_grid.to_csv_string())?;
    }

    if cfg.simulate.export_channel {
        env.channel
            .export(&dir.join("channel.bin"), &dir.join("channel.json"))
            .context("export channel tensor")?;
    }
    Ok(())
}
