//! Scratch probe for sweep dynamics (not part of the test suite).

use copersim::channel::{realize_channel, ChannelConfig};
use copersim::env::{Environment, JointAction, KappaGrid};
use copersim::link::build_codebook;
use copersim::metrics::{ground_truth_bev, iou_semantic, proxy_perceive};
use copersim::rng::derive_seed;
use copersim::scenario::{generate_scenario, render_view, ScenarioConfig};
use copersim::sparsify::{importance_map, neighborhood_score, top_k_select, SparseImage};

fn trend_scenario(seed: u64, num_uavs: usize) -> copersim::scenario::Scenario {
    generate_scenario(&ScenarioConfig {
        area_width_m: 80.0,
        area_height_m: 80.0,
        num_uavs,
        num_vehicles: 8,
        frames: 7,
        input_frames: 3,
        image_height: 56,
        image_width: 120,
        bev_cell_m: 2.0,
        speed_min_m_s: 0.0,
        speed_max_m_s: 0.0,
        rng_seed: seed,
        ..ScenarioConfig::default()
    })
    .unwrap()
}

fn mean_iou(scenario: &copersim::scenario::Scenario, kappa: f64, uav_count: usize) -> f64 {
    let frame = scenario.observation_frame();
    let sel: Vec<usize> = (0..uav_count).collect();
    let masks: Vec<SparseImage> = sel
        .iter()
        .map(|&u| {
            let view = render_view(scenario, &scenario.uavs[u], frame).unwrap();
            let scores = neighborhood_score(&importance_map(&view));
            top_k_select(&view, &scores, kappa).unwrap()
        })
        .collect();
    let refs: Vec<&SparseImage> = masks.iter().collect();
    let pred = proxy_perceive(scenario, frame, &sel, &refs).unwrap();
    let frames = scenario.prediction_frames();
    let ious: Vec<f64> = frames
        .iter()
        .map(|&t| iou_semantic(&pred, &ground_truth_bev(scenario, t).unwrap()).unwrap())
        .collect();
    ious.iter().sum::<f64>() / ious.len() as f64
}

fn main() {
    let kappas = [0.05, 0.1, 0.15, 0.25, 0.5, 1.0];
    println!("== kappa sweep (4 UAVs) ==");
    let mut diminishing = 0;
    let seeds = 20;
    for seed in 0..seeds {
        let scenario = trend_scenario(seed, 4);
        let ious: Vec<f64> = kappas.iter().map(|&k| mean_iou(&scenario, k, 4)).collect();
        let slope_early = (ious[2] - ious[0]) / 0.10;
        let slope_late = (ious[4] - ious[3]) / 0.25; let ceil = ious[5];
        let ok = slope_late <= slope_early + 1e-12;
        diminishing += ok as usize;
        println!(
            "seed {seed}: {:?} early {slope_early:.3} late {slope_late:.3} ceil {ceil:.3} {}",
            ious.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            if ok { "OK" } else { "X" }
        );
    }
    println!("diminishing on {diminishing}/{seeds}");

    println!("== uav count sweep (kappa 0.25) ==");
    for seed in 0..5 {
        let scenario = trend_scenario(seed, 4);
        let by_count: Vec<f64> = [1usize, 2, 4].iter().map(|&c| mean_iou(&scenario, 0.25, c)).collect();
        println!("seed {seed}: {:?}", by_count.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }

    println!("== tiny env reward structure ==");
    let scenario = generate_scenario(&ScenarioConfig {
        area_width_m: 40.0,
        area_height_m: 40.0,
        num_uavs: 2,
        num_vehicles: 3,
        frames: 4,
        input_frames: 2,
        image_height: 40,
        image_width: 64,
        bev_cell_m: 2.0,
        speed_min_m_s: 0.0,
        speed_max_m_s: 0.0,
        rng_seed: 0,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let channel_cfg = ChannelConfig { subcarriers: 4, symbols: 1, ..ChannelConfig::default() };
    let channel = realize_channel(&scenario, &channel_cfg, derive_seed(0, "channel")).unwrap();
    let env = Environment {
        scenario,
        channel,
        kappa_grid: KappaGrid::new(0.05, 0.15, 3).unwrap(),
        codebook: build_codebook(2, 1, 2, 1),
        power_w: 1.0,
        noise_var: 1.0,
        bits_per_sample: 8,
    };
    let frame = env.scenario.observation_frame();
    for mask in [0b01u32, 0b10, 0b11] {
        for k in 0..3 {
            let action = JointAction {
                uav_mask: mask,
                kappa_idx: vec![k; 2],
                precoder_idx: vec![0; 2],
            };
            let out = env.step(frame, &action, 0.5, 0.0).unwrap();
            println!(
                "mask {mask:02b} k{} : U_iou {:.3} U_pq {:.3} L {:.3}s rates {:?}",
                k,
                out.utility_iou,
                out.utility_pq,
                out.latency_max_s,
                out.rates_bps.iter().map(|r| r.map(|v| (v / 1e3).round())).collect::<Vec<_>>()
            );
        }
    }
}
