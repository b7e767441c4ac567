use std::collections::BTreeMap;

use nalgebra::Vector3;
use proptest::prelude::*;

use splatcal::dcp::{accumulate, prune, select_for_pruning, DcpReport};
use splatcal::trainer::TrainState;
use splatcal::{CalibConfig, GaussianPrimitive, Image};

fn planted(n_surface: usize, n_floater: usize) -> (Vec<GaussianPrimitive>, Vec<bool>) {
    let mut gs = Vec::new();
    let mut flags = Vec::new();
    for i in 0..n_surface {
        gs.push(GaussianPrimitive::isotropic(Vector3::new(i as f64 * 0.1, 0.0, 0.0), 0.05, 0.9, Vector3::repeat(0.3)));
        flags.push(false);
    }
    for i in 0..n_floater {
        gs.push(GaussianPrimitive::isotropic(Vector3::new(i as f64 * 0.1, 0.0, -1.5), 0.1, 0.08, Vector3::repeat(0.8)));
        flags.push(true);
    }
    (gs, flags)
}

fn report_with_ratio(ratio: f64) -> DcpReport {
    // A hazy image whose ratio is then overwritten; only the ratio feeds the scores.
    let mut r = DcpReport::with_params(&Image::filled(8, 8, [0.5; 3]), 0.1, 0.5, 3).unwrap();
    r.violation_ratio = ratio;
    r
}

#[test]
fn planted_floaters_pruned_after_five_rounds() {
    let cfg = CalibConfig {
        eta: 0.5,
        t_prune: 5,
        alpha_min: 0.1,
        ..CalibConfig::default()
    };
    let (gs, flags) = planted(20, 8);
    let mut state = TrainState::new(gs, &cfg, 0);
    // Floaters are seen by every view, surface splats only by every other one.
    let floater_ids: Vec<usize> = (20..28).collect();
    let mut ledger: BTreeMap<usize, f64> = BTreeMap::new();
    for round in 0..5 {
        let mut visible = floater_ids.clone();
        if round % 2 == 0 {
            visible.extend(0..20);
        }
        for &i in &visible {
            *ledger.entry(i).or_default() += 0.6;
        }
        accumulate(&mut state, &report_with_ratio(0.6), &visible);
    }
    for (i, g) in state.gaussians.iter().enumerate() {
        let expect = ledger.get(&i).copied().unwrap_or(0.0);
        assert!((g.dcp_score - expect).abs() < 1e-12, "score {i}");
    }
    let decision = prune(&mut state, &cfg);
    let expected: Vec<usize> = ledger
        .iter()
        .filter(|(i, s)| **s > 2.5 && flags[**i])
        .map(|(i, _)| *i)
        .collect();
    assert_eq!(decision.pruned_indices, expected);
    assert_eq!(decision.pruned_indices, floater_ids);
    assert_eq!(state.len(), 20);
    assert!(state.gaussians.iter().all(|g| g.opacity() > 0.5));
    assert!(state.gaussians.iter().all(|g| g.dcp_score == 0.0));
    assert_eq!(state.optimizer.to_bytes().len(), {
        let fresh = TrainState::new(planted(20, 0).0, &cfg, 0);
        fresh.optimizer.to_bytes().len()
    });
}

#[test]
fn pruning_never_empties_the_scene() {
    let cfg = CalibConfig {
        eta: 0.01,
        t_prune: 1,
        alpha_min: 0.5,
        ..CalibConfig::default()
    };
    let (mut gs, _) = planted(0, 5);
    gs.iter_mut().for_each(|g| g.dcp_score = 10.0);
    let d = select_for_pruning(&gs, &cfg);
    assert!(d.pruned_indices.is_empty());
    assert!(d.warning.is_some());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_monotone_and_bounded(
        rounds in prop::collection::vec((0.0f64..=1.0, prop::collection::vec(0usize..12, 0..12)), 1..30),
    ) {
        let cfg = CalibConfig::default();
        let (gs, _) = planted(6, 6);
        let mut state = TrainState::new(gs, &cfg, 0);
        let mut prev = [0.0; 12];
        for (k, (ratio, mut visible)) in rounds.into_iter().enumerate() {
            visible.sort_unstable();
            visible.dedup();
            accumulate(&mut state, &report_with_ratio(ratio), &visible);
            for (i, g) in state.gaussians.iter().enumerate() {
                prop_assert!(g.dcp_score >= prev[i]);
                prop_assert!(g.dcp_score <= (k + 1) as f64 + 1e-12);
                prev[i] = g.dcp_score;
            }
        }
    }

    #[test]
    fn only_low_opacity_high_score_is_selected(
        entries in prop::collection::vec((0.001f64..0.999, 0.0f64..2000.0), 2..60),
        alpha_min in 0.01f64..0.5,
    ) {
        let cfg = CalibConfig { alpha_min, ..CalibConfig::default() };
        let lambda = cfg.prune_threshold();
        let gs: Vec<GaussianPrimitive> = entries
            .iter()
            .map(|&(a, s)| {
                let mut g = GaussianPrimitive::isotropic(Vector3::zeros(), 0.1, a, Vector3::repeat(0.5));
                g.dcp_score = s;
                g
            })
            .collect();
        let d = select_for_pruning(&gs, &cfg);
        let expected: Vec<usize> = gs
            .iter()
            .enumerate()
            .filter(|(_, g)| g.dcp_score > lambda && g.opacity() < alpha_min)
            .map(|(i, _)| i)
            .collect();
        if expected.len() == gs.len() {
            prop_assert!(d.pruned_indices.is_empty());
        } else {
            prop_assert_eq!(d.pruned_indices, expected);
        }
    }
}
