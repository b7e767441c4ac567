//! Runs the floater benchmark for one seed and prints removal counts and
//! held-out PSNR per ablation.
//!
//! cargo run --release --example ablation -- [seed] [iters]

use std::time::Instant;

use splatcal::scenegen::{generate, inject_floaters, FloaterSpec, SceneSpec};
use splatcal::trainer::{train, Ablation, RemovalSummary};
use splatcal::CalibConfig;

fn main() -> splatcal::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let iters: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let clean = generate(&SceneSpec {
        seed,
        ..Default::default()
    })?;
    let (scene, flags) = inject_floaters(&clean, &FloaterSpec::default(), seed)?;
    let cfg = CalibConfig {
        total_iters: iters,
        t_start: 5000.min(iters / 2),
        t_prune: 1000.min(iters / 4),
        ..Default::default()
    };
    for ablation in Ablation::ALL {
        let t = Instant::now();
        let (state, report) = train(&scene, &cfg, ablation, seed)?;
        let s = RemovalSummary::from_events(&state.events, &flags);
        println!(
            "{:<12} psnr {:.3} gaussians {} floaters pruned {}/{} culled {} surface pruned {} culled {} ({:.1}s)",
            ablation.name(),
            report.final_psnr().unwrap_or(f64::NAN),
            state.len(),
            s.floaters_pruned,
            s.floaters,
            s.floaters_culled,
            s.surface_pruned,
            s.surface_culled,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
