use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::metrics::MetricRow;

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Densify {
        iteration: u32,
        cloned: usize,
        split: usize,
        count: usize,
    },
    Cull {
        iteration: u32,
        removed_origins: Vec<u32>,
        count: usize,
    },
    Prune {
        iteration: u32,
        lambda: f64,
        removed_origins: Vec<u32>,
        reset: bool,
        skipped: bool,
        count: usize,
    },
}

fn join(origins: &[u32]) -> String {
    if origins.is_empty() {
        return "-".into();
    }
    origins.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

impl Event {
    pub fn iteration(&self) -> u32 {
        match self {
            Event::Densify { iteration, .. } | Event::Cull { iteration, .. } | Event::Prune { iteration, .. } => *iteration,
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Event::Densify {
                iteration,
                cloned,
                split,
                count,
            } => format!("iteration={iteration} event=densify cloned={cloned} split={split} count={count}"),
            Event::Cull {
                iteration,
                removed_origins,
                count,
            } => format!(
                "iteration={iteration} event=cull removed={} count={count} origins={}",
                removed_origins.len(),
                join(removed_origins)
            ),
            Event::Prune {
                iteration,
                lambda,
                removed_origins,
                reset,
                skipped,
                count,
            } => format!(
                "iteration={iteration} event=prune lambda={lambda} removed={} reset={reset} skipped={skipped} count={count} origins={}",
                removed_origins.len(),
                join(removed_origins)
            ),
        }
    }

    /// Inverse of [`to_line`](Self::to_line).
    pub fn parse_line(line: &str) -> Option<Event> {
        let mut fields = std::collections::HashMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=')?;
            fields.insert(k, v);
        }
        let num = |k: &str| fields.get(k)?.parse::<usize>().ok();
        let origins = |k: &str| -> Option<Vec<u32>> {
            let v = fields.get(k)?;
            if *v == "-" {
                return Some(Vec::new());
            }
            v.split(';').map(|s| s.parse().ok()).collect()
        };
        let iteration = fields.get("iteration")?.parse().ok()?;
        Some(match *fields.get("event")? {
            "densify" => Event::Densify {
                iteration,
                cloned: num("cloned")?,
                split: num("split")?,
                count: num("count")?,
            },
            "cull" => Event::Cull {
                iteration,
                removed_origins: origins("origins")?,
                count: num("count")?,
            },
            "prune" => Event::Prune {
                iteration,
                lambda: fields.get("lambda")?.parse().ok()?,
                removed_origins: origins("origins")?,
                reset: fields.get("reset")?.parse().ok()?,
                skipped: fields.get("skipped")?.parse().ok()?,
                count: num("count")?,
            },
            _ => return None,
        })
    }
}

pub fn events_to_text(events: &[Event]) -> String {
    let mut s = String::new();
    for e in events {
        s.push_str(&e.to_line());
        s.push('\n');
    }
    s
}

/// Net change in Gaussian count implied by the events.
pub fn reconcile_count(initial: usize, events: &[Event]) -> usize {
    let mut n = initial as isize;
    for e in events {
        match e {
            Event::Densify { cloned, split, .. } => n += (*cloned + *split) as isize,
            Event::Cull { removed_origins, .. } | Event::Prune { removed_origins, .. } => n -= removed_origins.len() as isize,
        }
    }
    n.max(0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub iteration: u32,
    /// Mean training loss over the interval.
    pub train_loss: f64,
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub gaussian_count: usize,
    pub pruned_total: usize,
    pub culled_total: usize,
    pub mean_dcp_score: f64,
    /// Mean violation ratio over the interval, 0 before monitoring starts.
    pub violation_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
    /// `(iteration, violation ratio)` for every monitored iteration.
    pub violation_trace: Vec<(u32, f64)>,
    pub final_metrics: Vec<MetricRow>,
    pub skipped_nonfinite: u64,
    pub singular_skipped: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "iteration,train_loss,test_psnr,test_ssim,gaussian_count,pruned_total,culled_total,mean_dcp_score,violation_ratio\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{},{:.9},{:.6},{:.8},{},{},{},{:.6},{:.6}",
                r.iteration,
                r.train_loss,
                r.test_psnr,
                r.test_ssim,
                r.gaussian_count,
                r.pruned_total,
                r.culled_total,
                r.mean_dcp_score,
                r.violation_ratio
            )
            .unwrap();
        }
        s
    }

    pub fn violation_csv(&self) -> String {
        let mut s = String::from("iteration,violation_ratio\n");
        for (it, r) in &self.violation_trace {
            writeln!(s, "{it},{r:.8}").unwrap();
        }
        s
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.final_metrics.last().map(|r| r.psnr)
    }
}

/// How many planted floaters and surface Gaussians each removal path took.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RemovalSummary {
    pub floaters: usize,
    pub surface: usize,
    pub floaters_pruned: usize,
    pub surface_pruned: usize,
    pub floaters_culled: usize,
    pub surface_culled: usize,
}

impl RemovalSummary {
    /// `flags[i]` marks whether initial Gaussian `i` was a planted floater.
    /// An origin counts once per path, however many of its descendants went.
    pub fn from_events(events: &[Event], flags: &[bool]) -> Self {
        let mut pruned = BTreeSet::new();
        let mut culled = BTreeSet::new();
        for e in events {
            match e {
                Event::Prune { removed_origins, .. } => pruned.extend(removed_origins.iter().copied()),
                Event::Cull { removed_origins, .. } => culled.extend(removed_origins.iter().copied()),
                Event::Densify { .. } => {}
            }
        }
        let is_floater = |o: &u32| flags.get(*o as usize).copied().unwrap_or(false);
        let floaters = flags.iter().filter(|f| **f).count();
        Self {
            floaters,
            surface: flags.len() - floaters,
            floaters_pruned: pruned.iter().filter(|o| is_floater(o)).count(),
            surface_pruned: pruned.iter().filter(|o| !is_floater(o)).count(),
            floaters_culled: culled.iter().filter(|o| is_floater(o)).count(),
            surface_culled: culled.iter().filter(|o| !is_floater(o)).count(),
        }
    }

    pub fn floater_prune_fraction(&self) -> f64 {
        if self.floaters == 0 {
            0.0
        } else {
            self.floaters_pruned as f64 / self.floaters as f64
        }
    }

    pub fn surface_prune_fraction(&self) -> f64 {
        if self.surface == 0 {
            0.0
        } else {
            self.surface_pruned as f64 / self.surface as f64
        }
    }
}
