//! Per-epoch wall-clock timing of node-task training on random graphs with
//! `n` nodes and `2n` edges.

use std::io::Write;
use std::time::Instant;

use anyhow::{ensure, Result};
use grade_core::graph::synth_bench_graph;
use grade_core::trainer::{NodeTrainer, TrainConfig};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub nodes: usize,
    pub seconds_per_epoch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares line through `(n, seconds)`; absent for a single size.
    pub fit: Option<LinearFit>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r2 })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        (v[k - 1] + v[k]) / 2.0
    }
}

pub fn run_bench(cfg: &RunConfig) -> Result<BenchReport> {
    ensure!(!cfg.bench.sizes.is_empty(), "bench.sizes is empty");
    ensure!(cfg.bench.repeats > 0, "bench.repeats must be positive");
    let mut run = cfg.clone();
    run.train.base = cfg.bench.base;
    run.fill_defaults(false);
    let tc: TrainConfig = run.train_config(false)?;
    let mut rows = Vec::with_capacity(cfg.bench.sizes.len());
    for &n in &cfg.bench.sizes {
        let source = synth_bench_graph(n, cfg.seed)?;
        let target = synth_bench_graph(n, cfg.seed.wrapping_add(1))?;
        let mut trainer = NodeTrainer::new(&source, &target, tc.clone())?;
        // Warm-up epoch to settle allocations.
        trainer.step()?;
        let times = (0..cfg.bench.repeats)
            .map(|_| {
                let t = Instant::now();
                trainer.step()?;
                Ok(t.elapsed().as_secs_f64())
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(BenchRow {
            nodes: n,
            seconds_per_epoch: median(times),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.nodes as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds_per_epoch).collect();
    Ok(BenchReport {
        fit: linear_fit(&xs, &ys),
        rows,
    })
}

pub fn format_bench(report: &BenchReport) -> String {
    let mut s = String::from("n\tseconds_per_epoch\n");
    for r in &report.rows {
        s.push_str(&format!("{}\t{:.6}\n", r.nodes, r.seconds_per_epoch));
    }
    if let Some(f) = report.fit {
        s.push_str(&format!("slope\t{:e}\nintercept\t{:e}\nr2\t{:.6}\n", f.slope, f.intercept, f.r2));
    }
    s
}

pub fn bench(cfg: &mut RunConfig, out: &mut dyn Write) -> Result<()> {
    let report = run_bench(cfg)?;
    let text = format_bench(&report);
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join(crate::commands::CONFIG_FILE), cfg.to_json())?;
    std::fs::write(cfg.out.join("bench.tsv"), &text)?;
    out.write_all(text.as_bytes())?;
    Ok(())
}
