//! Pilot runs used to calibrate the synthetic protocols.
//!
//! ```text
//! cargo run --release -p nhnn --example pilot -- margin  [seeds] [seed0]
//! cargo run --release -p nhnn --example pilot -- ratio   [seeds] [seed0]
//! cargo run --release -p nhnn --example pilot -- lambda  [seeds] [seed0]
//! cargo run --release -p nhnn --example pilot -- scaling
//! ```
//!
//! `PILOT_PATIENCE` overrides the early-stopping patience (default 200) and
//! `PILOT_SPEC` takes a JSON `SyntheticSpec` overriding the generator defaults.

use std::time::Instant;

use nhnn::bench::{scaling_benchmark, BenchSize};
use nhnn::model::{ModelConfig, Variant};
use nhnn::sweep::{sweep, DataSource, SweepGrid, SweepOutcome};
use nhnn::synthetic::{generate_planted, SyntheticSpec};
use nhnn::train::TrainConfig;

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn macro_f1(o: &SweepOutcome) -> f64 {
    o.result.as_ref().expect("run failed").test.macro_f1
}

fn main() -> nhnn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map_or("margin", String::as_str);
    let seeds: u64 = args.get(2).map_or(10, |s| s.parse().unwrap());
    let seed0: u64 = args.get(3).map_or(0, |s| s.parse().unwrap());
    let spec: SyntheticSpec = std::env::var("PILOT_SPEC")
        .map(|j| serde_json::from_str(&j).expect("SyntheticSpec JSON"))
        .unwrap_or_default();
    let train = TrainConfig {
        patience: env_or("PILOT_PATIENCE", 200),
        ..TrainConfig::default()
    };
    let model = ModelConfig::default();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let source = DataSource::Planted(spec.clone());
    let seed_list: Vec<u64> = (seed0..seed0 + seeds).collect();
    let started = Instant::now();

    match mode {
        "margin" => {
            let grid = SweepGrid {
                variants: vec![Variant::Full, Variant::Ablation],
                seeds: seed_list.clone(),
                ..SweepGrid::default()
            };
            let out = sweep::<f64>(&source, &grid, &model, &train, jobs)?;
            let (full, abl) = out.split_at(seed_list.len());
            let margins: Vec<f64> = full.iter().zip(abl).map(|(f, a)| macro_f1(f) - macro_f1(a)).collect();
            let aucs: Vec<f64> = full
                .iter()
                .map(|f| f.result.as_ref().unwrap().recovery.expect("planted").auc)
                .collect();
            for ((f, a), auc) in full.iter().zip(abl).zip(&aucs) {
                println!("seed {}: full {:.3} ablation {:.3} auc {:.3}", f.run.seed, macro_f1(f), macro_f1(a), auc);
            }
            println!(
                "mean margin {:.4}, positive {}/{}, mean auc {:.3}",
                mean(&margins),
                margins.iter().filter(|&&m| m > 0.0).count(),
                margins.len(),
                mean(&aucs)
            );
        }
        "ratio" => {
            let grid = SweepGrid {
                variants: vec![Variant::Full, Variant::Hgnn],
                train_ratios: vec![0.5, 0.1],
                seeds: seed_list.clone(),
                ..SweepGrid::default()
            };
            let out = sweep::<f64>(&source, &grid, &model, &train, jobs)?;
            let n = seed_list.len();
            let f1 = |block: usize| -> Vec<f64> { out[block * n..(block + 1) * n].iter().map(macro_f1).collect() };
            let (full50, full10, hg50, hg10) = (f1(0), f1(1), f1(2), f1(3));
            let drop = |hi: &[f64], lo: &[f64]| (mean(hi) - mean(lo)) / mean(hi);
            println!("full 50% {:.3} 10% {:.3}; hgnn 50% {:.3} 10% {:.3}", mean(&full50), mean(&full10), mean(&hg50), mean(&hg10));
            println!(
                "relative degradation full {:.4} hgnn {:.4} ratio {:.3}",
                drop(&full50, &full10),
                drop(&hg50, &hg10),
                drop(&full50, &full10) / drop(&hg50, &hg10)
            );
        }
        "lambda" => {
            let grid = SweepGrid {
                lambdas: vec![0.0, env_or("PILOT_LAMBDA", 0.01)],
                seeds: seed_list.clone(),
                ..SweepGrid::default()
            };
            let out = sweep::<f64>(&source, &grid, &model, &train, jobs)?;
            let n = seed_list.len();
            let mut lower = 0;
            for (i, &seed) in seed_list.iter().enumerate() {
                let ds = generate_planted(&SyntheticSpec { seed, ..spec.clone() })?;
                let live: Vec<usize> = (0..ds.hypergraph.num_edges()).filter(|&e| ds.hypergraph.edge_degree(e) > 0).collect();
                let (c0, c1) = (out[i].alpha_correlation(&live).unwrap(), out[n + i].alpha_correlation(&live).unwrap());
                lower += usize::from(c1 < c0);
                println!("seed {seed}: |r| without {c0:.3} with {c1:.3}");
            }
            println!("lower with discrimination loss: {lower}/{n}");
        }
        "scaling" => {
            let trials = env_or("PILOT_TRIALS", 5);
            let nodes = env_or("PILOT_N", 4096);
            let edges = env_or("PILOT_M", 2048);
            let hidden = env_or("PILOT_D", 8);
            let base = env_or("PILOT_E", 524_288);
            let points = env_or("PILOT_POINTS", 3);
            let sizes: Vec<BenchSize> = (0..points)
                .map(|i| BenchSize {
                    nodes,
                    edges,
                    incidences: base << i,
                    hidden,
                    factors: 2,
                })
                .collect();
            let rows = scaling_benchmark::<f64>(&sizes, trials, 0)?;
            for r in &rows {
                println!("E {:>8}: {:.5}s", r.incidences, r.median_seconds);
            }
            for w in rows.windows(2) {
                println!("ratio {:.3}", w[1].median_seconds / w[0].median_seconds);
            }
        }
        other => panic!("unknown mode {other}"),
    }
    println!("{:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
