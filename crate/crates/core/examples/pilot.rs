//! Runs every method on the synthetic family over seeds 0..5 and prints
//! median held-out MRR / KNN / DC with the full refinement, without scaling,
//! and without any refinement.
//!
//! Usage: `cargo run --release -p xmodal-core --example pilot -- [separation]`

use std::time::Instant;

use xmodal_core::model::{
    aligned_set, fit_method, fit_refinement, manifold_metrics, CcaOptions, EvalOptions, Method,
};
use xmodal_core::synth::{self, SynthConfig};
use xmodal_core::{split_dataset, AblationFlags, DistanceMetric, TrainConfig};

const VARIANTS: [(&str, AblationFlags); 3] = [
    ("full", AblationFlags::ALL),
    (
        "no-scaling",
        AblationFlags {
            translation: true,
            scaling: false,
            rotation: true,
        },
    ),
    ("none", AblationFlags::NONE),
];

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() {
    let sep: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("separation"))
        .unwrap_or(SynthConfig::default().class_separation);
    let seeds = 0..5u64;
    // rows[method][variant] = per-seed (mrr, knn, dc)
    let mut rows = vec![vec![Vec::new(); VARIANTS.len()]; Method::ALL.len()];
    let start = Instant::now();
    for seed in seeds.clone() {
        let ds = synth::generate(&SynthConfig {
            seed,
            class_separation: sep,
            ..SynthConfig::default()
        })
        .unwrap();
        let (trainval, test) = split_dataset(&ds, 0.2, seed).unwrap();
        let (train, val) = split_dataset(&trainval, 0.1, seed).unwrap();
        let cfg = TrainConfig {
            embed_dim: 32,
            seed,
            ..TrainConfig::default()
        };
        for (mi, method) in Method::ALL.into_iter().enumerate() {
            let fitted = fit_method(method, &train, &val, &cfg, CcaOptions::default()).unwrap();
            let metric = if method == Method::TripletEuclidean {
                DistanceMetric::Euclidean
            } else {
                DistanceMetric::Cosine
            };
            let opts = EvalOptions {
                metric,
                ..Default::default()
            };
            for (vi, (_, flags)) in VARIANTS.iter().enumerate() {
                let tr = fit_refinement(&fitted.model, &train, *flags).unwrap();
                let ts = aligned_set(&fitted.model, &tr, &test).unwrap();
                let m = manifold_metrics(&ts, &opts).unwrap();
                rows[mi][vi].push((m.mrr, m.knn, m.dc));
            }
        }
    }
    println!(
        "separation {sep}, seeds {seeds:?}, {:.1}s",
        start.elapsed().as_secs_f64()
    );
    for (mi, method) in Method::ALL.into_iter().enumerate() {
        for (vi, (name, _)) in VARIANTS.iter().enumerate() {
            let r = &rows[mi][vi];
            println!(
                "{:22} {:10} mrr {:.3} knn {:.3} dc {:.3}",
                method.name(),
                name,
                median(r.iter().map(|x| x.0).collect()),
                median(r.iter().map(|x| x.1).collect()),
                median(r.iter().map(|x| x.2).collect()),
            );
        }
    }
}
