//! Plain-text reports and CSV tables.

use std::fmt::Write;

use xmodal_core::metrics::MacroAveraging;
use xmodal_core::model::{EvalOptions, EvalReport};

use crate::pipeline::{AblationRow, SplitChoice};

/// Run details printed above the metrics.
#[derive(Debug, Clone)]
pub struct ReportContext<'a> {
    pub method: &'a str,
    pub split: SplitChoice,
    pub pairs: usize,
    pub options: &'a EvalOptions,
}

/// `key = value` lines, one per setting or metric.
pub fn format_report(r: &EvalReport, ctx: &ReportContext) -> String {
    let averaging = match ctx.options.averaging {
        MacroAveraging::PerTask => "per-task",
        MacroAveraging::PerClass => "per-class",
    };
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k} = {v}").unwrap();
    kv("method", &ctx.method);
    kv("metric", &ctx.options.metric);
    kv("split", &ctx.split.name());
    kv("pairs", &ctx.pairs);
    kv("mrr", &r.mrr.both);
    kv("mrr_language_to_vision", &r.mrr.language_to_vision);
    kv("mrr_vision_to_language", &r.mrr.vision_to_language);
    kv("knn_k", &ctx.options.k);
    kv("knn", &r.knn.both);
    kv("knn_language_to_vision", &r.knn.language_to_vision);
    kv("knn_vision_to_language", &r.knn.vision_to_language);
    kv("dc", &r.distance_correlation);
    kv("dc_degenerate", &r.dc_degenerate);
    kv("dc_samples", &r.dc_samples.len());
    kv("dc_seed", &ctx.options.dc_seed);
    kv("threshold", &r.threshold);
    kv("micro_f1", &r.micro_f1);
    kv("macro_f1", &r.macro_f1);
    kv("macro_averaging", &averaging);
    kv("auc_tasks", &r.per_task_auc.len());
    kv("auc_skipped_tasks", &r.skipped_tasks.len());
    let mean_auc = if r.per_task_auc.is_empty() {
        f64::NAN
    } else {
        r.per_task_auc.iter().map(|(_, a)| a).sum::<f64>() / r.per_task_auc.len() as f64
    };
    kv("auc_mean", &mean_auc);
    kv("fingerprint", &r.fingerprint);
    s
}

/// Parses `key = value` lines back into pairs, in order.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

pub fn auc_csv(r: &EvalReport) -> String {
    let mut s = String::from("pair_id,auc\n");
    for (id, auc) in &r.per_task_auc {
        writeln!(s, "{id},{auc}").unwrap();
    }
    s
}

pub fn dc_csv(r: &EvalReport) -> String {
    let mut s = String::from("language_distance,vision_distance\n");
    for d in &r.dc_samples {
        writeln!(s, "{},{}", d.language, d.vision).unwrap();
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,mrr,knn,dc\n");
    for row in rows {
        writeln!(
            s,
            "{},{},{},{}",
            row.name, row.metrics.mrr, row.metrics.knn, row.metrics.dc
        )
        .unwrap();
    }
    s
}
