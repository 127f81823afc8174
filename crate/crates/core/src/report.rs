//! Human-readable summaries shared by the CLI and the tests.

use std::fmt::Write;

use crate::cost::{throughput_ratio, CostEstimate};
use crate::dse::DseReport;
use crate::scalar::Scalar;

/// Ratio printed with three decimals.
pub fn format_ratio<T: Scalar>(r: T) -> String {
    format!("{:.3}", r.as_f64())
}

/// `throughput ratio: <r>x` for `candidate` relative to `reference`.
pub fn throughput_comparison<T: Scalar>(candidate: &CostEstimate<T>, reference: &CostEstimate<T>) -> String {
    format!(
        "throughput ratio: {}x (ii {} vs {} cycles)",
        format_ratio(throughput_ratio(candidate, reference)),
        candidate.ii_cycles,
        reference.ii_cycles
    )
}

pub fn aggregate_line<T: Scalar>(est: &CostEstimate<T>, device_luts: T) -> String {
    format!(
        "bottleneck {} | ii {} cycles | latency {} cycles | {:.1} fps | {:.1} LUTs ({:.2}% of device)",
        est.bottleneck_layer_id,
        est.ii_cycles,
        est.latency_cycles,
        est.throughput_fps.as_f64(),
        est.total_luts.as_f64(),
        100.0 * est.utilization(device_luts).as_f64()
    )
}

/// LUT usage of `est` relative to both the device and a reference design.
pub fn lut_ratios<T: Scalar>(est: &CostEstimate<T>, device_luts: T, reference: &CostEstimate<T>) -> String {
    format!(
        "LUTs: {:.2}% of device ({:.0}), {:.2}% of the dense full-unroll design ({:.0})",
        100.0 * (est.total_luts / device_luts).as_f64(),
        device_luts.as_f64(),
        100.0 * (est.total_luts / reference.total_luts).as_f64(),
        reference.total_luts.as_f64()
    )
}

pub fn dse_summary<T: Scalar>(report: &DseReport<T>, compression: T, dense_unroll: &CostEstimate<T>) -> String {
    let mut s = String::new();
    let b = &report.baseline_estimate;
    let f = &report.final_estimate;
    let _ = writeln!(
        s,
        "folding baseline + pre-pass: {}",
        aggregate_line(b, report.budget.device_luts)
    );
    if !report.prepass_converted.is_empty() {
        let _ = writeln!(s, "sparse pre-pass converted: {}", report.prepass_converted.join(", "));
    }
    let _ = writeln!(s, "accepted moves: {}", report.accepted_moves.len());
    for (i, m) in report.accepted_moves.iter().enumerate() {
        let value = m.new_value.map_or_else(String::new, |v| format!(" -> {v}"));
        let _ = writeln!(
            s,
            "  {:>3}. {:<17} {:<10}{value:<8} ii {} -> {} | LUTs {:+.1}",
            i + 1,
            m.kind.to_string(),
            m.layer_id,
            m.before.ii_cycles,
            m.after.ii_cycles,
            m.delta_luts.as_f64()
        );
    }
    let _ = writeln!(s, "final: {}", aggregate_line(f, report.budget.device_luts));
    let _ = writeln!(s, "speed-up over baseline: {}", throughput_comparison(f, b));
    let _ = writeln!(
        s,
        "speed-up over dense full unroll: {}",
        throughput_comparison(f, dense_unroll)
    );
    let _ = writeln!(s, "{}", lut_ratios(f, report.budget.device_luts, dense_unroll));
    let _ = writeln!(s, "compression ratio: {:.2}x", compression.as_f64());
    let _ = writeln!(s, "sparse layers: [{}]", report.sparse_layers.join(", "));
    let _ = write!(s, "dense layers: [{}]", report.dense_layers.join(", "));
    s
}
