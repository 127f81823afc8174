//! Design-space exploration: folding baseline, sparse-unfolding pre-pass and
//! iterative bottleneck elimination under a LUT budget.

use std::cmp::Ordering;
use std::fmt;

use serde::Serialize;
use serde_json::{json, Value};

use crate::cost::{
    config_to_json, estimate, layer_luts, next_factor, CostCoefficients, CostEstimate, Divisibility, FoldMode,
    FoldingConfig, LayerFold,
};
use crate::error::{Error, Result};
use crate::model::{checksum_model, LayerNode, ModelGraph};
use crate::prune::{global_magnitude_prune, SparsityProfile};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget<T> {
    pub max_luts: T,
    pub device_luts: T,
    pub max_iterations: usize,
}

impl<T: Scalar> Budget<T> {
    pub fn new(max_luts: T, device_luts: T) -> Result<Self> {
        if [max_luts, device_luts]
            .iter()
            .any(|v| v.partial_cmp(&T::zero()) != Some(Ordering::Greater))
        {
            return Err(Error::InvalidArgument("LUT budgets must be positive".into()));
        }
        if max_luts > device_luts {
            return Err(Error::InvalidArgument(format!(
                "budget {max_luts} exceeds device capacity {device_luts}"
            )));
        }
        Ok(Budget {
            max_luts,
            device_luts,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        })
    }

    pub fn unlimited() -> Self {
        Budget {
            max_luts: T::infinity(),
            device_luts: T::infinity(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    fn fits(&self, luts: T) -> bool {
        luts <= self.max_luts
    }

    fn infeasible(&self, required: T) -> Error {
        Error::InfeasibleBudget {
            required: required.as_f64(),
            budget: self.max_luts.as_f64(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum MoveKind {
    SparseUnfold,
    #[serde(rename = "FactorUnfoldSIMD")]
    FactorUnfoldSimd,
    #[serde(rename = "FactorUnfoldPE")]
    FactorUnfoldPe,
}

impl MoveKind {
    /// Tie-break rank between equally scored moves (higher wins).
    fn rank(self) -> u8 {
        match self {
            MoveKind::SparseUnfold => 2,
            MoveKind::FactorUnfoldSimd => 1,
            MoveKind::FactorUnfoldPe => 0,
        }
    }
}

impl fmt::Display for MoveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MoveKind::SparseUnfold => "SparseUnfold",
            MoveKind::FactorUnfoldSimd => "FactorUnfoldSIMD",
            MoveKind::FactorUnfoldPe => "FactorUnfoldPE",
        })
    }
}

/// An accepted optimisation step with the estimates around it.
#[derive(Clone, Debug, PartialEq)]
pub struct Move<T> {
    pub kind: MoveKind,
    pub layer_id: String,
    /// New PE or SIMD value for factor moves.
    pub new_value: Option<usize>,
    pub fold: LayerFold,
    pub delta_ii_cycles: i64,
    pub delta_luts: T,
    pub before: CostEstimate<T>,
    pub after: CostEstimate<T>,
}

impl<T: Scalar> Move<T> {
    pub fn apply(&self, cfg: &mut FoldingConfig<T>) {
        cfg.set(&self.layer_id, self.fold);
    }

    fn score(&self) -> T {
        let gain = T::from_i64(-self.delta_ii_cycles).expect("cycles");
        gain / self.delta_luts.max(T::one())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParetoPoint<T> {
    pub step: usize,
    pub total_luts: T,
    pub ii_cycles: u64,
    pub throughput_fps: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    /// No budget-respecting move reduces the initiation interval.
    NoCandidate,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DseReport<T> {
    pub model_checksum: String,
    pub budget: Budget<T>,
    /// Output of the folding search, before the sparse pre-pass.
    pub folding_baseline: FoldingConfig<T>,
    pub prepass_converted: Vec<String>,
    /// Configuration the elimination loop started from.
    pub baseline_config: FoldingConfig<T>,
    pub baseline_estimate: CostEstimate<T>,
    pub accepted_moves: Vec<Move<T>>,
    pub final_config: FoldingConfig<T>,
    pub final_estimate: CostEstimate<T>,
    /// Weighted layers left in UnrolledSparse mode, in layer order.
    pub sparse_layers: Vec<String>,
    pub dense_layers: Vec<String>,
    pub pareto_points: Vec<ParetoPoint<T>>,
    pub termination: Termination,
}

/// Whether a layer can be deployed as unrolled-sparse at all: it is
/// prunable and the profile actually removed some of its weights.
pub fn sparse_eligible<T: Scalar>(layer: &LayerNode<T>, profile: Option<&SparsityProfile<T>>) -> bool {
    layer.is_weighted()
        && layer.prunable
        && profile
            .and_then(|p| p.get(&layer.id))
            .is_some_and(|m| m.nnz < m.total())
}

/// Greedy PE/SIMD balancing from the all-ones folding.
///
/// Each step raises PE or SIMD of the current bottleneck to its next valid
/// value, provided this lowers that layer's cycles and keeps the total within
/// budget; the cheaper of the two steps wins, SIMD on ties. With `relax`, a
/// second pass repeats this allowing non-divisor factors.
pub fn baseline_folding_search<T: Scalar>(
    model: &ModelGraph<T>,
    budget: &Budget<T>,
    coeffs: &CostCoefficients<T>,
    clock_mhz: T,
    relax: bool,
) -> Result<FoldingConfig<T>> {
    let mut cfg = FoldingConfig::all_ones(model, clock_mhz);
    let est = estimate(model, &cfg, None, coeffs)?;
    if !budget.fits(est.total_luts) {
        return Err(budget.infeasible(est.total_luts));
    }
    balance_pass(model, &mut cfg, budget, coeffs)?;
    if relax {
        cfg.divisibility = Divisibility::Relaxed;
        balance_pass(model, &mut cfg, budget, coeffs)?;
    }
    Ok(cfg)
}

fn balance_pass<T: Scalar>(
    model: &ModelGraph<T>,
    cfg: &mut FoldingConfig<T>,
    budget: &Budget<T>,
    coeffs: &CostCoefficients<T>,
) -> Result<()> {
    for _ in 0..budget.max_iterations {
        let est = estimate(model, cfg, None, coeffs)?;
        let layer = &model.layers()[est.bottleneck_index];
        let Some(&fold) = cfg.get(&layer.id) else { break };
        if fold.is_unrolled() {
            break;
        }
        let cur_cycles = est.layers[est.bottleneck_index].cycles;
        let cur_luts = est.layers[est.bottleneck_index].luts;
        // (Δluts, prefer-simd rank, fold)
        let mut best: Option<(T, u8, LayerFold)> = None;
        for (is_simd, fan, value) in [(true, layer.fan_in(), fold.simd), (false, layer.fan_out(), fold.pe)] {
            let Some(next) = next_factor(fan, value, cfg.divisibility) else {
                continue;
            };
            let cand = if is_simd {
                LayerFold { simd: next, ..fold }
            } else {
                LayerFold { pe: next, ..fold }
            };
            let cycles = crate::cost::layer_cycles(layer, &cand, cfg.divisibility)?;
            let delta = layer_luts(layer, &cand, None, coeffs)? - cur_luts;
            if cycles >= cur_cycles || !budget.fits(est.total_luts + delta) {
                continue;
            }
            let rank = u8::from(is_simd);
            let better = match &best {
                None => true,
                Some((d, r, _)) => delta < *d || (delta == *d && rank > *r),
            };
            if better {
                best = Some((delta, rank, cand));
            }
        }
        match best {
            Some((_, _, fold)) => cfg.set(&layer.id, fold),
            None => break,
        }
    }
    Ok(())
}

/// Converts every eligible layer whose unrolled-sparse form costs no more
/// LUTs than its current form. Returns the converted layer ids.
pub fn sparse_unfold_prepass<T: Scalar>(
    model: &ModelGraph<T>,
    cfg: &FoldingConfig<T>,
    profile: &SparsityProfile<T>,
    coeffs: &CostCoefficients<T>,
) -> Result<(FoldingConfig<T>, Vec<String>)> {
    let mut out = cfg.clone();
    let mut converted = Vec::new();
    for layer in model.weighted_layers() {
        let Some(&fold) = cfg.get(&layer.id) else { continue };
        if fold.mode == FoldMode::UnrolledSparse || !sparse_eligible(layer, Some(profile)) {
            continue;
        }
        let sparse = LayerFold::unrolled(layer, FoldMode::UnrolledSparse);
        let current = layer_luts(layer, &fold, Some(profile), coeffs)?;
        if layer_luts(layer, &sparse, Some(profile), coeffs)? <= current {
            out.set(&layer.id, sparse);
            converted.push(layer.id.clone());
        }
    }
    Ok((out, converted))
}

fn candidate_moves<T: Scalar>(
    model: &ModelGraph<T>,
    layer: &LayerNode<T>,
    cfg: &FoldingConfig<T>,
    profile: &SparsityProfile<T>,
    coeffs: &CostCoefficients<T>,
    budget: &Budget<T>,
    before: &CostEstimate<T>,
) -> Result<Vec<Move<T>>> {
    let Some(&fold) = cfg.get(&layer.id) else {
        return Ok(Vec::new());
    };
    if fold.mode != FoldMode::Folded {
        return Ok(Vec::new());
    }
    let mut proposals = Vec::new();
    if sparse_eligible(layer, Some(profile)) {
        proposals.push((
            MoveKind::SparseUnfold,
            None,
            LayerFold::unrolled(layer, FoldMode::UnrolledSparse),
        ));
    }
    if let Some(simd) = next_factor(layer.fan_in(), fold.simd, cfg.divisibility) {
        proposals.push((MoveKind::FactorUnfoldSimd, Some(simd), LayerFold { simd, ..fold }));
    }
    if let Some(pe) = next_factor(layer.fan_out(), fold.pe, cfg.divisibility) {
        proposals.push((MoveKind::FactorUnfoldPe, Some(pe), LayerFold { pe, ..fold }));
    }
    let mut out = Vec::new();
    for (kind, new_value, new_fold) in proposals {
        let mut next = cfg.clone();
        next.set(&layer.id, new_fold);
        let after = estimate(model, &next, Some(profile), coeffs)?;
        let delta_ii_cycles = after.ii_cycles as i64 - before.ii_cycles as i64;
        if delta_ii_cycles >= 0 || !budget.fits(after.total_luts) {
            continue;
        }
        out.push(Move {
            kind,
            layer_id: layer.id.clone(),
            new_value,
            fold: new_fold,
            delta_ii_cycles,
            delta_luts: after.total_luts - before.total_luts,
            before: before.clone(),
            after,
        });
    }
    Ok(out)
}

/// Best move by cycle gain per LUT, ties by SparseUnfold > SIMD > PE.
fn pick_best<T: Scalar>(moves: Vec<Move<T>>) -> Option<Move<T>> {
    moves.into_iter().reduce(|best, m| {
        let ord = m
            .score()
            .partial_cmp(&best.score())
            .unwrap_or(Ordering::Equal)
            .then(m.kind.rank().cmp(&best.kind.rank()));
        if ord == Ordering::Greater {
            m
        } else {
            best
        }
    })
}

/// Repeatedly applies the best bottleneck-reducing move that keeps the
/// design within budget, until none exists.
///
/// Only the bottleneck layer is considered, plus layers whose cycles tie it.
pub fn eliminate_bottlenecks<T: Scalar>(
    model: &ModelGraph<T>,
    cfg: &FoldingConfig<T>,
    profile: &SparsityProfile<T>,
    budget: &Budget<T>,
    coeffs: &CostCoefficients<T>,
) -> Result<DseReport<T>> {
    let baseline_estimate = estimate(model, cfg, Some(profile), coeffs)?;
    if !budget.fits(baseline_estimate.total_luts) {
        return Err(budget.infeasible(baseline_estimate.total_luts));
    }
    let mut current = cfg.clone();
    let mut est = baseline_estimate.clone();
    let mut moves = Vec::new();
    let mut termination = Termination::MaxIterations;

    for _ in 0..budget.max_iterations {
        let tied = est
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.cycles == est.ii_cycles)
            .map(|(i, _)| i);
        let mut chosen = None;
        for idx in tied {
            let layer = &model.layers()[idx];
            let cands = candidate_moves(model, layer, &current, profile, coeffs, budget, &est)?;
            if let Some(m) = pick_best(cands) {
                chosen = Some(m);
                break;
            }
        }
        let Some(m) = chosen else {
            termination = Termination::NoCandidate;
            break;
        };
        m.apply(&mut current);
        est = m.after.clone();
        moves.push(m);
    }

    let pareto_points = pareto_filter(
        std::iter::once(&baseline_estimate)
            .chain(moves.iter().map(|m| &m.after))
            .enumerate()
            .map(|(step, e)| ParetoPoint {
                step,
                total_luts: e.total_luts,
                ii_cycles: e.ii_cycles,
                throughput_fps: e.throughput_fps,
            })
            .collect(),
    );
    let (sparse_layers, dense_layers) = dispositions(model, &current);
    Ok(DseReport {
        model_checksum: checksum_model(model),
        budget: *budget,
        folding_baseline: cfg.clone(),
        prepass_converted: Vec::new(),
        baseline_config: cfg.clone(),
        baseline_estimate,
        accepted_moves: moves,
        final_config: current,
        final_estimate: est,
        sparse_layers,
        dense_layers,
        pareto_points,
        termination,
    })
}

fn dispositions<T: Scalar>(model: &ModelGraph<T>, cfg: &FoldingConfig<T>) -> (Vec<String>, Vec<String>) {
    model
        .weighted_layers()
        .map(|l| l.id.clone())
        .partition(|id| cfg.get(id).is_some_and(|f| f.mode == FoldMode::UnrolledSparse))
}

/// Drops points dominated by another (no more LUTs and no less throughput,
/// one of them strictly).
pub fn pareto_filter<T: Scalar>(points: Vec<ParetoPoint<T>>) -> Vec<ParetoPoint<T>> {
    let dominated = |p: &ParetoPoint<T>| {
        points.iter().any(|q| {
            q.total_luts <= p.total_luts
                && q.throughput_fps >= p.throughput_fps
                && (q.total_luts < p.total_luts || q.throughput_fps > p.throughput_fps)
        })
    };
    points.iter().filter(|p| !dominated(p)).copied().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DseOutcome<T> {
    pub report: DseReport<T>,
    pub profile: SparsityProfile<T>,
    pub final_config: FoldingConfig<T>,
}

/// Full flow: prune, balance folding, sparse pre-pass, eliminate bottlenecks.
pub fn run_dse<T: Scalar>(
    model: &ModelGraph<T>,
    target_sparsity: T,
    budget: &Budget<T>,
    coeffs: &CostCoefficients<T>,
    clock_mhz: T,
    relax: bool,
) -> Result<DseOutcome<T>> {
    coeffs.validate()?;
    let profile = global_magnitude_prune(model, target_sparsity)?;
    let folding_baseline = baseline_folding_search(model, budget, coeffs, clock_mhz, relax)?;
    let (start, converted) = sparse_unfold_prepass(model, &folding_baseline, &profile, coeffs)?;
    let mut report = eliminate_bottlenecks(model, &start, &profile, budget, coeffs)?;
    report.folding_baseline = folding_baseline;
    report.prepass_converted = converted;
    debug_assert_eq!(report.check_invariants(model, &profile, coeffs), Ok(()));
    let final_config = report.final_config.clone();
    Ok(DseOutcome {
        report,
        profile,
        final_config,
    })
}

fn estimate_json<T: Scalar>(e: &CostEstimate<T>) -> Value {
    serde_json::to_value(e).expect("estimate serializes")
}

impl<T: Scalar> DseReport<T> {
    pub fn to_json(&self) -> Value {
        let moves: Vec<Value> = self
            .accepted_moves
            .iter()
            .map(|m| {
                json!({
                    "kind": m.kind.to_string(),
                    "layer_id": m.layer_id,
                    "new_value": m.new_value,
                    "fold": m.fold,
                    "delta_ii_cycles": m.delta_ii_cycles,
                    "delta_luts": m.delta_luts.as_f64(),
                    "before": estimate_json(&m.before),
                    "after": estimate_json(&m.after),
                })
            })
            .collect();
        json!({
            "model_checksum": self.model_checksum,
            "budget": {
                "max_luts": finite_or_null(self.budget.max_luts),
                "device_luts": finite_or_null(self.budget.device_luts),
                "max_iterations": self.budget.max_iterations,
            },
            "folding_baseline": config_to_json(&self.folding_baseline, None),
            "prepass_converted": self.prepass_converted,
            "baseline_config": config_to_json(&self.baseline_config, None),
            "baseline_estimate": estimate_json(&self.baseline_estimate),
            "accepted_moves": moves,
            "final_config": config_to_json(&self.final_config, None),
            "final_estimate": estimate_json(&self.final_estimate),
            "sparse_layers": self.sparse_layers,
            "dense_layers": self.dense_layers,
            "pareto_points": self.pareto_points,
            "termination": self.termination,
        })
    }

    /// Checks the engine contract: replaying the moves from the baseline gives
    /// the final config, each move re-estimates to its recorded snapshot,
    /// strictly lowers the initiation interval and stays within budget, and
    /// the Pareto list is non-dominated.
    pub fn check_invariants(
        &self,
        model: &ModelGraph<T>,
        profile: &SparsityProfile<T>,
        coeffs: &CostCoefficients<T>,
    ) -> std::result::Result<(), String> {
        let mut cfg = self.baseline_config.clone();
        let mut prev = self.baseline_estimate.clone();
        if !self.budget.fits(prev.total_luts) {
            return Err(format!(
                "baseline uses {} LUTs over budget {}",
                prev.total_luts, self.budget.max_luts
            ));
        }
        for (i, m) in self.accepted_moves.iter().enumerate() {
            if m.before != prev {
                return Err(format!("move {i}: before-snapshot does not match the previous state"));
            }
            m.apply(&mut cfg);
            let est = estimate(model, &cfg, Some(profile), coeffs).map_err(|e| format!("move {i}: {e}"))?;
            if est != m.after {
                return Err(format!("move {i}: re-estimate differs from the recorded prediction"));
            }
            if est.ii_cycles >= prev.ii_cycles {
                return Err(format!(
                    "move {i}: ii {} -> {} is not a strict decrease",
                    prev.ii_cycles, est.ii_cycles
                ));
            }
            if m.delta_ii_cycles != est.ii_cycles as i64 - prev.ii_cycles as i64 {
                return Err(format!("move {i}: recorded delta_ii does not match"));
            }
            if !self.budget.fits(est.total_luts) {
                return Err(format!(
                    "move {i}: {} LUTs over budget {}",
                    est.total_luts, self.budget.max_luts
                ));
            }
            if !crate::cost::validate_config(model, &cfg).is_empty() {
                return Err(format!("move {i}: produces an invalid config"));
            }
            prev = est;
        }
        if cfg != self.final_config || prev != self.final_estimate {
            return Err("final config is not the baseline with the moves applied".into());
        }
        if self.final_estimate.throughput_fps < self.baseline_estimate.throughput_fps {
            return Err("final throughput below baseline".into());
        }
        let pts = &self.pareto_points;
        for p in pts {
            let dominated = pts.iter().any(|q| {
                q.total_luts <= p.total_luts
                    && q.throughput_fps >= p.throughput_fps
                    && (q.total_luts < p.total_luts || q.throughput_fps > p.throughput_fps)
            });
            if dominated {
                return Err(format!("pareto point at step {} is dominated", p.step));
            }
        }
        Ok(())
    }

    /// Columns: step, total_luts, ii_cycles, throughput_fps.
    pub fn pareto_csv(&self) -> String {
        let mut s = String::from("step,total_luts,ii_cycles,throughput_fps\n");
        for p in &self.pareto_points {
            s.push_str(&format!(
                "{},{},{},{}\n",
                p.step,
                p.total_luts.as_f64(),
                p.ii_cycles,
                p.throughput_fps.as_f64()
            ));
        }
        s
    }
}

fn finite_or_null<T: Scalar>(v: T) -> Value {
    if v.is_finite() {
        json!(v.as_f64())
    } else {
        Value::Null
    }
}
