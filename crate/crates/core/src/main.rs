use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use sparsefold::cost::{
    estimate, load_config, save_config, validate_config, CostCoefficients, FoldMode, FoldingConfig, DEFAULT_CLOCK_MHZ,
};
use sparsefold::dse::{run_dse, Budget};
use sparsefold::model::{checksum_model, load_model};
use sparsefold::oracle::exhaustive_best_config;
use sparsefold::prune::{
    compression_ratio, global_magnitude_prune, layer_sparsity_report, load_profile, save_profile, SparsityTable,
};
use sparsefold::quant::{evaluate_accuracy, load_testset, QuantPlan};
use sparsefold::report::{aggregate_line, dse_summary, format_ratio, throughput_comparison};
use sparsefold::sparse_map::{export_sparse_map, verify_map_against_inference, write_sparse_export};
use sparsefold::{Coefficients, Config, Error, Model, Profile};

const DEFAULT_DEVICE_LUTS: f64 = 872_000.0;
const DEFAULT_BUDGET_FRACTION: f64 = 0.7;
const DEFAULT_SPARSITY: f64 = 0.845;
const COEFFS_ENV: &str = "SPARSEFOLD_COEFFS";

#[derive(Parser)]
#[command(
    name = "sparsefold",
    version,
    about = "Sparsity-aware folding exploration for dataflow QNN accelerators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Global magnitude pruning; writes a sparsity profile.
    Prune {
        model: PathBuf,
        #[arg(long)]
        sparsity: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-layer cycle/LUT estimate of a folding configuration.
    Estimate {
        model: PathBuf,
        /// Config file, or one of `ones`, `unrolled-dense`, `unrolled-sparse`.
        #[arg(long)]
        config: String,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[command(flatten)]
        coeffs: CoeffArgs,
        /// Write the per-layer table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DEVICE_LUTS)]
        device_luts: f64,
        /// Second config to compare throughput against.
        #[arg(long)]
        compare: Option<String>,
    },
    /// Full exploration: prune, fold, sparse pre-pass, bottleneck elimination.
    Dse {
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPARSITY)]
        sparsity: f64,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        coeffs: CoeffArgs,
        #[arg(long, default_value_t = DEFAULT_CLOCK_MHZ)]
        clock_mhz: f64,
        /// Allow non-divisor folds in a second balancing pass.
        #[arg(long, overrides_with = "no_relax", default_value_t = true)]
        relax: bool,
        #[arg(long = "no-relax")]
        no_relax: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Integer inference accuracy on a labelled testset.
    Simulate {
        model: PathBuf,
        #[arg(long)]
        testset: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Apply masks only to the config's UnrolledSparse layers.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Exhaustive search versus the heuristic on a small model.
    Oracle {
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPARSITY)]
        sparsity: f64,
        #[command(flatten)]
        budget: BudgetArgs,
        #[command(flatten)]
        coeffs: CoeffArgs,
        #[arg(long)]
        relax: bool,
    },
    /// Writes sparse-connection maps for the UnrolledSparse layers of a config.
    ExportSparseMap {
        model: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Random inputs used to check the maps against inference.
        #[arg(long, default_value_t = 100)]
        verify: usize,
    },
}

#[derive(Args)]
struct CoeffArgs {
    /// Coefficient calibration JSON (defaults to $SPARSEFOLD_COEFFS, then built-ins).
    #[arg(long)]
    coeffs: Option<PathBuf>,
}

impl CoeffArgs {
    fn load(&self) -> anyhow::Result<Coefficients> {
        let path = self
            .coeffs
            .clone()
            .or_else(|| std::env::var_os(COEFFS_ENV).map(PathBuf::from));
        match path {
            Some(p) => Ok(CostCoefficients::load(&p)?),
            None => Ok(CostCoefficients::default()),
        }
    }
}

#[derive(Args)]
struct BudgetArgs {
    /// LUT budget (default: 0.7 of the device).
    #[arg(long)]
    budget_luts: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_DEVICE_LUTS)]
    device_luts: f64,
}

impl BudgetArgs {
    fn budget(&self) -> anyhow::Result<Budget<f64>> {
        let max = self.budget_luts.unwrap_or(DEFAULT_BUDGET_FRACTION * self.device_luts);
        Ok(Budget::new(max, self.device_luts)?)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InfeasibleBudget { .. }) => 2,
        Some(Error::SearchSpaceTooLarge { .. }) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn model_at(path: &Path) -> anyhow::Result<Model> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn resolve_config(spec: &str, model: &Model, profile: Option<&Profile>) -> anyhow::Result<Config> {
    let cfg = match spec {
        "ones" => FoldingConfig::all_ones(model, DEFAULT_CLOCK_MHZ),
        "unrolled-dense" => FoldingConfig::unrolled(model, FoldMode::UnrolledDense, DEFAULT_CLOCK_MHZ),
        "unrolled-sparse" => {
            let mut cfg = FoldingConfig::unrolled(model, FoldMode::UnrolledDense, DEFAULT_CLOCK_MHZ);
            for l in model.weighted_layers().filter(|l| l.prunable) {
                cfg.set(
                    &l.id,
                    sparsefold::cost::LayerFold::unrolled(l, FoldMode::UnrolledSparse),
                );
            }
            if profile.is_none() {
                bail!("config `unrolled-sparse` needs --profile");
            }
            cfg
        }
        path => load_config(path, model)?,
    };
    let violations = validate_config(model, &cfg);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| format!("  {v}")).collect();
        bail!("invalid folding config {spec}:\n{}", list.join("\n"));
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Prune { model, sparsity, out } => {
            let m = model_at(&model)?;
            let profile = global_magnitude_prune(&m, sparsity)?;
            save_profile(&profile, &checksum_model(&m), &out)?;
            println!("{}", SparsityTable(&layer_sparsity_report(&profile)));
            println!("global threshold: {}", profile.global_threshold);
        }
        Command::Estimate {
            model,
            config,
            profile,
            coeffs,
            csv,
            device_luts,
            compare,
        } => {
            let m = model_at(&model)?;
            let coeffs = coeffs.load()?;
            let profile = profile.map(|p| load_profile(&p, &m)).transpose()?;
            let cfg = resolve_config(&config, &m, profile.as_ref())?;
            let est = estimate(&m, &cfg, profile.as_ref(), &coeffs)?;
            print!("{}", est.table());
            println!("{}", aggregate_line(&est, device_luts));
            if let Some(path) = csv {
                write_text(&path, &est.to_csv())?;
            }
            if let Some(other) = compare {
                let other_cfg = resolve_config(&other, &m, profile.as_ref())?;
                let other_est = estimate(&m, &other_cfg, profile.as_ref(), &coeffs)?;
                println!("compared to {other}: {}", aggregate_line(&other_est, device_luts));
                println!("{}", throughput_comparison(&est, &other_est));
            }
        }
        Command::Dse {
            model,
            sparsity,
            budget,
            coeffs,
            clock_mhz,
            relax,
            no_relax,
            out,
        } => {
            let m = model_at(&model)?;
            let coeffs = coeffs.load()?;
            let budget = budget.budget()?;
            let outcome = run_dse(&m, sparsity, &budget, &coeffs, clock_mhz, relax && !no_relax)?;
            let report = &outcome.report;
            let checksum = checksum_model(&m);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            save_config(&outcome.final_config, &checksum, out.join("folding_config.json"))?;
            save_profile(&outcome.profile, &checksum, out.join("profile.json"))?;
            let json = serde_json::to_string_pretty(&report.to_json())?;
            write_text(&out.join("dse_report.json"), &(json + "\n"))?;
            write_text(&out.join("pareto.csv"), &report.pareto_csv())?;
            write_text(&out.join("final_estimate.csv"), &report.final_estimate.to_csv())?;
            let plan = QuantPlan::from_model(&m);
            let export = export_sparse_map(&m, &outcome.profile, &outcome.final_config, &plan)?;
            write_sparse_export(&export, out.join("sparse_maps"))?;

            let sparse: BTreeSet<String> = report.sparse_layers.iter().cloned().collect();
            let compression = compression_ratio(&m, &outcome.profile, &sparse);
            let unroll = estimate(
                &m,
                &FoldingConfig::unrolled(&m, FoldMode::UnrolledDense, clock_mhz),
                None,
                &coeffs,
            )?;
            println!("{}", dse_summary(report, compression, &unroll));
            println!("outputs written to {}", out.display());
        }
        Command::Simulate {
            model,
            testset,
            profile,
            config,
        } => {
            let m = model_at(&model)?;
            let samples = load_testset(&testset, m.input_shape())?;
            let profile = profile.map(|p| load_profile(&p, &m)).transpose()?;
            let masks = match (&profile, config) {
                (Some(p), Some(c)) => {
                    let cfg: Config = load_config(&c, &m)?;
                    let sparse: BTreeSet<String> = cfg
                        .layers_in_mode(FoldMode::UnrolledSparse)
                        .map(str::to_string)
                        .collect();
                    Some(p.restricted_to(&sparse))
                }
                (Some(p), None) => Some(p.clone()),
                (None, Some(_)) => bail!("--config needs --profile"),
                (None, None) => None,
            };
            let plan = QuantPlan::from_model(&m);
            let acc = evaluate_accuracy(&m, masks.as_ref(), &plan, &samples)?;
            let correct = (acc * samples.len() as f64).round() as usize;
            println!("accuracy: {acc:.4} ({correct}/{})", samples.len());
        }
        Command::Oracle {
            model,
            sparsity,
            budget,
            coeffs,
            relax,
        } => {
            let m = model_at(&model)?;
            let coeffs = coeffs.load()?;
            let budget = budget.budget()?;
            let profile = global_magnitude_prune(&m, sparsity)?;
            let best = exhaustive_best_config(&m, Some(&profile), &budget, &coeffs, DEFAULT_CLOCK_MHZ)?;
            let Some((_, oracle)) = best else {
                let floor = estimate(&m, &FoldingConfig::all_ones(&m, DEFAULT_CLOCK_MHZ), None, &coeffs)?;
                return Err(Error::InfeasibleBudget {
                    required: floor.total_luts,
                    budget: budget.max_luts,
                }
                .into());
            };
            let heur = run_dse(&m, sparsity, &budget, &coeffs, DEFAULT_CLOCK_MHZ, relax)?;
            let h = &heur.report.final_estimate;
            let gap = 100.0 * (h.ii_cycles as f64 - oracle.ii_cycles as f64) / oracle.ii_cycles as f64;
            println!("oracle:    {}", aggregate_line(&oracle, budget.device_luts));
            println!("heuristic: {}", aggregate_line(h, budget.device_luts));
            println!(
                "ii gap: {gap:.2}% (heuristic/oracle ii ratio {})",
                format_ratio(h.ii_cycles as f64 / oracle.ii_cycles as f64)
            );
        }
        Command::ExportSparseMap {
            model,
            profile,
            config,
            out,
            verify,
        } => {
            let m = model_at(&model)?;
            let profile = load_profile(&profile, &m)?;
            let cfg: Config = load_config(&config, &m)?;
            let violations = validate_config(&m, &cfg);
            if let Some(v) = violations.first() {
                bail!("invalid folding config: {v}");
            }
            let plan = QuantPlan::from_model(&m);
            let export = export_sparse_map(&m, &profile, &cfg, &plan)?;
            write_sparse_export(&export, &out)?;
            for row in &export.layers {
                println!(
                    "{}: {} connections ({} kept by profile, {} quantized to zero)",
                    row.layer, row.connections, row.profile_nnz, row.quantized_zero_drops
                );
            }
            if verify > 0 {
                let v = verify_map_against_inference(&export.maps, &m, &profile, &plan, verify, 0)?;
                if !v.passed() {
                    bail!("map verification failed:\n{}", v.failures.join("\n"));
                }
                println!("verified against inference on {} random inputs", v.inputs_checked);
            }
        }
    }
    Ok(())
}
