//! `qsim`: command-line front-end to the quantization pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsim_core::harness::{
    compare_scalers, fresh_dir, gen_data, run_until, write_json, write_text, ExperimentConfig,
    GenConfig, PipelineReport, Until,
};
use qsim_core::quant::ErrorReport;
use qsim_core::{Result, Scaler};

#[derive(Parser)]
#[command(name = "qsim", version, about = "Fake-quantization pipeline: weight dilation, timestep-indexed activation quantizers, block-wise distillation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic per-timestep activations (act_t{t}.tns + manifest.json).
    GenData(Opts),
    /// Scale, then calibrate weight and per-timestep activation quantizers.
    Calibrate(Opts),
    /// Compute scaling plans and their effect on the quantizer step sizes.
    Dilate(Opts),
    /// Full pipeline including block-wise distillation.
    TrainBkd(Opts),
    /// Run the none / smoothquant / wd arms over `trials` seeds.
    CompareScalers(Opts),
    /// Calibrate and print the per-layer quantization error breakdown.
    Analyze(Opts),
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Args)]
struct Opts {
    /// Experiment config (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for data, init and training streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    bits_w: Option<u32>,
    #[arg(long)]
    bits_a: Option<u32>,
    /// none, smoothquant or wd.
    #[arg(long)]
    scaler: Option<Scaler>,
    /// SmoothQuant migration strength.
    #[arg(long)]
    alpha: Option<f32>,
    /// Distillation iterations per block.
    #[arg(long)]
    iters: Option<usize>,
}

impl Opts {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.bits_w {
            c.bits_w = v;
        }
        if let Some(v) = self.bits_a {
            c.bits_a = v;
        }
        if let Some(v) = self.scaler {
            c.scaler = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.iters {
            c.bkd.iters = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData(o) => {
            let c = o.config()?;
            let data = gen_data(&GenConfig {
                seed: c.seed,
                ..c.data
            })?;
            data.write(&o.out)?;
            println!("wrote {} timesteps to {}", data.steps.len(), o.out.display());
        }
        Cmd::Dilate(o) => {
            let r = run_until(&o.config()?, Until::Scale)?;
            r.write(&o.out)?;
            for (l, e) in r.labels.iter().zip(&r.effects) {
                println!(
                    "{l}: proportion s>1 {:.3}, dx ratio {:.4}, dw ratio {:.4}",
                    e.prop_s_gt_1,
                    e.dx_ratio,
                    e.mean_dw_ratio()
                );
            }
        }
        Cmd::Calibrate(o) => {
            let r = run_until(&o.config()?, Until::Calibrate)?;
            r.write(&o.out)?;
            print_blocks(&r, false);
        }
        Cmd::TrainBkd(o) => {
            let r = run_until(&o.config()?, Until::Train)?;
            r.write(&o.out)?;
            print_blocks(&r, true);
        }
        Cmd::Analyze(o) => {
            let r = run_until(&o.config()?, Until::Calibrate)?;
            r.write(&o.out)?;
            let table = analysis_table(&r.labels, &r.calib_errors);
            write_text(&o.out.join("analysis.txt"), &table)?;
            print!("{table}");
        }
        Cmd::CompareScalers(o) => {
            let c = o.config()?;
            let cmp = compare_scalers(&c)?;
            write_comparison(&o.out, &c, &cmp)?;
        }
    }
    Ok(())
}

fn print_blocks(r: &PipelineReport, trained: bool) {
    for b in &r.train.blocks {
        if trained {
            println!(
                "block {}: MSE {:.4e} calibrated, {:.4e} trained",
                b.block, b.mse_calibrated, b.mse_trained
            );
        } else {
            println!("block {}: MSE {:.4e} calibrated", b.block, b.mse_calibrated);
        }
    }
}

fn analysis_table(labels: &[String], reports: &[ErrorReport]) -> String {
    let mut s = format!(
        "{:<8} {:>12} {:>12} {:>8} {:>12} {:>12}\n",
        "layer", "E(X,W)", "bound", "E/bound", "round", "clip share"
    );
    for (l, r) in labels.iter().zip(reports) {
        let rhs = r.bound_rhs().unwrap_or(f64::NAN);
        s.push_str(&format!(
            "{l:<8} {:>12.4e} {:>12.4e} {:>8.4} {:>12.4e} {:>12.4}\n",
            r.total_error,
            rhs,
            r.total_error / rhs,
            r.round_error,
            r.clip_share
        ));
    }
    s
}

fn write_comparison(
    out: &Path,
    cfg: &ExperimentConfig,
    cmp: &qsim_core::harness::Comparison,
) -> Result<()> {
    fresh_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    write_text(&out.join("compare.csv"), &cmp.to_csv())?;
    let arms: serde_json::Map<String, serde_json::Value> = [Scaler::None, Scaler::SmoothQuant, Scaler::Wd]
        .into_iter()
        .map(|a| {
            let v = serde_json::json!({
                "error_ratio_vs_none": cmp.aggregate_ratio(a),
                "win_fraction_vs_none": cmp.win_fraction(a),
            });
            println!(
                "{a}: error / none {:.4}, below none in {:.1}% of cells",
                cmp.aggregate_ratio(a),
                100.0 * cmp.win_fraction(a)
            );
            (a.to_string(), v)
        })
        .collect();
    write_json(
        &out.join("compare_summary.json"),
        &serde_json::json!({ "trials": cfg.trials, "seed": cfg.seed, "arms": arms }),
    )
}
