//! Command-line front end. Every command prints a deterministic report to
//! stdout; failures print `{"error": {...}}` to stderr with a distinct exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::checks::{gcn_equivalence, gradcheck_suite_with_step, lemma_suite, CheckLine};
use crate::cost::{analytic_cost, compare_reports};
use crate::data::{write_csv, CsvLayout, Split};
use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::model::{load_checkpoint, save_checkpoint};
use crate::prune::{ablation_grid, prune_config, prune_weights, PruneSpec};
use crate::trainer::{evaluate, predict_split, run_ablation, run_comparison, train};

#[derive(Debug, Parser)]
#[command(name = "amtsfm", version, about = "Attention forecasting models and attention-to-MLP pruning")]
pub struct Cli {
    /// Emit JSON instead of a table where both exist.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Stf,
    Ltsf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an experiment's dataset as CSV.
    Synth {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one seed; writes model.ckpt, history.csv and report.json.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        /// Defaults to the first seed of the experiment.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Write `window,step,node,feature,pred,target,observed` rows.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Replace attention with MLP blocks. With `--checkpoint`, carries the
    /// surviving weights over; otherwise prints the pruned experiment.
    Prune {
        #[command(flatten)]
        exp: ExpArgs,
        #[command(flatten)]
        scope: ScopeArgs,
        #[arg(long, requires = "out")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic parameter and FLOP counts; with a scope, original vs pruned.
    Cost {
        #[command(flatten)]
        exp: ExpArgs,
        #[command(flatten)]
        scope: ScopeArgs,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Train original and pruned models over every seed and tabulate.
    Compare {
        #[command(flatten)]
        exp: ExpArgs,
        #[command(flatten)]
        scope: ScopeArgs,
    },
    /// Train the ablation variants over every seed.
    Ablate {
        #[command(flatten)]
        exp: ExpArgs,
        /// Comma-separated variant names; all when absent.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Finite-difference check of every op, block and model composite.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Central-difference step.
        #[arg(long, default_value_t = crate::gradcheck::STEP)]
        step: f64,
    },
    /// Uniform-attention identities and the graph-convolution equivalence.
    LemmaCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

#[derive(Debug, clap::Args)]
pub struct ExpArgs {
    /// Experiment TOML.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in desk-scale experiment.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

impl ExpArgs {
    fn load(&self) -> Result<Experiment> {
        match (&self.config, self.preset) {
            (Some(p), _) => Experiment::load(p),
            (None, Some(Preset::Ltsf)) => Ok(Experiment::desk_ltsf()),
            (None, _) => Ok(Experiment::desk_stf()),
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct ScopeArgs {
    /// `all`, `encoder`, or `+`-joined `temporal`, `spatial`, `decoder`.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub no_ffn: bool,
    #[arg(long)]
    pub no_residual: bool,
    #[arg(long)]
    pub no_layernorm: bool,
}

impl ScopeArgs {
    fn spec(&self, exp: &Experiment) -> Result<Option<PruneSpec>> {
        let base = match &self.scope {
            Some(s) => PruneSpec::parse(s)?,
            None if self.no_ffn || self.no_residual || self.no_layernorm => exp.prune_spec(),
            None => return Ok(None),
        };
        Ok(Some(PruneSpec {
            use_feedforward: base.use_feedforward && !self.no_ffn,
            use_residual: base.use_residual && !self.no_residual,
            use_layernorm: base.use_layernorm && !self.no_layernorm,
            ..base
        }))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// What a command prints: a JSON document and, optionally, a table.
pub struct Output {
    pub json: Value,
    pub table: Option<String>,
    /// False when a self-check failed.
    pub ok: bool,
}

impl Output {
    fn json(json: Value) -> Self {
        Self { json, table: None, ok: true }
    }
}

fn checks_output(lines: Vec<CheckLine>) -> Output {
    let ok = lines.iter().all(CheckLine::passed);
    let table = lines.iter().map(|l| format!("{l}\n")).collect();
    Output { json: json!({ "passed": ok, "checks": lines }), table: Some(table), ok }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<Output> {
    match &cli.command {
        Command::Synth { exp, out } => {
            let e = exp.load()?;
            let ds = e.data.load()?;
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf, &CsvLayout::default())?;
            write_file(out, &buf)?;
            Ok(Output::json(json!({
                "config_hash": e.hash(),
                "steps": ds.steps(),
                "nodes": ds.nodes(),
                "sha256": hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&buf)),
                "path": out,
            })))
        }
        Command::Train { exp, seed, out } => {
            let e = exp.load()?;
            let seed = seed.unwrap_or(e.train.seeds[0]);
            let data = e.prepare()?;
            let model = crate::model::AmtsfmModel::new(e.model.clone(), seed)?;
            let outcome = train(model, &data, &e.train, seed)?;
            let report = evaluate(&outcome.model, &data, Split::Test, &e.train)?;
            fs::create_dir_all(out)?;
            save_checkpoint(&outcome.model, out.join("model.ckpt"))?;
            write_file(&out.join("history.csv"), outcome.history_csv().as_bytes())?;
            let json = json!({
                "config_hash": e.hash(),
                "seed": seed,
                "best_epoch": outcome.best_epoch,
                "epochs": outcome.history.len(),
                "test": report,
            });
            write_file(&out.join("report.json"), serde_json::to_string_pretty(&json).expect("json").as_bytes())?;
            Ok(Output::json(json))
        }
        Command::Eval { exp, checkpoint, split, dump } => {
            let e = exp.load()?;
            let model = load_checkpoint(checkpoint)?;
            let data = e.prepare()?;
            let split = Split::from(*split);
            let preds = predict_split(&model, &data, split, &e.train)?;
            if let Some(path) = dump {
                let s = preds.pred.shape().to_vec();
                let mut text = String::from("window,step,node,feature,pred,target,observed\n");
                for (i, ((p, t), m)) in preds.pred.data().iter().zip(preds.target.data()).zip(&preds.mask).enumerate() {
                    let (f, r) = (i % s[3], i / s[3]);
                    let (n, r) = (r % s[2], r / s[2]);
                    text.push_str(&format!("{},{},{n},{f},{p},{t},{}\n", r / s[1], r % s[1], u8::from(*m)));
                }
                write_file(path, text.as_bytes())?;
            }
            let report = crate::trainer::metrics_of(&preds, split)?;
            Ok(Output::json(json!({
                "config_hash": e.hash(),
                "model_hash": model.config().hash(),
                "report": report,
            })))
        }
        Command::Prune { exp, scope, checkpoint, out } => {
            let e = exp.load()?;
            let spec = scope.spec(&e)?.unwrap_or_else(|| e.prune_spec());
            if let Some(ck) = checkpoint {
                let model = load_checkpoint(ck)?;
                let (pruned, warnings) = prune_weights(&model, &spec)?;
                let out = out.as_ref().expect("clap enforces --out");
                save_checkpoint(&pruned, out)?;
                let cmp = compare_reports(analytic_cost(model.config(), 1), analytic_cost(pruned.config(), 1));
                return Ok(Output::json(json!({
                    "model_hash": pruned.config().hash(),
                    "params": [model.param_count(), pruned.param_count()],
                    "flops_drop_pct": cmp.flops_drop_pct,
                    "params_drop_pct": cmp.params_drop_pct,
                    "warnings": warnings,
                })));
            }
            let pruned = prune_config(&e.model, &spec)?;
            let new = Experiment { model: pruned.config, prune: None, ..e };
            let text = new.to_toml();
            if let Some(out) = out {
                write_file(out, text.as_bytes())?;
            }
            Ok(Output {
                json: json!({ "config_hash": new.hash(), "warnings": pruned.warnings, "experiment": text }),
                table: Some(text),
                ok: true,
            })
        }
        Command::Cost { exp, scope, batch } => {
            let e = exp.load()?;
            let report = analytic_cost(&e.model, *batch);
            match scope.spec(&e)? {
                None => Ok(Output {
                    json: json!({ "config_hash": e.hash(), "cost": report }),
                    table: Some(report.to_table()),
                    ok: true,
                }),
                Some(spec) => {
                    let pruned = prune_config(&e.model, &spec)?;
                    let cmp = compare_reports(report, analytic_cost(&pruned.config, *batch));
                    Ok(Output {
                        json: json!({ "config_hash": e.hash(), "comparison": serde_json::from_str::<Value>(&cmp.to_json()).expect("json") }),
                        table: Some(cmp.to_table()),
                        ok: true,
                    })
                }
            }
        }
        Command::Compare { exp, scope } => {
            let e = exp.load()?;
            let spec = scope.spec(&e)?.unwrap_or_else(|| e.prune_spec());
            let pruned = prune_config(&e.model, &spec)?.config;
            let data = e.prepare()?;
            let report = run_comparison(&e.model, &pruned, &data, &e.train)?;
            Ok(Output {
                json: json!({ "config_hash": e.hash(), "seeds": e.train.seeds, "comparison": report }),
                table: Some(report.to_table()),
                ok: true,
            })
        }
        Command::Ablate { exp, variants } => {
            let e = exp.load()?;
            let mut grid = ablation_grid(&e.model)?;
            if !variants.is_empty() {
                if let Some(bad) = variants.iter().find(|v| !grid.iter().any(|(n, _)| n == *v)) {
                    return Err(Error::Config(format!("unknown ablation variant `{bad}`")));
                }
                grid.retain(|(n, _)| n == "Origin" || variants.contains(n));
            }
            let data = e.prepare()?;
            let report = run_ablation(&grid, &data, &e.train)?;
            Ok(Output {
                json: json!({ "config_hash": e.hash(), "seeds": e.train.seeds, "ablation": report }),
                table: Some(report.to_table()),
                ok: true,
            })
        }
        Command::Gradcheck { cases, seed, step } => Ok(checks_output(gradcheck_suite_with_step(*cases, *seed, *step)?)),
        Command::LemmaCheck { seed, instances } => {
            let mut lines = lemma_suite(*seed)?;
            lines.push(gcn_equivalence(*instances, *seed)?);
            Ok(checks_output(lines))
        }
    }
}

/// Exit code of an error class.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::Param(_) | Error::Shape { .. } => 2,
        Error::Data(_) | Error::UndefinedMetric(_) => 3,
        Error::Io(_) => 4,
        Error::Diverged { .. } | Error::NonFinite(_) => 5,
        Error::Checkpoint(_) => 6,
        _ => 1,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e.root() {
        Error::Shape { .. } => "shape",
        Error::Param(_) => "param",
        Error::NonFinite(_) => "non_finite",
        Error::DegenerateGraph(_) => "degenerate_graph",
        Error::Tape(_) => "tape",
        Error::Config(_) => "config",
        Error::Data(_) => "data",
        Error::UndefinedMetric(_) => "undefined_metric",
        Error::Diverged { .. } => "diverged",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io(_) => "io",
        Error::Stage { .. } => "stage",
    }
}

/// Exit code when a self-check command ran but some check failed.
pub const CHECK_FAILED: i32 = 7;

/// Parses `args`, runs the command and writes to the given streams; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            let text = match (&out.table, cli.json) {
                (Some(t), false) => t.clone(),
                _ => serde_json::to_string_pretty(&out.json).expect("json") + "\n",
            };
            let _ = stdout.write_all(text.as_bytes());
            if out.ok {
                0
            } else {
                CHECK_FAILED
            }
        }
        Err(e) => {
            let body = json!({ "error": { "kind": error_kind(&e), "message": e.to_string() } });
            let _ = writeln!(stderr, "{body}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("amtsfm").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn cost_table_and_comparison() {
        let (code, out, _) = run_str(&["cost", "--preset", "stf"]);
        assert_eq!(code, 0);
        assert!(out.contains("embedding") && out.contains("total"), "{out}");
        let (code, out, _) = run_str(&["--json", "cost", "--scope", "all"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!(v["comparison"]["flops_drop_pct"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn errors_are_json_with_distinct_codes() {
        let (code, _, err) = run_str(&["cost", "--config", "/nonexistent/exp.toml"]);
        assert_eq!(code, 4);
        let v: Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(v["error"]["kind"], "io");
        let (code, _, err) = run_str(&["cost", "--scope", "sideways"]);
        assert_eq!(code, 2, "{err}");
        let (code, _, _) = run_str(&["no-such-command"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn prune_prints_a_loadable_experiment() {
        let (code, out, _) = run_str(&["prune", "--scope", "temporal"]);
        assert_eq!(code, 0);
        let exp = Experiment::from_toml(&out).unwrap();
        assert!(exp.model.encoder_temporal.iter().all(|l| !l.kind.is_attention()));
        assert!(exp.model.encoder_spatial.iter().all(|l| l.kind.is_attention()));
    }

    #[test]
    fn lemma_check_passes() {
        let (code, out, _) = run_str(&["lemma-check", "--instances", "20"]);
        assert_eq!(code, 0, "{out}");
        assert_eq!(out.lines().count(), 4);
        assert!(out.lines().all(|l| l.starts_with("PASS")));
    }
}
