use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use desloc::costmodel::{
    self, bandwidth_from_gbps, comm_reduction, t_total, CostModelParams, Method, DEFAULT_BYTES_PER_PARAM,
};
use desloc::sim::{run_streaming, SimConfig, SimOutput};

use crate::config::{ExperimentConfig, Format};
use crate::methods::MethodSpec;
use crate::output::{fmt_f64, RowWriter};

/// Output flags shared by `run` and `compare`; each overrides the config file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct OutputArgs {
    /// Write rows to this file instead of the path in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Record one row every N steps.
    #[arg(long)]
    pub record_every: Option<u64>,
    /// Worker threads used inside each step.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Replace the config's seed.
    #[arg(long, env = "DESLOC_SEED")]
    pub seed: Option<u64>,
}

impl OutputArgs {
    fn apply(&self, config: &mut ExperimentConfig) -> Result<()> {
        if let Some(out) = &self.out {
            config.output.path = Some(out.clone());
        }
        if let Some(format) = self.format {
            config.output.format = format;
        }
        if let Some(n) = self.record_every {
            config.output.record_every = n;
        }
        if let Some(n) = self.threads {
            config.threads = n;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()
    }
}

/// Where rows go, and where human-readable reports go so they never mix
/// with rows on standard output.
fn open_sinks(path: Option<&Path>) -> Result<(Box<dyn Write>, Box<dyn Write>)> {
    match path {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
            Ok((Box::new(BufWriter::new(file)), Box::new(io::stdout())))
        }
        None => Ok((Box::new(BufWriter::new(io::stdout())), Box::new(io::stderr()))),
    }
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".to_string())
}

#[derive(Clone, Debug, clap::Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    pub config: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    args.output.apply(&mut config)?;
    let (rows, mut report) = open_sinks(config.output.path.as_deref())?;
    let mut writer = RowWriter::new(rows, config.output.format, &[])?;
    let result = run_streaming(config.sim_config(), |row| {
        writer.write(&[], row).map_err(|e| desloc::Error::InvalidArgument(format!("{e:#}")))
    });
    writer.finish()?;
    match result {
        Ok(out) => {
            writeln!(report, "status: ok")?;
            write_summary(&mut report, &config.sim_config(), &out)?;
            Ok(())
        }
        Err(e @ desloc::Error::Divergence { .. }) => {
            writeln!(report, "status: diverged")?;
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn write_summary(report: &mut dyn Write, config: &SimConfig, out: &SimOutput) -> Result<()> {
    writeln!(report, "steps: {}", config.steps)?;
    writeln!(report, "workers: {}", out.workers.len())?;
    writeln!(report, "final dist_to_opt: {}", opt_cell(out.final_dist_to_opt()))?;
    writeln!(report, "cum_payload_units: {}", out.cum_payload_units)?;
    writeln!(
        report,
        "drift checks: {} ({} violations)",
        out.drift.checks, out.drift.violations
    )?;
    Ok(())
}

#[derive(Clone, Debug, clap::Args)]
pub struct CompareArgs {
    /// Base experiment config (JSON); its sync block is replaced per method.
    pub config: PathBuf,
    /// Methods to run, e.g. ddp 'local_adam(192)' 'des_loc(192,192,692)'
    /// 'favg_plus_opt(192)' 'favg_minus_opt(192)'.
    #[arg(long, num_args = 1.., required = true)]
    pub methods: Vec<MethodSpec>,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// One method's outcome in a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranked {
    pub method: String,
    pub final_dist: Option<f64>,
    pub cum_payload_units: u64,
    pub diverged: bool,
}

/// Runs every method on the same base config and returns them ordered from
/// closest to farthest final distance; diverged runs come last.
pub fn compare_into<W: Write>(
    base: &ExperimentConfig,
    methods: &[MethodSpec],
    writer: &mut RowWriter<W>,
) -> Result<Vec<Ranked>> {
    let state_count = base.optimizer.kind.state_count();
    let mut ranked = Vec::with_capacity(methods.len());
    for method in methods {
        let mut config = base.sim_config();
        config.sync = method.policies(state_count)?;
        config.validate()?;
        let name = method.to_string();
        let result = run_streaming(config, |row| {
            writer
                .write(&[name.as_str()], row)
                .map_err(|e| desloc::Error::InvalidArgument(format!("{e:#}")))
        });
        ranked.push(match result {
            Ok(out) => Ranked {
                method: name,
                final_dist: out.final_dist_to_opt(),
                cum_payload_units: out.cum_payload_units,
                diverged: false,
            },
            Err(desloc::Error::Divergence { .. }) => Ranked {
                method: name,
                final_dist: None,
                cum_payload_units: 0,
                diverged: true,
            },
            Err(e) => return Err(e.into()),
        });
    }
    ranked.sort_by(|a, b| {
        let key = |r: &Ranked| (r.diverged, r.final_dist.unwrap_or(f64::INFINITY));
        let (da, xa) = key(a);
        let (db, xb) = key(b);
        da.cmp(&db).then(xa.total_cmp(&xb))
    });
    Ok(ranked)
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    args.output.apply(&mut config)?;
    let (rows, mut report) = open_sinks(config.output.path.as_deref())?;
    let mut writer = RowWriter::new(rows, config.output.format, &["method"])?;
    let ranked = compare_into(&config, &args.methods, &mut writer);
    writer.finish()?;
    let ranked = ranked?;

    writeln!(report, "{:<5} {:<28} {:>16} {:>12}", "rank", "method", "final_dist", "payload")?;
    for (i, r) in ranked.iter().enumerate() {
        let dist = if r.diverged { "diverged".to_string() } else { opt_cell(r.final_dist) };
        writeln!(report, "{:<5} {:<28} {:>16} {:>12}", i + 1, r.method, dist, r.cum_payload_units)?;
    }
    let diverged: Vec<&str> = ranked.iter().filter(|r| r.diverged).map(|r| r.method.as_str()).collect();
    if !diverged.is_empty() {
        bail!("diverged: {}", diverged.join(", "));
    }
    Ok(())
}

#[derive(Clone, Debug, clap::Args)]
pub struct CostArgs {
    /// Experiment config whose `cost_model` block provides the parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model parameter count.
    #[arg(long)]
    pub d: Option<f64>,
    /// Total training tokens.
    #[arg(long)]
    pub tokens: Option<f64>,
    #[arg(long)]
    pub workers: Option<f64>,
    /// Peak FLOP/s per worker.
    #[arg(long)]
    pub peak_flops: Option<f64>,
    #[arg(long)]
    pub mfu: Option<f64>,
    /// Link bandwidth in parameters per second.
    #[arg(long, conflicts_with = "bandwidth_gbps")]
    pub bandwidth: Option<f64>,
    /// Link bandwidth in Gbit/s, converted with --bytes-per-param.
    #[arg(long)]
    pub bandwidth_gbps: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BYTES_PER_PARAM)]
    pub bytes_per_param: f64,
    /// Per-collective latency in seconds.
    #[arg(long)]
    pub latency: Option<f64>,
    #[arg(long)]
    pub steps: Option<f64>,
    /// Fraction of communication time not overlapped with compute.
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Period for the FedAvg and Local Adam rows.
    #[arg(long, default_value_t = 256)]
    pub k: u64,
    /// DES-LOC periods for parameters, first and second moment.
    #[arg(long, value_delimiter = ',', default_value = "256,768,1536")]
    pub des_loc: Vec<u64>,
    /// Emit a CSV bandwidth sweep instead of the single-point table.
    #[arg(long)]
    pub sweep_bandwidth: bool,
    #[arg(long, default_value_t = 0.1)]
    pub sweep_min_gbps: f64,
    #[arg(long, default_value_t = 1e5)]
    pub sweep_max_gbps: f64,
    #[arg(long, default_value_t = 4)]
    pub points_per_decade: u32,
    /// Write the sweep CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CostArgs {
    pub fn params(&self) -> Result<CostModelParams> {
        let mut p = match &self.config {
            Some(path) => ExperimentConfig::load(path)?
                .cost_model
                .with_context(|| format!("{} has no cost_model block", path.display()))?,
            None => CostModelParams::llm_1_7b(),
        };
        let overrides = [
            (&mut p.d, self.d),
            (&mut p.tokens, self.tokens),
            (&mut p.workers, self.workers),
            (&mut p.peak_flops, self.peak_flops),
            (&mut p.mfu, self.mfu),
            (&mut p.bandwidth, self.bandwidth),
            (&mut p.latency, self.latency),
            (&mut p.steps, self.steps),
            (&mut p.overlap, self.overlap),
        ];
        for (field, value) in overrides {
            if let Some(v) = value {
                *field = v;
            }
        }
        if let Some(gbps) = self.bandwidth_gbps {
            p.bandwidth = bandwidth_from_gbps(gbps, self.bytes_per_param);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        let [kx, ku, kv] = self.des_loc[..] else {
            bail!("--des-loc takes exactly three periods, got {:?}", self.des_loc);
        };
        Ok(vec![
            Method::Ddp,
            Method::FedAvg(self.k),
            Method::LocalAdam(self.k),
            Method::DesLoc(kx, ku, kv),
        ])
    }
}

/// One line of the cost table.
#[derive(Clone, Debug, PartialEq)]
pub struct CostRow {
    pub method: String,
    pub events: f64,
    pub t_compute: f64,
    pub t_comms: f64,
    pub t_total: f64,
    pub utilization: f64,
    pub reduction_vs_ddp: f64,
}

pub fn cost_rows(p: &CostModelParams, methods: &[Method]) -> Result<Vec<CostRow>> {
    methods
        .iter()
        .map(|&m| {
            let b = t_total(m, p)?;
            Ok(CostRow {
                method: m.name(),
                events: b.events,
                t_compute: b.compute,
                t_comms: b.comms,
                t_total: b.total,
                utilization: costmodel::utilization(m, p)?,
                reduction_vs_ddp: comm_reduction(m, Method::Ddp, p)?,
            })
        })
        .collect()
}

pub fn write_cost_table(out: &mut dyn Write, rows: &[CostRow]) -> Result<()> {
    writeln!(
        out,
        "{:<24} {:>12} {:>14} {:>14} {:>14} {:>11} {:>16}",
        "method", "events", "t_compute_s", "t_comms_s", "t_total_s", "utilization", "reduction_vs_ddp"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:<24} {:>12.2} {:>14.2} {:>14.2} {:>14.2} {:>11.4} {:>16.2}",
            r.method, r.events, r.t_compute, r.t_comms, r.t_total, r.utilization, r.reduction_vs_ddp
        )?;
    }
    Ok(())
}

/// Log-spaced bandwidths in Gbit/s covering `[min, max]`.
pub fn sweep_points(min: f64, max: f64, per_decade: u32) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && per_decade > 0) {
        bail!("sweep needs 0 < min <= max and at least one point per decade");
    }
    let decades = (max / min).log10();
    let n = (decades * per_decade as f64).round() as u32;
    Ok((0..=n).map(|i| min * 10f64.powf(i as f64 / per_decade as f64)).collect())
}

pub fn write_sweep(out: &mut dyn Write, args: &CostArgs, base: &CostModelParams, methods: &[Method]) -> Result<()> {
    writeln!(
        out,
        "bandwidth_gbps,bandwidth_params_per_s,method,events,t_compute,t_comms,t_total,utilization,reduction_vs_ddp"
    )?;
    for gbps in sweep_points(args.sweep_min_gbps, args.sweep_max_gbps, args.points_per_decade)? {
        let p = CostModelParams {
            bandwidth: bandwidth_from_gbps(gbps, args.bytes_per_param),
            ..*base
        };
        for r in cost_rows(&p, methods)? {
            let cells = [
                fmt_f64(gbps),
                fmt_f64(p.bandwidth),
                r.method.replace(',', ";"),
                fmt_f64(r.events),
                fmt_f64(r.t_compute),
                fmt_f64(r.t_comms),
                fmt_f64(r.t_total),
                fmt_f64(r.utilization),
                fmt_f64(r.reduction_vs_ddp),
            ];
            writeln!(out, "{}", cells.join(","))?;
        }
    }
    Ok(())
}

pub fn cost(args: &CostArgs) -> Result<()> {
    let params = args.params()?;
    let methods = args.methods()?;
    if args.sweep_bandwidth {
        let (mut out, _) = open_sinks(args.out.as_deref())?;
        write_sweep(&mut out, args, &params, &methods)?;
        out.flush()?;
        if let Some(path) = &args.out {
            println!("wrote bandwidth sweep to {}", path.display());
        }
        return Ok(());
    }
    let rows = cost_rows(&params, &methods)?;
    let mut stdout = io::stdout().lock();
    write_cost_table(&mut stdout, &rows)?;
    Ok(())
}
