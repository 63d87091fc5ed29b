mod args;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use args::{BenchCommon, BenchKind, Cli, Command, EstimatorArgs, FormatArg, IoArgs, MethodArg, ScopeArg};
use tvvar::bench::{self, TimingOutcome};
use tvvar::config::{OutputFormat, RunConfig};
use tvvar::estimator::{EstimatorConfig, Method};
use tvvar::io::{self as tio, MatrixPayload, OutputRecord, RecordKind, RecordWriter};
use tvvar::model::{make_cosine_coeffs, rng_for, simulate_tvvar, Jump, SimSpec};
use tvvar::network::{Event, EventSpec, QuantileScope};
use tvvar::pipeline::{self, ConnectivitySettings};
use tvvar::spectral::{BandSpec, Measure};
use tvvar::{Error, ErrorKind};

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // downstream closed the pipe (e.g. `| head`)
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Input => EXIT_INPUT,
                ErrorKind::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}

fn run(cli: Cli) -> tvvar::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate(a) => {
            apply_io(&mut cfg, &a.io);
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if a.truth.is_some() {
                cfg.io.truth = a.truth;
            }
            let mut sim = cfg.sim.clone().unwrap_or_else(|| SimSpec::cosine(3, 2, 2000, cfg.seed));
            if let Some(p) = a.channels {
                sim = SimSpec::cosine(p, sim.k, sim.t_total, sim.seed);
            }
            if let Some(k) = a.order {
                sim.k = k;
            }
            if let Some(n) = a.samples {
                sim.t_total = n;
            }
            if a.seed.is_some() {
                sim.seed = cfg.seed;
            }
            simulate(&cfg, &sim)
        }
        Command::Estimate(a) => {
            apply_io(&mut cfg, &a.io);
            apply_estimator(&mut cfg, &a.est);
            cfg.validate()?;
            let input = open_input(cfg.io.input.as_deref())?;
            let out = open_output(cfg.io.output.as_deref())?;
            let n = pipeline::estimate(input, out, cfg.model.k, &cfg.estimator())?;
            log::info!("emitted {n} records");
            Ok(())
        }
        Command::Connectivity(a) => {
            apply_io(&mut cfg, &a.io);
            apply_estimator(&mut cfg, &a.est);
            if !a.bands.is_empty() {
                cfg.freq.bands = a.bands.iter().map(|b| b.parse()).collect::<tvvar::Result<Vec<BandSpec>>>()?;
            }
            if let Some(fs) = a.omega_s {
                cfg.freq.omega_s = fs;
            }
            if let Some(sp) = a.spacing {
                cfg.freq.spacing = sp;
            }
            cfg.validate()?;
            let settings = ConnectivitySettings {
                bands: cfg.freq.bands.clone(),
                freq: cfg.freq.grid()?,
                scale: cfg.freq.partial_coherence,
                sigma_e: None,
            };
            let input = open_input(cfg.io.input.as_deref())?;
            let out = open_output(cfg.io.output.as_deref())?;
            pipeline::connectivity(input, out, cfg.model.k, &cfg.estimator(), &settings)?;
            Ok(())
        }
        Command::Network(a) => {
            apply_io(&mut cfg, &a.io);
            if !a.events.is_empty() {
                let events = a.events.iter().map(|e| parse_event(e)).collect::<tvvar::Result<Vec<_>>>()?;
                let window = cfg.events.as_ref().map(|e| e.window).unwrap_or(tvvar::network::DEFAULT_HALF_WIDTH);
                cfg.events = Some(EventSpec::new(events, window)?);
            }
            if let (Some(w), Some(ev)) = (a.window, cfg.events.as_mut()) {
                ev.window = w;
            }
            if !a.quantile.is_empty() {
                cfg.network.quantiles = a.quantile.clone();
            }
            if !a.measures.is_empty() {
                cfg.network.measures = a.measures.iter().map(|m| m.parse()).collect::<tvvar::Result<Vec<Measure>>>()?;
            }
            if let Some(s) = a.scope {
                cfg.network.scope = match s {
                    ScopeArg::Epoch => QuantileScope::Epoch,
                    ScopeArg::PreEvent => QuantileScope::PreEvent,
                };
            }
            cfg.validate()?;
            let events = cfg
                .events
                .clone()
                .ok_or_else(|| Error::Config("network needs events (--events label@t or [events])".into()))?;
            let input = BufReader::new(open_input(cfg.io.input.as_deref())?);
            let records = tio::read_records(input)?;
            let deltas = pipeline::network(&records, &events, &cfg.network.measures, &cfg.network.quantiles, cfg.network.scope)?;
            let mut w = RecordWriter::new(open_output(cfg.io.output.as_deref())?);
            for d in &deltas {
                w.write(&pipeline::network_record(d)?)?;
            }
            Ok(())
        }
        Command::Bench(b) => bench_cmd(cfg, b.kind),
    }
}

fn apply_io(cfg: &mut RunConfig, io: &IoArgs) {
    if io.input.is_some() {
        cfg.io.input = io.input.clone();
    }
    if io.output.is_some() {
        cfg.io.output = io.output.clone();
    }
}

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::Sope => Method::Sope,
        MethodArg::Gsope => Method::Gsope,
        MethodArg::Kf => Method::Kf,
    }
}

fn apply_estimator(cfg: &mut RunConfig, a: &EstimatorArgs) {
    if let Some(m) = a.method {
        cfg.method = method_of(m);
    }
    if let Some(l) = a.lambda {
        cfg.penalty.lambda = l;
    }
    if let Some(b) = a.beta {
        cfg.penalty.beta = b;
    }
    if let Some(q) = a.q_sigma {
        cfg.kf.q_sigma = q;
    }
    if let Some(k) = a.order {
        cfg.model.k = k;
    }
    if let Some(mib) = a.kf_budget_mib {
        cfg.kf.memory_budget_mib = mib;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
}

fn parse_event(s: &str) -> tvvar::Result<Event> {
    let (label, t) = s
        .split_once('@')
        .ok_or_else(|| Error::Config(format!("event '{s}' is not of the form label@t")))?;
    let time = t
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("event '{s}': time is not an integer")))?;
    Ok(Event { label: label.trim().to_owned(), time })
}

fn is_std(path: Option<&Path>) -> bool {
    path.is_none_or(|p| p.as_os_str() == "-")
}

fn open_input(path: Option<&Path>) -> tvvar::Result<Box<dyn Read>> {
    if is_std(path) {
        return Ok(Box::new(io::stdin().lock()));
    }
    let path = path.expect("checked above");
    let f = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_output(path: Option<&Path>) -> tvvar::Result<Box<dyn Write>> {
    if is_std(path) {
        return Ok(Box::new(io::stdout().lock()));
    }
    let path = path.expect("checked above");
    let f = File::create(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufWriter::new(f)))
}

fn simulate(cfg: &RunConfig, sim: &SimSpec) -> tvvar::Result<()> {
    sim.validate()?;
    let path = make_cosine_coeffs(sim, &mut rng_for(sim.seed, 0))?;
    let data = simulate_tvvar(sim, &path, &mut rng_for(sim.seed, 1))?;
    let out = open_output(cfg.io.output.as_deref())?;
    tio::write_csv(out, &tio::default_channel_names(sim.p), &data)?;
    if let Some(truth) = &cfg.io.truth {
        let mut w = RecordWriter::new(BufWriter::new(
            File::create(truth).map_err(|e| Error::Config(format!("{}: {e}", truth.display())))?,
        ));
        for (t, phi) in path.iter().enumerate() {
            let rec = OutputRecord::new(RecordKind::Truth)
                .at(t)
                .matrix("phi", phi.entries())
                .meta("k", sim.k)?;
            w.write(&rec)?;
        }
    }
    Ok(())
}

fn apply_bench_common(cfg: &mut RunConfig, c: &BenchCommon) {
    apply_io(cfg, &c.io);
    apply_estimator(cfg, &c.est);
    if let Some(f) = c.format {
        cfg.io.format = match f {
            FormatArg::Jsonl => OutputFormat::Jsonl,
            FormatArg::Binary => OutputFormat::Binary,
        };
    }
    if let Some(r) = c.replicates {
        cfg.bench.replicates = r;
    }
}

/// Records go to the output as JSON lines, or as one binary dump of
/// `matrices`; aligned tables go to stderr.
fn emit(cfg: &RunConfig, records: &[OutputRecord], matrices: Vec<MatrixPayload>, table: &str) -> tvvar::Result<()> {
    eprint!("{table}");
    let out = open_output(cfg.io.output.as_deref())?;
    match cfg.io.format {
        OutputFormat::Jsonl => {
            let mut w = RecordWriter::new(out);
            for r in records {
                w.write(r)?;
            }
        }
        OutputFormat::Binary => tio::write_matrix_dump(out, &matrices)?,
    }
    Ok(())
}

fn bench_cmd(mut cfg: RunConfig, kind: BenchKind) -> tvvar::Result<()> {
    match kind {
        BenchKind::Time { common, ps, ks, iterations, methods } => {
            apply_bench_common(&mut cfg, &common);
            if !ps.is_empty() {
                cfg.bench.ps = ps;
            }
            if !ks.is_empty() {
                cfg.bench.ks = ks;
            }
            if let Some(n) = iterations {
                cfg.bench.iterations = n;
            }
            if !methods.is_empty() {
                cfg.bench.methods = methods.into_iter().map(method_of).collect();
            }
            cfg.validate()?;
            let base = cfg.estimator();
            let configs: Vec<EstimatorConfig> =
                cfg.bench.methods.iter().map(|&m| EstimatorConfig { method: m, ..base }).collect();
            let outcomes = bench::timing_grid(&configs, &cfg.bench.ps, &cfg.bench.ks, cfg.bench.iterations, cfg.seed)?;
            let mut records = Vec::new();
            for o in &outcomes {
                let mut rec = OutputRecord::new(RecordKind::Timing).meta("timing", o)?;
                if matches!(o, TimingOutcome::Refused { .. }) {
                    rec = rec.flag("memory_budget_refusal");
                }
                records.push(rec);
            }
            let mut table = String::new();
            let mut mats = Vec::new();
            for &m in &cfg.bench.methods {
                table += &bench::timing_table(&outcomes, m);
                let grid = nalgebra::DMatrix::from_fn(cfg.bench.ks.len(), cfg.bench.ps.len(), |i, j| {
                    outcomes
                        .iter()
                        .find(|o| o.cell() == (m, cfg.bench.ps[j], cfg.bench.ks[i]))
                        .and_then(|o| o.row())
                        .map_or(f64::NAN, |r| r.mean_ms)
                });
                mats.push(MatrixPayload::from_matrix(format!("{m}_mean_ms"), &grid));
            }
            emit(&cfg, &records, mats, &table)
        }
        BenchKind::Mse { common, lambdas, q_sigmas } => {
            apply_bench_common(&mut cfg, &common);
            if !lambdas.is_empty() {
                cfg.bench.lambdas = lambdas;
            }
            if !q_sigmas.is_empty() {
                cfg.bench.q_sigmas = q_sigmas;
            }
            cfg.validate()?;
            let sim = cfg.sim.clone().unwrap_or_else(|| SimSpec::cosine(3, 2, 2000, cfg.seed));
            let base = cfg.estimator();
            let mut configs = Vec::new();
            for &l in &cfg.bench.lambdas {
                let mut c = EstimatorConfig::sope(tvvar::sope::PenaltySpec::new(l, cfg.penalty.beta)?);
                c.kf_memory_budget = base.kf_memory_budget;
                configs.push(c);
            }
            for &q in &cfg.bench.q_sigmas {
                configs.push(EstimatorConfig::kf(q).with_budget(base.kf_memory_budget));
            }
            let rows = bench::mse_sweep(&configs, &sim, cfg.bench.replicates, cfg.bench.design)?;
            let records = rows
                .iter()
                .map(|r| OutputRecord::new(RecordKind::Mse).meta("mse", r))
                .collect::<tvvar::Result<Vec<_>>>()?;
            let mats = [Method::Sope, Method::Kf]
                .iter()
                .map(|&m| {
                    let sel: Vec<_> = rows.iter().filter(|r| r.method == m).collect();
                    let grid = nalgebra::DMatrix::from_fn(sel.len(), 2, |i, j| {
                        if j == 0 {
                            sel[i].hyper.value()
                        } else {
                            sel[i].per_param_mse
                        }
                    });
                    MatrixPayload::from_matrix(format!("{m}_mse"), &grid)
                })
                .collect();
            emit(&cfg, &records, mats, &bench::mse_table(&rows))
        }
        BenchKind::Transfer { common } => {
            apply_bench_common(&mut cfg, &common);
            cfg.validate()?;
            let sim = cfg.sim.clone().unwrap_or_else(|| SimSpec::cosine(6, 5, 2000, cfg.seed));
            let base = cfg.estimator();
            let configs = [EstimatorConfig { method: Method::Sope, ..base }, EstimatorConfig { method: Method::Kf, ..base }];
            let entries: Vec<(usize, usize)> = cfg.bench.entries.iter().map(|e| (e[0], e[1])).collect();
            let report = bench::transfer_study(&configs, &sim, &entries, cfg.bench.replicates)?;
            let mut records = Vec::new();
            let mut mats = Vec::new();
            let mut table = String::from("method  entry  coverage\n");
            for env in &report.envelopes {
                records.push(
                    OutputRecord::new(RecordKind::Transfer)
                        .meta("sim", &report.sim)?
                        .meta("replicates", report.replicates)?
                        .meta("coverage", env.coverage())?
                        .meta("envelope", env)?,
                );
                let n = env.t.len();
                let m = nalgebra::DMatrix::from_fn(5, n, |i, j| match i {
                    0 => env.t[j] as f64,
                    1 => env.lo[j],
                    2 => env.median[j],
                    3 => env.hi[j],
                    _ => env.truth[j],
                });
                mats.push(MatrixPayload::from_matrix(format!("{}_{}_{}", env.method, env.row, env.col), &m));
                table += &format!("{:<6}  ({},{})  {:.3}\n", env.method.name(), env.row, env.col, env.coverage());
            }
            emit(&cfg, &records, mats, &table)
        }
        BenchKind::Jump { common, lambdas } => {
            apply_bench_common(&mut cfg, &common);
            if !lambdas.is_empty() {
                cfg.bench.lambdas = lambdas;
            }
            cfg.validate()?;
            let sim = cfg.sim.clone().unwrap_or_else(|| {
                let mut s = SimSpec::cosine(3, 2, 2000, cfg.seed);
                s.discontinuities.push(Jump { time: 1000, row: 0, col: 0, delta: 0.3 });
                s
            });
            let configs = cfg
                .bench
                .lambdas
                .iter()
                .map(|&l| tvvar::sope::PenaltySpec::new(l, cfg.penalty.beta).map(EstimatorConfig::sope))
                .collect::<tvvar::Result<Vec<_>>>()?;
            let rows = bench::jump_study(&configs, &sim, cfg.bench.jump_window, cfg.bench.replicates)?;
            let mut table = String::from("lambda        before      after\n");
            let mut records = Vec::new();
            for r in &rows {
                table += &format!("{:<12e}  {:.6}  {:.6}\n", r.hyper.value(), r.before_mse, r.after_mse);
                records.push(OutputRecord::new(RecordKind::Jump).meta("jump", r)?);
            }
            let m = nalgebra::DMatrix::from_fn(rows.len(), 3, |i, j| match j {
                0 => rows[i].hyper.value(),
                1 => rows[i].before_mse,
                _ => rows[i].after_mse,
            });
            emit(&cfg, &records, vec![MatrixPayload::from_matrix("jump", &m)], &table)
        }
    }
}
