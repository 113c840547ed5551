//! Benchmark experiments emitting one record per configuration.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;

use iwpp::edt::{self, EdtMode};
use iwpp::imgio::{gen_gray_mask, gen_marker, gen_synthetic_mask};
use iwpp::recon;
use iwpp::tiles::TaskEvent;
use iwpp::{
    EngineConfig, GbqCapacity, Image, PipelineConfig, PipelineStats, QueueStrategy, RunStats,
    StructuringElement,
};

use crate::{parse_dims, CliError, Dims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Queue strategies at equal work.
    Queue,
    /// Tiled runs across tile sizes.
    Tilesize,
    /// Distance transform across foreground coverages.
    Coverage,
    /// Global queue capacities and the re-executions they cause.
    Overflow,
    /// Parallel and tiled runs across worker counts.
    Scaling,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    #[arg(long, default_value = "512x512", value_parser = parse_dims)]
    size: Dims,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated worker counts (each experiment has its own default).
    #[arg(long, value_delimiter = ',')]
    workers: Vec<usize>,
    /// Comma-separated foreground percentages.
    #[arg(long, value_delimiter = ',')]
    coverage: Vec<f64>,
    /// Tile size where an experiment does not sweep it.
    #[arg(long, default_value = "128x128", value_parser = parse_dims)]
    tile: Dims,
    /// Runs per configuration; the median wall time is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Write records as CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write records as a JSON array.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the task events of tiled runs as JSON lines.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    experiment: String,
    variant: String,
    workers: usize,
    tile_dims: Option<String>,
    queue_strategy: Option<String>,
    coverage_pct: f64,
    wall_time_ms: f64,
    rounds: usize,
    bp_waves: Option<usize>,
    queued_total: u64,
    overflow_count: usize,
    speedup_vs_1worker: Option<f64>,
    reservations: u64,
}

/// Counters of one timed run.
struct Sample {
    stats: RunStats,
    pipeline: Option<PipelineStats>,
}

impl From<RunStats> for Sample {
    fn from(stats: RunStats) -> Self {
        Sample {
            stats,
            pipeline: None,
        }
    }
}

impl From<PipelineStats> for Sample {
    fn from(p: PipelineStats) -> Self {
        Sample {
            stats: p.propagation,
            pipeline: Some(p),
        }
    }
}

#[derive(Clone, Copy)]
enum Workload {
    Recon,
    Edt,
}

impl Workload {
    fn name(self) -> &'static str {
        match self {
            Workload::Recon => "recon",
            Workload::Edt => "edt",
        }
    }
}

#[derive(Clone, Copy)]
enum Exec {
    Sequential,
    Parallel(EngineConfig),
    Tiled(PipelineConfig),
}

struct Inputs {
    gray: Image<u8>,
    marker: Image<u8>,
    binary: Image<u8>,
}

impl Inputs {
    fn new(size: Dims, coverage: f64, seed: u64) -> Self {
        let gray = gen_gray_mask(size.width, size.height, coverage, seed);
        let marker = gen_marker(&gray, 40);
        let binary = gen_synthetic_mask(size.width, size.height, coverage, seed);
        Inputs {
            gray,
            marker,
            binary,
        }
    }
}

fn run_once(inputs: &Inputs, work: Workload, exec: Exec) -> Result<Sample, CliError> {
    let g = StructuringElement::EIGHT;
    Ok(match (work, exec) {
        (Workload::Recon, Exec::Sequential) => {
            recon::recon_fh_with_stats(&inputs.gray, &inputs.marker, &g)?.stats.into()
        }
        (Workload::Recon, Exec::Parallel(cfg)) => {
            recon::recon_parallel(&inputs.gray, &inputs.marker, &g, &cfg)?.stats.into()
        }
        (Workload::Recon, Exec::Tiled(cfg)) => {
            recon::recon_tiled(&inputs.gray, &inputs.marker, &g, &cfg)?.1.into()
        }
        (Workload::Edt, exec) => {
            let mode = match exec {
                Exec::Sequential => EdtMode::Sequential,
                Exec::Parallel(cfg) => EdtMode::Parallel(cfg),
                Exec::Tiled(cfg) => EdtMode::Tiled(cfg),
            };
            let (vr, seeds) = edt::edt_init(&inputs.binary, &g);
            let (_, stats, pipeline) = edt::edt_propagate(&vr, &seeds, &g, &mode)?;
            Sample { stats, pipeline }
        }
    })
}

struct Bench<'a> {
    args: &'a BenchArgs,
    records: Vec<Record>,
    events: Vec<serde_json::Value>,
}

/// What varies between the records of one experiment.
struct Config<'a> {
    variant: String,
    inputs: &'a Inputs,
    coverage: f64,
    work: Workload,
    exec: Exec,
}

impl Bench<'_> {
    fn measure(&mut self, c: Config<'_>) -> Result<(), CliError> {
        let mut times = Vec::with_capacity(self.args.repeats);
        run_once(c.inputs, c.work, c.exec)?; // warm-up
        let mut last = None;
        for _ in 0..self.args.repeats.max(1) {
            let t = Instant::now();
            let sample = run_once(c.inputs, c.work, c.exec)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
            last = Some(sample);
        }
        times.sort_by(f64::total_cmp);
        let sample = last.expect("at least one repeat");
        let (workers, tile_dims, queue_strategy) = match c.exec {
            Exec::Sequential => (1, None, None),
            Exec::Parallel(cfg) => (cfg.n_workers, None, Some(cfg.queue.strategy.name().to_string())),
            Exec::Tiled(cfg) => (
                cfg.n_workers,
                Some(format!("{}x{}", cfg.tile_width, cfg.tile_height)),
                None,
            ),
        };
        let variant = format!("{}-{}", c.work.name(), c.variant);
        if let Some(p) = &sample.pipeline {
            let run = self.records.len();
            self.events.extend(p.events.iter().map(|e| tag_event(e, run, &variant)));
        }
        self.records.push(Record {
            experiment: format!("{:?}", self.args.experiment).to_lowercase(),
            variant,
            workers,
            tile_dims,
            queue_strategy,
            coverage_pct: c.coverage,
            wall_time_ms: times[times.len() / 2],
            rounds: sample.stats.rounds,
            bp_waves: sample.pipeline.as_ref().map(|p| p.bp_waves),
            queued_total: sample.stats.queued_total,
            overflow_count: sample.stats.overflow_count,
            speedup_vs_1worker: None,
            reservations: sample.stats.reservations,
        });
        Ok(())
    }

    /// Fills `speedup_vs_1worker` wherever a matching 1-worker record exists.
    fn fill_speedups(&mut self) {
        let key = |r: &Record| {
            (
                r.variant.clone(),
                r.tile_dims.clone(),
                r.queue_strategy.clone(),
                r.coverage_pct.to_bits(),
            )
        };
        let base: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.workers == 1)
            .map(|r| (key(r), r.wall_time_ms))
            .collect();
        for r in &mut self.records {
            let k = key(r);
            if let Some((_, t1)) = base.iter().find(|(bk, _)| *bk == k) {
                r.speedup_vs_1worker = Some(t1 / r.wall_time_ms);
            }
        }
    }
}

fn tag_event(e: &TaskEvent, run: usize, variant: &str) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_str(&e.to_json_line()).expect("event line is valid JSON");
    v["run"] = run.into();
    v["variant"] = variant.into();
    v
}

fn engine(workers: usize, strategy: QueueStrategy, gbq: GbqCapacity) -> EngineConfig {
    let mut cfg = EngineConfig::with_workers(workers);
    cfg.queue.strategy = strategy;
    cfg.queue.gbq_capacity = gbq;
    cfg
}

fn or_default<T: Clone>(given: &[T], default: &[T]) -> Vec<T> {
    if given.is_empty() {
        default.to_vec()
    } else {
        given.to_vec()
    }
}

fn gbq_label(g: GbqCapacity) -> String {
    match g {
        GbqCapacity::Unbounded => "gbq-unbounded".into(),
        GbqCapacity::Auto => "gbq-auto".into(),
        GbqCapacity::Fixed(n) => format!("gbq-{n}"),
    }
}

fn experiment(b: &mut Bench<'_>) -> Result<(), CliError> {
    let args = b.args;
    let coverages = or_default(&args.coverage, &[90.0]);
    let tile = PipelineConfig::new(1, args.tile.width, args.tile.height);
    let tiled = |n| Exec::Tiled(PipelineConfig { n_workers: n, ..tile });
    match args.experiment {
        Experiment::Queue => {
            // one worker keeps the queued work identical across strategies
            let inputs = Inputs::new(args.size, coverages[0], args.seed);
            for n in or_default(&args.workers, &[1]) {
                for strategy in QueueStrategy::ALL {
                    for work in [Workload::Recon, Workload::Edt] {
                        b.measure(Config {
                            variant: "parallel".into(),
                            inputs: &inputs,
                            coverage: coverages[0],
                            work,
                            exec: Exec::Parallel(engine(n, strategy, GbqCapacity::Auto)),
                        })?;
                    }
                }
            }
        }
        Experiment::Tilesize => {
            let inputs = Inputs::new(args.size, coverages[0], args.seed);
            let largest = args.size.width.max(args.size.height);
            let sizes = [32, 64, 128, 256, 512, 1024];
            for n in or_default(&args.workers, &[1, 2, 4]) {
                for &t in sizes.iter().filter(|&&t| t <= largest) {
                    for work in [Workload::Recon, Workload::Edt] {
                        b.measure(Config {
                            variant: "tiled".into(),
                            inputs: &inputs,
                            coverage: coverages[0],
                            work,
                            exec: Exec::Tiled(PipelineConfig::new(n, t, t)),
                        })?;
                    }
                }
            }
        }
        Experiment::Coverage => {
            let n = or_default(&args.workers, &[EngineConfig::default().n_workers])[0];
            for c in or_default(&args.coverage, &[25.0, 50.0, 75.0, 90.0, 100.0]) {
                let inputs = Inputs::new(args.size, c, args.seed);
                let modes = [
                    ("seq", Exec::Sequential),
                    ("parallel", Exec::Parallel(EngineConfig::with_workers(n))),
                    ("tiled", tiled(n)),
                ];
                for (name, exec) in modes {
                    b.measure(Config {
                        variant: name.into(),
                        inputs: &inputs,
                        coverage: c,
                        work: Workload::Edt,
                        exec,
                    })?;
                }
            }
        }
        Experiment::Overflow => {
            let inputs = Inputs::new(args.size, coverages[0], args.seed);
            let caps = [
                GbqCapacity::Unbounded,
                GbqCapacity::Auto,
                GbqCapacity::Fixed(4096),
                GbqCapacity::Fixed(256),
            ];
            for n in or_default(&args.workers, &[1]) {
                for gbq in caps {
                    for work in [Workload::Recon, Workload::Edt] {
                        b.measure(Config {
                            variant: gbq_label(gbq),
                            inputs: &inputs,
                            coverage: coverages[0],
                            work,
                            exec: Exec::Parallel(engine(n, QueueStrategy::PerWorker, gbq)),
                        })?;
                    }
                }
            }
        }
        Experiment::Scaling => {
            let inputs = Inputs::new(args.size, coverages[0], args.seed);
            let mut counts = or_default(&args.workers, &[1, 2, 4, 8]);
            if !counts.contains(&1) {
                counts.insert(0, 1);
            }
            for n in counts {
                for work in [Workload::Recon, Workload::Edt] {
                    let cfg = engine(n, QueueStrategy::PerWorker, GbqCapacity::Auto);
                    for (name, exec) in [("parallel", Exec::Parallel(cfg)), ("tiled", tiled(n))] {
                        b.measure(Config {
                            variant: name.into(),
                            inputs: &inputs,
                            coverage: coverages[0],
                            work,
                            exec,
                        })?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    if args.workers.contains(&0) {
        return Err(CliError::Contract("worker counts must be positive".into()));
    }
    if let Some(c) = args.coverage.iter().find(|c| !(0.0..=100.0).contains(*c)) {
        return Err(CliError::Contract(format!("coverage {c} is outside 0..=100")));
    }
    let mut bench = Bench {
        args,
        records: Vec::new(),
        events: Vec::new(),
    };
    experiment(&mut bench)?;
    bench.fill_speedups();

    let sink: Box<dyn std::io::Write> = match &args.csv {
        Some(path) => Box::new(std::fs::File::create(path).map_err(io_err)?),
        None => Box::new(std::io::stdout()),
    };
    let mut csv = csv::Writer::from_writer(sink);
    for r in &bench.records {
        csv.serialize(r).map_err(io_err)?;
    }
    csv.flush().map_err(io_err)?;
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&bench.records).map_err(io_err)?;
        std::fs::write(path, text).map_err(io_err)?;
    }
    if let Some(path) = &args.events {
        let lines: String = bench.events.iter().map(|e| format!("{e}\n")).collect();
        std::fs::write(path, lines).map_err(io_err)?;
    }
    Ok(())
}
