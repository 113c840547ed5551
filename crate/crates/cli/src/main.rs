use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use iwpp::edt::{edt, EdtError, EdtMode};
use iwpp::imgio::{self, ImgError};
use iwpp::recon::{self, ReconError};
use iwpp::{
    Connectivity, DynImage, EngineConfig, GbqCapacity, Image, PipelineConfig, QueueConfig,
    QueueStrategy, StructuringElement,
};

mod bench;
mod verify;

#[derive(Parser)]
#[command(name = "iwpp", version, about = "Morphological reconstruction and distance transforms by wavefront propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a mask from a marker.
    Recon(ReconArgs),
    /// Euclidean distance transform of a binary image.
    Edt(EdtArgs),
    /// Run randomized oracle-equivalence suites.
    Verify(verify::VerifyArgs),
    /// Run a benchmark experiment and emit CSV / JSON records.
    Bench(bench::BenchArgs),
}

/// Width and height given as `WxH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

pub fn parse_dims(s: &str) -> Result<Dims, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("invalid dimension {v:?} in {s:?}"))
    };
    Ok(Dims {
        width: parse(w)?,
        height: parse(h)?,
    })
}

fn parse_gbq(s: &str) -> Result<GbqCapacity, String> {
    match s {
        "auto" => Ok(GbqCapacity::Auto),
        "unbounded" => Ok(GbqCapacity::Unbounded),
        n => n
            .parse()
            .map(GbqCapacity::Fixed)
            .map_err(|_| format!("expected a count, \"auto\" or \"unbounded\", got {n:?}")),
    }
}

fn parse_conn(s: &str) -> Result<StructuringElement, String> {
    let n: u8 = s.parse().map_err(|_| format!("expected 4 or 8, got {s:?}"))?;
    Connectivity::try_from(n)
        .map(StructuringElement::from)
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueueArg {
    Naive,
    Prefix,
    Perworker,
}

impl From<QueueArg> for QueueStrategy {
    fn from(q: QueueArg) -> Self {
        match q {
            QueueArg::Naive => QueueStrategy::Naive,
            QueueArg::Prefix => QueueStrategy::PrefixSum,
            QueueArg::Perworker => QueueStrategy::PerWorker,
        }
    }
}

/// Execution flags shared by `recon` and `edt`.
#[derive(Args, Debug, Clone)]
struct ExecArgs {
    /// Connectivity, 4 or 8.
    #[arg(long, default_value = "8", value_parser = parse_conn)]
    conn: StructuringElement,
    /// Worker threads (defaults to the available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Tile size for tiled execution.
    #[arg(long, default_value = "512x512", value_parser = parse_dims)]
    tile: Dims,
    /// Threads per tile task (micro-tiling when above 1).
    #[arg(long, default_value_t = 1)]
    micro: usize,
    #[arg(long, value_enum, default_value_t = QueueArg::Perworker)]
    queue: QueueArg,
    /// Global queue capacity: a count, "auto" or "unbounded".
    #[arg(long, default_value = "auto", value_parser = parse_gbq)]
    gbq_capacity: GbqCapacity,
}

impl ExecArgs {
    fn workers(&self) -> usize {
        self.workers.unwrap_or_else(|| EngineConfig::default().n_workers)
    }

    fn engine(&self) -> EngineConfig {
        EngineConfig {
            n_workers: self.workers(),
            queue: QueueConfig {
                strategy: self.queue.into(),
                gbq_capacity: self.gbq_capacity,
                ..QueueConfig::default()
            },
            max_rounds: None,
        }
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            micro_workers: self.micro,
            ..PipelineConfig::new(self.workers(), self.tile.width, self.tile.height)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algo {
    Sr,
    Qb,
    Fh,
    Parallel,
    Tiled,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    mask: PathBuf,
    /// Marker image; must not exceed the mask anywhere.
    #[arg(long, required_unless_present = "auto_marker", conflicts_with = "auto_marker")]
    marker: Option<PathBuf>,
    /// Use `max(mask - H, 0)` as the marker.
    #[arg(long, value_name = "H")]
    auto_marker: Option<u32>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Fh)]
    algo: Algo,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Seq,
    Parallel,
    Tiled,
}

#[derive(Args)]
struct EdtArgs {
    /// Binary PGM; zero pixels are background.
    #[arg(long)]
    input: PathBuf,
    /// `.pgm` for rounded distances, `.f32` for raw floats (plus a `.hdr` header).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Seq)]
    mode: Mode,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Contract(String),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Contract(_) => 2,
            CliError::Domain(_) => 3,
        }
    }
}

impl From<ReconError> for CliError {
    fn from(e: ReconError) -> Self {
        match e {
            ReconError::MarkerAboveMask { .. } | ReconError::DimensionMismatch { .. } => {
                CliError::Contract(e.to_string())
            }
            ReconError::Tiles(_) => CliError::Contract(e.to_string()),
            ReconError::Engine(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EdtError> for CliError {
    fn from(e: EdtError) -> Self {
        match e {
            EdtError::NoBackground => CliError::Domain(e.to_string()),
            EdtError::Tiles(_) => CliError::Contract(e.to_string()),
            EdtError::Engine(_) => CliError::Internal(e.to_string()),
        }
    }
}

fn read_image(path: &Path) -> Result<DynImage, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Contract(format!("cannot read {}: {e}", path.display())))?;
    imgio::read_pgm(&bytes).map_err(|e: ImgError| CliError::Contract(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn write_image(path: &Path, img: &DynImage) -> Result<(), CliError> {
    let bytes = imgio::write_pgm(img).map_err(|e| CliError::Internal(e.to_string()))?;
    write_file(path, &bytes)
}

fn reconstruct<T: iwpp::pixel::Pixel>(
    mask: &Image<T>,
    marker: &Image<T>,
    args: &ReconArgs,
) -> Result<Image<T>, CliError> {
    let g = &args.exec.conn;
    Ok(match args.algo {
        Algo::Sr => recon::recon_sr(mask, marker, g)?,
        Algo::Qb => recon::recon_qb(mask, marker, g)?,
        Algo::Fh => recon::recon_fh(mask, marker, g)?,
        Algo::Parallel => recon::recon_parallel(mask, marker, g, &args.exec.engine())?.image,
        Algo::Tiled => recon::recon_tiled(mask, marker, g, &args.exec.pipeline())?.0,
    })
}

fn cmd_recon(args: &ReconArgs) -> Result<(), CliError> {
    let mask = read_image(&args.mask)?;
    let marker = match (&args.marker, args.auto_marker) {
        (Some(path), _) => read_image(path)?,
        (None, Some(h)) => match &mask {
            DynImage::U8(m) | DynImage::Binary(m) => {
                DynImage::U8(recon::h_marker(m, h.min(u8::MAX as u32) as u8))
            }
            DynImage::U16(m) => DynImage::U16(recon::h_marker(m, h.min(u16::MAX as u32) as u16)),
            DynImage::F32(_) => unreachable!("PGM input is never f32"),
        },
        (None, None) => unreachable!("clap requires a marker source"),
    };
    let out = match (&mask, &marker) {
        (DynImage::Binary(m), DynImage::Binary(j) | DynImage::U8(j)) => {
            DynImage::Binary(reconstruct(m, j, args)?)
        }
        (DynImage::U8(m), DynImage::U8(j) | DynImage::Binary(j)) => {
            DynImage::U8(reconstruct(m, j, args)?)
        }
        (DynImage::U16(m), DynImage::U16(j)) => DynImage::U16(reconstruct(m, j, args)?),
        (m, j) => {
            return Err(CliError::Contract(format!(
                "mask is {:?} but marker is {:?}",
                m.kind(),
                j.kind()
            )))
        }
    };
    write_image(&args.out, &out)
}

fn cmd_edt(args: &EdtArgs) -> Result<(), CliError> {
    let mask = match read_image(&args.input)? {
        DynImage::Binary(m) => m,
        DynImage::U8(m) if DynImage::binary(m.clone()).is_ok() => m,
        other => {
            return Err(CliError::Contract(format!(
                "{} is not binary ({:?} with values other than 0 and 255)",
                args.input.display(),
                other.kind()
            )))
        }
    };
    let mode = match args.mode {
        Mode::Seq => EdtMode::Sequential,
        Mode::Parallel => EdtMode::Parallel(args.exec.engine()),
        Mode::Tiled => EdtMode::Tiled(args.exec.pipeline()),
    };
    let out = edt(&mask, &args.exec.conn, &mode)?;
    match args.out.extension().and_then(|e| e.to_str()) {
        Some("f32") => {
            let (header, payload) = imgio::write_f32_raw(&out.distance);
            write_file(&args.out, &payload)?;
            let mut hdr = args.out.clone().into_os_string();
            hdr.push(".hdr");
            write_file(Path::new(&hdr), format!("{header}\n").as_bytes())
        }
        Some("pgm") => {
            let q = imgio::quantize_distances(&out.distance);
            let img = if q.data().iter().all(|&v| v <= u8::MAX as u16) {
                DynImage::U8(q.map(|v| v as u8))
            } else {
                DynImage::U16(q)
            };
            write_image(&args.out, &img)
        }
        _ => Err(CliError::Contract(format!(
            "output {} must end in .pgm or .f32",
            args.out.display()
        ))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Recon(a) => cmd_recon(a),
        Command::Edt(a) => cmd_edt(a),
        Command::Verify(a) => verify::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
