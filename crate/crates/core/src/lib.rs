//! Irregular wavefront propagation on 2-D images.
//!
//! Two operators are built on one executor: gray-scale / binary
//! morphological reconstruction ([`recon`]) and a Voronoi-propagation
//! Euclidean distance transform ([`edt`]). Each runs sequentially, on a
//! worker pool sharing an atomic grid with a hierarchical wavefront queue
//! ([`engine`], [`queue`]), or tile by tile through a TP/BP pipeline
//! ([`tiles`], [`sched`]).
//!
//! ```
//! use iwpp::grid::{Image, StructuringElement};
//! use iwpp::recon::{recon_fh, h_marker};
//!
//! let mask = Image::from_vec(5, 1, vec![9u8, 9, 3, 9, 9]).unwrap();
//! let marker = h_marker(&mask, 4);
//! let out = recon_fh(&mask, &marker, &StructuringElement::EIGHT).unwrap();
//! assert_eq!(out.data(), &[5, 5, 3, 5, 5]);
//! ```

pub mod edt;
pub mod engine;
pub mod grid;
pub mod imgio;
pub mod oracle;
pub mod pixel;
pub mod queue;
pub mod recon;
pub mod sched;
pub mod tiles;

pub use edt::{edt, EdtError, EdtMode, EdtOutput, VoronoiMap};
pub use engine::{AtomicGrid, EngineConfig, EngineError, PropagationRule, RunStats};
pub use grid::{Connectivity, Coord, DynImage, ElemKind, Image, Region, StructuringElement};
pub use queue::{GbqCapacity, QueueConfig, QueueStrategy};
pub use recon::{recon_fh, recon_parallel, recon_qb, recon_sr, recon_tiled, ReconError};
pub use tiles::{PipelineConfig, PipelineStats};
