//! Design and verification of unknown-input observers for discrete-time
//! LTI plants, from a state-space model or from recorded data.

pub mod datalog;
pub mod error;
pub mod existcheck;
pub mod io;
pub mod numkit;
pub mod plant;
pub mod reference;
pub mod simlab;
pub mod synth;

pub use num_complex::Complex64;

pub use datalog::{build_blocks, collect, DataBlocks, HistoricalData, SignalPolicy};
pub use error::{NoUioCause, Result, UioError};
pub use existcheck::{condition_a, condition_b, exists_uio, ExistenceReport};
pub use numkit::{RankTolerance, SpectrumReport};
pub use plant::{Dims, StateSpaceModel, UioRealization};
pub use simlab::{check_error_recursion, convergence_stats, run, ObserverInit, RunTrace};
pub use synth::{
    design_from_data, design_from_model, verify_acceptor, verify_uio, GainMethod, KernelStyle, SynthesisOptions,
};
