//! Few-atom trap loss statistics: atom-number simulation, photon-count trace
//! synthesis, step detection, rate fitting and optical-shielding models.

pub mod channels;
pub mod constants;
pub mod csvio;
pub mod detect;
pub mod error;
pub mod fit;
pub mod pipeline;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod trace;
pub mod trap;

pub use channels::{
    effective_betas, ChannelSet, EffectiveBetas, Outcome, OutcomeSampler, ShieldingModel, ShieldingParams,
};
pub use constants::PhysConstants;
pub use detect::{calibrate, detect, Calibration, DetectOptions, Detection, DetectionReport};
pub use error::{Error, Result};
pub use fit::{
    combine_estimates, extrapolate_beta_hcc, fit_rates, fit_repump_decay, infer_temperature, tabulate, DecayPoint,
    Estimate, EventRateTable, FitResult, SuppressionFit,
};
pub use pipeline::{closed_loop, load_rate_for_mean, repump_scan, Acquisition, ClosedLoop, RepumpScan, Scenario};
pub use sim::{simulate, Event, EventKind, EventLog, RateModel};
pub use trace::{synthesize, FluorescenceTrace};
pub use trap::{DepthProfile, TrapConfig};
