pub mod averaging;
pub mod drift;
pub mod ergodicity;
pub mod error;
pub mod integrate;
pub mod measures;
pub mod noise;
pub mod path;
pub mod quadrature;
pub mod rng;

pub use averaging::{AveragedField, AveragingReport, EpsilonStats};
pub use drift::{ContractivityCertificate, DriftSpec, PairRegime};
pub use ergodicity::{
    ControlReport, DecayCurve, DeltaRule, ExperimentOptions, FitModel, GirsanovCouplingRecord,
    QuenchedInitial, RateFit, TvDecayReport,
};
pub use error::{Error, Result};
pub use integrate::{AdversaryPath, CoeffField, ControlSchedule, SlowFastConfig};
pub use measures::{AveragedCoefficientTable, EmpiricalMeasure};
pub use noise::{FbmMethod, FbmSpec, IncrementDecomposition, SeminormReport};
pub use path::SamplePath;
