//! Communications-aware relay control for multirotor aerial vehicles under
//! RF jamming.
//!
//! The crate is organised bottom-up:
//!
//! * [`vehicle`]: generically-tilted multirotor model, allocation maps and
//!   RK4 discretisation (plant and prediction model).
//! * [`radio`]: dipole link budget, SINR, Shannon and harmonic-mean
//!   end-to-end capacity, alignment metric.
//! * [`trajgen`]: conservative inverse-capacity surrogate with analytic
//!   derivatives and the closed-form relay reference.
//! * [`nmpc`]: multiple-shooting Gauss-Newton SQP with a dense active-set QP.
//! * [`scenario`]: scenario files, presets, jammer schedule, source path.
//! * [`sim`]: closed-loop episodes, metrics and CSV export.
//! * [`oracle`]: independent checks (finite differences, grid search, audits).
//!
//! Data-parallel inner loops go through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod error;
pub mod exec;
pub mod nmpc;
pub mod oracle;
pub mod radio;
pub mod scenario;
pub mod sim;
pub mod trajgen;
pub mod vehicle;

pub use error::{Error, Result};
