//! Reparametrization of bounded curves: single subdivision steps, iterated
//! covers along orbits, and the calculus constants they rely on.

pub mod bowen;
pub mod calculus;
pub mod curve;
pub mod step;

pub use bowen::{bowen_cover, growth_rate, BowenCover, BowenOptions, CoverMode, GrowthReport, LevelRecord};
pub use calculus::{run_suite, CalculusOptions, CalculusReport};
pub use curve::{
    check_bounded, check_bounded_sampled, AffineMap, BoundednessCertificate, Composite, Curve, JetMap, ParamCurve,
    Power, Verdict,
};
pub use step::{chi_class, epsilon_admissible, epsilon_omega, reparametrize_step, ReparamFamily, StepConstants};
