//! Core of the aroma generation loop: the odorant palette, ratio vectors and
//! dispense schedules, the LLM gateway, refinement sessions, and the
//! statistics used to evaluate them.

pub mod analysis;
pub mod composition;
pub mod gateway;
pub mod palette;
pub mod scalar;
pub mod session;

pub use composition::{
    repair_ratios, to_schedule, DispenseSchedule, Hundredths, RatioVector, ScheduleStep,
};
pub use gateway::{CompositionResult, Gateway, GatewayError, UserInput};
pub use palette::{Category, Odorant, Palette, PaletteError};
pub use scalar::{Exact, Scalar};
pub use session::{Session, SessionManager};

/// Test results at the usual float widths.
pub type WilcoxonF64 = analysis::WilcoxonResult<f64>;
pub type WilcoxonF32 = analysis::WilcoxonResult<f32>;
pub type FriedmanF64 = analysis::FriedmanResult<f64>;
pub type FriedmanF32 = analysis::FriedmanResult<f32>;
