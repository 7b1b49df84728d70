//! Series containers, normalization, windowing, splits and the synthetic
//! coupled-series generator.

mod normalize;
mod series;
mod split;
mod synth;
mod window;

pub use normalize::{fit_normalize, NormStats};
pub use series::{time_features, RawSeries, TIME_FEATURES};
pub use split::{chronological_split, split_point, DEFAULT_FRACTIONS};
pub use synth::{synthesize_coupled, Coupling, SynthSpec, SyntheticSeries};
pub use window::{make_windows, Batch, WindowSample, WindowSpec};
