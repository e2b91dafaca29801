//! A scaled-down trainable salient-object network on synthetic RGB-D data.

mod adam;
pub mod checkpoint;
mod config;
mod data;
pub mod gradcheck;
mod model;
mod params;
mod train;

pub use adam::{adam_step, AdamState, ADAM_EPS, BETA1, BETA2};
pub use config::{AblationVariant, ToyConfig, CONFIG_KEYS};
pub use data::{gen_synthetic, gen_synthetic_sized, SyntheticSample};
pub use model::{rfb_lite, rfb_lite_on, Encoded, ForwardVars, Layout, Model, RfbParams, RFB_DILATIONS};
pub use params::{ParamId, ParamStore};
pub use train::{evaluate_model, split, trace_csv, train, train_synthetic, TraceRow, TrainOutcome};
