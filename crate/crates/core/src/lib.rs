//! Cascaded mutual attention for RGB-D salient object detection.
//!
//! * [`tensor`], [`ops`], [`tape`]: dense `f64` tensors, primitive kernels
//!   with analytic adjoints, and a reverse-mode operation tape.
//! * [`attention`]: similarity, mutual normalisation, fusion, gated mutual
//!   attention and the two-module cascade.
//! * [`losses`]: BCE + soft IoU + E-loss, summed over three heads.
//! * [`metrics`]: MAE, F-measure, E-measure, S-measure, adaptive thresholds
//!   and threshold curves.
//! * [`toymodel`]: a small dual-branch network, synthetic RGB-D data, Adam,
//!   training, checkpoints and the ablation lattice.
//! * [`gradcheck`]: central finite-difference checks of every differentiable
//!   operation.

pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod toymodel;

pub use attention::{AttentionOutput, AttentionParams, CascadeParams, DualFeatures, StageOutput};
pub use error::{Error, Result};
pub use losses::{GroundTruth, LossKind, Prediction};
pub use metrics::{EvalPair, ImageMetrics, MetricReport};
pub use ops::ConvSpec;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use toymodel::{AblationVariant, ToyConfig};
