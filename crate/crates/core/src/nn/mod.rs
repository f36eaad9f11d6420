//! From-scratch layers, the deep feature network and the σ classifier.

pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod network;
pub mod train;

pub use layers::{sgd_step, softmax, softmax_cross_entropy, Layer, LayerParams, Mode, Tensor};
pub use model::{within_tolerance, Classification, FeatureMask, InputScaler, Model, SIGMA_TOLERANCE};
pub use network::{NetGrads, Network};
pub use train::{train_on_images, CorpusStats, EpochStats, SuiteResult, TrainOptions, TrainRun, TrainSample};
