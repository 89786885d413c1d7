//! Schema-driven structured entity extraction: a three-stage
//! encoder-decoder pipeline with special-token schema elements, a
//! JSON-emitting baseline, and an assignment-based evaluation metric.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod corpus;
pub mod metric;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod schema;
pub mod textproc;

pub type ParamsF32 = model::ModelParams<f32>;
pub type ParamsF64 = model::ModelParams<f64>;
pub type AdamStateF32 = model::AdamState<f32>;
pub type AdamStateF64 = model::AdamState<f64>;
pub type MatrixF32 = model::Matrix<f32>;
pub type MatrixF64 = model::Matrix<f64>;
pub type SimilarityMatrixF64 = metric::SimilarityMatrix<f64>;
pub type ExtractorF32<'a> = pipeline::Extractor<'a, f32>;
pub type ExtractorF64<'a> = pipeline::Extractor<'a, f64>;
