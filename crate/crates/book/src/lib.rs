//! Compiles the guide's chapters as doc comments so `cargo test` runs every
//! code block in the book against the current API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/volumes-and-views.md")]
pub mod volumes_and_views {}
#[doc = include_str!("../../../book/src/predictors-and-cv.md")]
pub mod predictors_and_cv {}
#[doc = include_str!("../../../book/src/discrepancy.md")]
pub mod discrepancy {}
#[doc = include_str!("../../../book/src/cox-model.md")]
pub mod cox_model {}
#[doc = include_str!("../../../book/src/reporting.md")]
pub mod reporting {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
