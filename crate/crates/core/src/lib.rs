// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The radar-enhance Authors.

pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod gnn;
pub mod history;
pub mod localization;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod sim;
pub mod spatial;
pub mod training;

pub use error::{Error, Result};
