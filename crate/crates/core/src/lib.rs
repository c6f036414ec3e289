//! Core measures and statistics for analysing drawing corpora: raster
//! preprocessing, style and content metrics, agreement and group tests, and
//! mixed-effects modelling.

pub mod content;
pub mod modeling;
pub mod raster;
pub mod stats;
pub mod style;
pub mod table;
