//! Hyper-reduced order modelling of elasto-viscoplastic structures.

pub mod arrays;
pub mod cli_io;
pub mod demo;
pub mod error;
pub mod exact;
pub mod fe;
pub mod hfm;
pub mod hyperreduction;
pub mod ingestion;
pub mod linalg;
pub mod loading;
pub mod material;
pub mod mesh;
pub mod par;
pub mod pipeline;
pub mod pod;
pub mod reconstruction;
pub mod rom_online;
pub mod sparse;
pub mod textio;

pub use error::{Error, Result};
