#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod context_embedding;
pub mod dbscan;
pub mod fusion;
pub mod gateway;
pub mod geometry;
pub mod io;
pub mod labeling;
pub mod mask;
pub mod mask_refinement;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
