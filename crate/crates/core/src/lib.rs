//! Multi-center-of-projection point cloud completion.

pub mod cloud;
pub mod config;
pub mod container;
pub mod error;
pub mod erosion;
pub mod grid;
pub mod image;
pub mod inpaint;
pub mod metrics;
pub mod numeric;
pub mod patchbank;
pub mod pipeline;
pub mod ply;
pub mod preview;
pub mod projection;
pub mod reproject;
pub mod seed;
pub mod sweep;
pub mod synth;

pub use cloud::PointCloud;
pub use error::{Error, ErrorKind, Result};
pub use image::{BitMask, Channel, McopImage, Patch};
