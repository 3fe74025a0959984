#![allow(dead_code)]

pub use dmn_core as dmn;

pub mod oracle;
