// each test target uses a different subset
#![allow(dead_code)]

pub mod attention;
pub mod metrics;
pub mod spectral;
