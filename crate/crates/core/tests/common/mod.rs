#![allow(dead_code)]

pub mod gap;
pub mod gradients;
pub mod wilcoxon;
