#![allow(dead_code)]

pub mod checks;
pub mod faults;
pub mod gen;
pub mod oracles;
