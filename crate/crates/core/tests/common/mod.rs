#![allow(dead_code)]

pub mod keccak_oracle;
