#![allow(dead_code)]

pub mod networks;
