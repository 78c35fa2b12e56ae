pub mod config;
pub mod data;
pub mod export;
pub mod simulate;
pub mod run;
