pub mod benders;
pub mod config;
pub mod contingency;
pub mod conic;
pub mod grid;
pub mod network;
pub mod relaxation;
pub mod report;
