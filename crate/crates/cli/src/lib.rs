pub mod commands;
pub mod config;
pub mod pgm;
pub mod trajfile;
