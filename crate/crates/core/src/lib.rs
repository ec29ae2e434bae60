pub mod anchor;
pub mod config;
pub mod criteria;
pub mod engine;
pub mod gateway;
pub mod model;
pub mod prompt;
pub mod report;
pub mod store;
