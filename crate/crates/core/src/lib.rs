//! Characterize OLTP workloads from traces and replay statistically faithful
//! synthetic workloads.
//!
//! The pipeline has two halves. On the production side, [`chars`] extracts
//! table statistics, [`logic`] mines transaction logic from heavy traces and
//! [`dist`] builds windowed access distributions from light traces. On the
//! evaluation side, [`dbgen`] builds a synthetic database from the statistics,
//! [`workload`] drives synthetic transactions and [`sim`] executes them against
//! a lock-manager/partitioning/buffer-pool simulator.

pub mod chars;
pub mod dbgen;
pub mod dist;
pub mod logic;
pub mod model;
pub mod seed;
pub mod sim;
pub mod workload;

pub use model::{
    DataType, FilterKind, OpKind, ParamRef, ReturnRef, Schema, SqlOp, TemplateNode,
    TransactionInstance, TransactionTemplate, Value,
};
