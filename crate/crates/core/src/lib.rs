//! Certifying kernel SVMs on graph neural tangent kernels against node
//! feature poisoning.
//!
//! Every numeric routine is generic over [`scalar::Scalar`] (`f32` or
//! `f64`). The aliases below fix the scalar to `f64`.

pub mod bounds;
pub mod cert;
pub mod graphdata;
pub mod milp;
pub mod ntk;
pub mod qp;
pub mod scalar;

pub use scalar::Scalar;

pub type Real = f64;
pub type Graph = graphdata::Graph<f64>;
pub type StructureMatrix = graphdata::StructureMatrix<f64>;
pub type KernelMatrix = ntk::KernelMatrix<f64>;
pub type IntervalMatrix = bounds::IntervalMatrix<f64>;
pub type PerturbationModel = bounds::PerturbationModel<f64>;
pub type DualSolution = qp::DualSolution<f64>;
pub type TrainedModel = qp::TrainedModel<f64>;
pub type MilpModel = milp::MilpModel<f64>;
pub type SolveOutcome = milp::SolveOutcome<f64>;
pub type CertSetting = cert::CertSetting<f64>;
pub type AttackReport = cert::AttackReport<f64>;
