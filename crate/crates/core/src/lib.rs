//! Numerics for SDEs and stochastic transport equations with bounded Dini
//! drift: modulus calculus, heat-kernel mild solvers, the Itô–Tanaka change
//! of variables, Euler–Maruyama flows with derivative flows, Monte Carlo
//! moment estimators and pathwise transport solutions.

pub mod cli_io;
pub mod error;
pub mod grid;
pub mod heat_kernel;
pub mod ito_tanaka;
pub mod linalg;
pub mod moduli;
pub mod mollifier;
pub mod monte_carlo;
pub mod pde;
pub mod quadrature;
pub mod rng;
pub mod sde_flow;
pub mod spectral;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{GridFunction, SpaceGrid, TimeGrid};
pub use ito_tanaka::ItoTanakaMap;
pub use moduli::{Modulus, ModulusFamily, RegularityClass};
pub use sde_flow::{DriftKind, DriftSpec, FlowConfig, FlowEnsemble};
pub use transport::{InitialDatum, StochasticSum, TestFunction, TransportMethod};
