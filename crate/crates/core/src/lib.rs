//! Simulation and analysis of double electron-electron resonance between
//! two NV-center ensembles.
//!
//! * [`spin`]: two-level propagators, crosstalk and the operator-order phase jump
//! * [`nv`]: resonance lines, revivals, echo envelope and readout
//! * [`sequence`]: pulse-sequence model and builders
//! * [`simulate`]: four-phase readout of echo and DEER sequences
//! * [`bath`]: dipolar decay law and Monte-Carlo spin bath
//! * [`tomography`]: state tomography from the readout channels
//! * [`fit`]: least-squares fits

pub mod bath;
pub mod fit;
pub mod nv;
pub mod rng;
pub mod sequence;
pub mod simulate;
pub mod spin;
pub mod tomography;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Spin(#[from] spin::SpinError),
    #[error(transparent)]
    Nv(#[from] nv::NvError),
    #[error(transparent)]
    Sequence(#[from] sequence::SequenceError),
    #[error(transparent)]
    Sim(#[from] simulate::SimError),
    #[error(transparent)]
    Bath(#[from] bath::BathError),
    #[error(transparent)]
    Tomography(#[from] tomography::TomographyError),
    #[error(transparent)]
    Fit(#[from] fit::FitError),
}
