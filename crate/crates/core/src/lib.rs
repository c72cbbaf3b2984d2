//! Circuit-QED modeling toolkit: transmon spectra, dispersive coupling to a
//! readout cavity, decoherence rates, thermal photon budgets, fitting of
//! spectroscopy and coherence data, single-shot readout analysis, and
//! Floquet quasienergies under a charge drive.
//!
//! Frequencies and rates are in Hz (cycles per second) throughout; angular
//! factors of 2π appear only where a physical time or phase is formed.

pub mod cavity;
pub mod fit;
pub mod floquet;
pub mod rates;
pub mod readout;
pub mod thermal;
pub mod transmon;
pub mod units;

#[cfg(test)]
mod properties;
