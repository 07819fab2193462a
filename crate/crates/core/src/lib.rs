//! Simulator for heralded-entanglement quantum networks: emitter physics,
//! photonic links, spin noise and a three-node teleportation protocol.

pub mod emitter;
pub mod hilbert;
pub mod photonic;
pub mod protocol;
pub mod spin_noise;

pub type Matrix = hilbert::Matrix<f64>;
pub type State = hilbert::State<f64>;
pub type Ket = hilbert::Ket<f64>;
pub type Channel = hilbert::Channel<f64>;
