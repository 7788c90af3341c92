//! Droplet-based molecular communication: channel simulator and receiver.
//!
//! The crate models a microfluidic link in which droplets carry bits, and a
//! dual-sensor receiver (an infrared photodiode and a six-channel colour
//! sensor a fixed distance downstream) that recovers the bits, the droplet
//! colour and dye concentration, and the droplet speed and length.

pub mod channel;
pub mod error;
pub mod harness;
pub mod io;
pub mod ook;
pub mod sizing;
pub mod spectral;
pub mod types;

pub use channel::{simulate, transmittance, SimulatedPassage, Simulation};
pub use error::{Error, Result};
pub use ook::{decode, encode, DecodeReport, DropletTemplate, OokParams};
pub use types::{
    ChannelConfig, DropletEvent, DropletSchedule, InkSpec, IrTrace, SensorOrder, SpectralSample,
    SpectralTrace,
};
