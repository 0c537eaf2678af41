//! A simulated 12-channel scent dispenser.
//!
//! The [`Device`] releases one channel at a time against an injectable
//! [`Clock`]. [`serve`] exposes it over a newline-delimited text protocol
//! (see [`protocol`]) and [`DeviceClient::play_schedule`] drives a full
//! dispensing cycle from a [`aromagen_core::DispenseSchedule`].

mod client;
mod clock;
mod device;
pub mod protocol;
mod server;

pub use client::{ClientError, DeviceClient, DispenseReport, ReportStep};
pub use clock::{Clock, ManualClock, SystemClock, VirtualClock};
pub use device::{disjoint, ConnId, Device, Status};
pub use protocol::{
    Command, ErrorCode, Interval, ProtocolError, Reply, CHANNELS, DEVICE_NAME, MAX_DISPENSE_MS,
    MAX_LINE, MAX_PLAY_STEPS,
};
pub use server::{handle_connection, serve, Simulator};
