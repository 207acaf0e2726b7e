//! Hardware-free FatBeacon beacons.
//!
//! A FatBeacon serves a small self-contained web page directly over a
//! Bluetooth connection instead of advertising a URL that needs the
//! Internet to resolve. This crate implements the whole pipeline without
//! radio hardware:
//!
//! - [`bundler`] turns an HTML document with external CSS/JS/images into
//!   one atomic document and generates fixed-size test corpora,
//! - [`frames`] encodes and decodes the advertisement packets (classic
//!   compressed-URL frames and the FatBeacon title frame),
//! - [`transfer`] is the connection-oriented chunked content transfer with
//!   its session state machine and nanosecond timing,
//! - [`sim`] models the radio link (path loss, packet error rate, seeded
//!   retransmissions) and the closed-form baseline protocols,
//! - [`bench`] runs measurement campaigns over the simulator and
//!   aggregates them into reports,
//! - [`loopback`] stands in for the radio: UDP datagrams carry
//!   advertisements, a TCP stream carries the content.

pub mod bench;
pub mod bundler;
pub mod frames;
pub mod loopback;
pub mod sim;
pub mod transfer;
