pub mod builder;
pub mod certs;
pub mod client;
pub mod clock;
pub mod doprf;
pub mod group;
pub mod hashdb;
pub mod keyserver;
pub mod lifecycle;
pub mod sharing;
pub mod simnet;
pub mod table;
pub mod transport;
pub mod windows;
pub mod wire;
