//! Virtual-platform bridge: a discrete-event simulation kernel with typed
//! properties, a framed TCP remote-control protocol, and an FMI 3.0
//! Co-Simulation adapter that drives the platform from an import tool.

pub mod adapter;
pub mod client;
pub mod fmi;
pub mod fmi_target;
pub mod harness;
pub mod kernel;
pub mod model_description;
pub mod packager;
pub mod property;
pub mod reference_vp;
pub mod rsp;
pub mod server;
pub mod time;
pub mod vsp;

pub use kernel::Kernel;
pub use property::{PropertyKey, PropertyValue, ValueType};
pub use time::SimTime;
