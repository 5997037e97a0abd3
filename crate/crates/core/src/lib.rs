pub mod compute;
pub mod des;
pub mod io;
pub mod network;
pub mod orchestration;
pub mod trace;
pub mod workflow;
