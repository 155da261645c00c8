pub mod allocation;
pub mod assoc;
pub mod channel;
pub mod cluster;
pub mod geom;
pub mod io;
pub mod mobility;
pub mod orchestrator;
pub mod predict;
pub mod scenario;
pub mod trajectory;
