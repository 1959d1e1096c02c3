pub mod crypto;
pub mod cryptogram;
pub mod energy;
pub mod entities;
pub mod netsim;
pub mod report;
pub mod types;
pub mod wire;
