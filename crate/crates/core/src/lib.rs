pub mod control;
pub mod dq;
pub mod experiment;
pub mod generate;
pub mod io;
pub mod linalg;
pub mod linear;
pub mod poset;
pub mod sim;
pub mod topology;
