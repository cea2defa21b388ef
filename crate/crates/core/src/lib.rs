pub mod channel;
pub mod detection;
pub mod pll;
pub mod states;
