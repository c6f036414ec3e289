pub mod oracles;
pub mod study;
