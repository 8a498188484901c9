pub mod error;
pub mod kronecker;
pub mod linear;
pub mod mm;
pub mod numerics;
pub mod rank_one;
pub mod spiked;
pub mod toeplitz;
pub mod tyler;

#[cfg(test)]
mod test_support;
