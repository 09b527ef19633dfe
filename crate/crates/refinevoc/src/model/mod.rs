//! The refiner generator and its two adversaries.

pub mod discriminator;
pub mod generator;
pub mod layers;

pub use discriminator::{
    build_mpd, build_mrd, DiscriminatorConfig, MultiPeriodDiscriminator,
    MultiResolutionDiscriminator, StftResolution,
};
pub use generator::{build_generator, Generator, GeneratorConfig};
