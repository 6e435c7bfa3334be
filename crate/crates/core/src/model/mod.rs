//! Attention-conditioned super-resolution GAN built on [`crate::diffnet`].

mod attention;
mod config;
mod networks;
mod train;

pub use attention::{
    d_spatial_attention, minmax_backward, minmax_normalize, psa, psa_backward, psa_forward, sa_backward,
    sa_forward, PsaCache, PsaParams, SaCache,
};
pub use config::{read_manifest, write_manifest, SiranConfig};
pub use networks::{build_discriminator, build_generator, build_siran, condition_prior, generator_forward, DiscriminatorModel, GeneratorModel};
pub use train::{SiranTrainer, StepOutcome, TrainBatch, TrainConfig};
