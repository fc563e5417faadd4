//! Seeded random streams. A single root seed is split into named,
//! independent ChaCha streams so each stage is reproducible on its own.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Dataset,
    Fit,
    Sample,
    Reference,
    /// Numbered sub-stream, e.g. one per chain.
    Chain(u32),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Dataset => 1,
            Stream::Fit => 2,
            Stream::Sample => 3,
            Stream::Reference => 4,
            Stream::Chain(k) => (1 << 32) | u64::from(k),
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}
