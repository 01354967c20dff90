use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use crate::{Error, Result, Tensor};

/// `(fan_in, fan_out)` of a weight shape. Convolution kernels are
/// `(k, k, cin, cout)`; matrices are `(in, out)`.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [a, b] => (*a, *b),
        _ => {
            let n = shape.len();
            let receptive: usize = shape[..n - 2].iter().product();
            (receptive * shape[n - 2], receptive * shape[n - 1])
        }
    }
}

/// Xavier/Glorot uniform initialization, `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Shape(format!("cannot initialize shape {shape:?}")));
    }
    let (fi, fo) = fans(shape);
    let a = (6.0 / (fi + fo) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
    Tensor::from_vec(shape, data)
}

/// FNV-1a of `name`, mixed with `seed`.
pub fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Registers parameters under a name prefix, each seeded from its own name.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    seed: u64,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        ParamBuilder {
            store,
            prefix: String::new(),
            seed,
        }
    }

    /// A builder whose names are prefixed with `scope.`.
    pub fn scope(&mut self, scope: &str) -> ParamBuilder<'_> {
        ParamBuilder {
            prefix: format!("{}{scope}.", self.prefix),
            store: self.store,
            seed: self.seed,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn xavier(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let full = format!("{}{name}", self.prefix);
        let t = xavier_init(shape, name_seed(self.seed, &full))?;
        Ok(self.store.add(full, t))
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        let full = format!("{}{name}", self.prefix);
        self.store.add(full, Tensor::full(shape, value))
    }
}
