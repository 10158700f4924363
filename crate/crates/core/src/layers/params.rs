use crate::data::Rng;
use crate::engine::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named, ordered parameter list. Order is construction order and is what
/// checkpoints and optimizer state follow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn push(&mut self, name: String, value: Tensor) -> ParamId {
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    /// Checksum over names and values, order-sensitive.
    pub fn checksum(&self) -> u64 {
        let crc = crc::Crc::<u64>::new(&crc::CRC_64_ECMA_182);
        let mut d = crc.digest();
        for p in &self.params {
            d.update(p.name.as_bytes());
            d.update(&p.value.checksum().to_le_bytes());
        }
        d.finalize()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `±1/√fan_in`, the usual framework default for conv weights
    /// and biases (He-uniform with negative slope √5).
    FanInUniform,
    Zero,
}

/// Allocates parameters under a dotted name prefix, drawing initial values
/// from one seeded stream in construction order.
pub struct Builder {
    pub(crate) store: ParamStore,
    rng: Rng,
    prefix: Vec<String>,
}

impl Builder {
    pub fn new(seed: u64) -> Self {
        Builder { store: ParamStore::default(), rng: Rng::new(seed), prefix: Vec::new() }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    pub(crate) fn add(&mut self, name: &str, shape: [usize; 4], fan_in: usize, init: Init) -> ParamId {
        let full = self.prefix.iter().map(String::as_str).chain([name]).collect::<Vec<_>>().join(".");
        let value = match init {
            Init::Zero => Tensor::zeros(shape),
            Init::FanInUniform => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                let rng = &mut self.rng;
                Tensor::from_fn(shape, |_| rng.range(-bound, bound) as f32)
            }
        };
        self.store.push(full, value)
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}
