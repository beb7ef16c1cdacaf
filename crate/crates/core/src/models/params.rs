use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::autodiff::{CheckpointFile, Real, RunningStats, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamInit {
    /// Uniform on `±sqrt(6 / fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

/// Named trainable tensors plus the running statistics of each normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
    index: HashMap<String, usize>,
    norm_names: Vec<String>,
    running: Vec<RunningStats>,
    norm_index: HashMap<String, usize>,
}

impl ModelParams {
    /// Initializes every tensor in `specs` order from one seeded stream.
    pub fn init(specs: &[ParamSpec], norms: &[(String, usize)], seed: u64) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| match s.init {
                ParamInit::FanIn(fan_in) => {
                    let bound = (6.0 / fan_in as f64).sqrt() as f32;
                    Tensor::from_fn(&s.shape, |_| rng.gen_range(-bound..bound))
                }
                ParamInit::Zeros => Tensor::zeros(&s.shape),
                ParamInit::Ones => Tensor::filled(&s.shape, 1.0),
            })
            .collect();
        let names = specs.iter().map(|s| s.name.clone()).collect();
        let running = norms.iter().map(|(_, c)| RunningStats::new(*c)).collect();
        Self::assemble(names, tensors, norms.iter().map(|n| n.0.clone()).collect(), running)
    }

    fn assemble(
        names: Vec<String>,
        tensors: Vec<Tensor<f32>>,
        norm_names: Vec<String>,
        running: Vec<RunningStats>,
    ) -> Result<Self, ModelError> {
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(ModelError::InvalidConfig(format!("duplicate parameter {n}")));
            }
        }
        let mut norm_index = HashMap::new();
        for (i, n) in norm_names.iter().enumerate() {
            if norm_index.insert(n.clone(), i).is_some() {
                return Err(ModelError::InvalidConfig(format!("duplicate norm layer {n}")));
            }
        }
        Ok(Self {
            names,
            tensors,
            index,
            norm_names,
            running,
            norm_index,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub(crate) fn position(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub(crate) fn norm_position(&self, name: &str) -> usize {
        *self
            .norm_index
            .get(name)
            .unwrap_or_else(|| panic!("no norm layer named {name}"))
    }

    pub fn norm_names(&self) -> &[String] {
        &self.norm_names
    }

    pub fn running(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn total_parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a leaf on `tape`, in parameter order.
    pub fn bind<T: Real>(&self, tape: &Tape<T>) -> Vec<Var<T>> {
        self.tensors.iter().map(|t| tape.leaf(t.cast())).collect()
    }

    pub fn write_to(&self, ckpt: &mut CheckpointFile) {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            ckpt.push(format!("param/{n}"), t.clone());
        }
        for (n, r) in self.norm_names.iter().zip(&self.running) {
            let c = r.channels();
            ckpt.push(format!("norm/{n}/mean"), Tensor::new(&[c], r.mean.clone()).expect("len"));
            ckpt.push(format!("norm/{n}/var"), Tensor::new(&[c], r.var.clone()).expect("len"));
        }
    }

    /// Replaces values with those stored in `ckpt`, checking names and shapes.
    pub fn read_from(&mut self, ckpt: &CheckpointFile) -> Result<(), ModelError> {
        let err = |e: crate::autodiff::TensorError| ModelError::Checkpoint(e.to_string());
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            *t = ckpt.require(&format!("param/{n}"), t.shape()).map_err(err)?.clone();
        }
        for (n, r) in self.norm_names.iter().zip(self.running.iter_mut()) {
            let c = [r.channels()];
            r.mean = ckpt.require(&format!("norm/{n}/mean"), &c).map_err(err)?.data().to_vec();
            r.var = ckpt.require(&format!("norm/{n}/var"), &c).map_err(err)?.data().to_vec();
        }
        Ok(())
    }
}
