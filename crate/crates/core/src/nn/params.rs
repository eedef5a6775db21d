use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Handle to one tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    /// Parameter group: the name up to the first `.`.
    pub fn group(&self) -> &str {
        group_of(&self.name)
    }
}

pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Flat store of named parameter tensors plus a per-group freezing map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
    trainable: BTreeMap<String, bool>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor {name}");
        assert!(
            self.tensors.iter().all(|t| t.name != name),
            "duplicate tensor name {name}"
        );
        self.trainable.entry(group_of(&name).to_string()).or_insert(true);
        self.tensors.push(Tensor {
            name,
            shape: shape.to_vec(),
            data,
        });
        ParamId(self.tensors.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut impl Rng) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, shape, data)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn groups(&self) -> Vec<String> {
        self.trainable.keys().cloned().collect()
    }

    pub fn freezing_map(&self) -> &BTreeMap<String, bool> {
        &self.trainable
    }

    pub fn set_trainable(&mut self, group: &str, trainable: bool) {
        if let Some(flag) = self.trainable.get_mut(group) {
            *flag = trainable;
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[self.tensors[id.0].group()]
    }

    pub fn group_is_trainable(&self, group: &str) -> bool {
        self.trainable.get(group).copied().unwrap_or(false)
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn count(&self) -> ParamCount {
        let mut per_group = BTreeMap::new();
        let (mut trainable, mut frozen) = (0, 0);
        for t in &self.tensors {
            let n = t.data.len();
            *per_group.entry(t.group().to_string()).or_insert(0) += n;
            if self.trainable[t.group()] {
                trainable += n;
            } else {
                frozen += n;
            }
        }
        ParamCount {
            total: trainable + frozen,
            trainable,
            frozen,
            per_group,
        }
    }

    /// Copies tensors whose names start with `prefix` from `other`, where
    /// the name after the prefix matches. Returns how many were copied.
    pub fn copy_from(&mut self, other: &ParamSet, src_prefix: &str, dst_prefix: &str) -> Result<usize, String> {
        let mut copied = 0;
        for src in other.tensors.iter().filter(|t| t.name.starts_with(src_prefix)) {
            let name = format!("{dst_prefix}{}", &src.name[src_prefix.len()..]);
            let id = self
                .find(&name)
                .ok_or_else(|| format!("no destination tensor `{name}`"))?;
            let dst = &mut self.tensors[id.0];
            if dst.shape != src.shape {
                return Err(format!(
                    "tensor `{name}`: shape {:?} vs {:?}",
                    dst.shape, src.shape
                ));
            }
            dst.data.copy_from_slice(&src.data);
            copied += 1;
        }
        Ok(copied)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub frozen: usize,
    pub per_group: BTreeMap<String, usize>,
}

/// Gradient buffers aligned with the tensors of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.data {
            for x in g.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}
