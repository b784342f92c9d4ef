//! Named `f32` parameter arrays with role tags and a content checksum.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Which part of the system a parameter belongs to. Derived from the first
/// dotted component of the parameter name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Base,
    Lst,
    Preview,
    Residual,
    Joint,
    TaskProxy,
    /// Optimizer state (`opt.*`).
    Optimizer,
    /// Run bookkeeping: loss weights, schedule position, metrics (`meta.*`).
    Meta,
}

impl Role {
    pub const MODEL: [Role; 6] = [
        Role::Base,
        Role::Lst,
        Role::Preview,
        Role::Residual,
        Role::Joint,
        Role::TaskProxy,
    ];

    pub fn of(name: &str) -> Option<Role> {
        let prefix = name.split('.').next()?;
        Some(match prefix {
            "base" => Role::Base,
            "lst" => Role::Lst,
            "preview" => Role::Preview,
            "residual" => Role::Residual,
            "joint" => Role::Joint,
            "taskproxy" => Role::TaskProxy,
            "opt" => Role::Optimizer,
            "meta" => Role::Meta,
            _ => return None,
        })
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Role::Base => "base",
            Role::Lst => "lst",
            Role::Preview => "preview",
            Role::Residual => "residual",
            Role::Joint => "joint",
            Role::TaskProxy => "taskproxy",
            Role::Optimizer => "opt",
            Role::Meta => "meta",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

impl Param {
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Insertion-ordered parameter collection with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f32>) -> Result<usize> {
        let role = Role::of(name)
            .ok_or_else(|| Error::Invalid(format!("parameter `{name}` has no known role prefix")))?;
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "parameter `{name}` declares {shape:?} but holds {} values",
                values.len()
            )));
        }
        let idx = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            role,
            shape: shape.to_vec(),
            values,
        });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// Insert or overwrite.
    pub fn set(&mut self, name: &str, shape: &[usize], values: Vec<f32>) -> Result<usize> {
        match self.index.get(name) {
            Some(&idx) => {
                let p = &mut self.params[idx];
                p.shape = shape.to_vec();
                p.values = values;
                Ok(idx)
            }
            None => self.insert(name, shape, values),
        }
    }

    pub fn init_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<usize> {
        let n: usize = shape.iter().product();
        let values = (0..n)
            .map(|_| rng.gen_range(-bound..=bound) as f32)
            .collect();
        self.insert(name, shape, values)
    }

    pub fn init_constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<usize> {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub(crate) fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn param(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn has_role(&self, role: Role) -> bool {
        self.params.iter().any(|p| p.role == role)
    }

    /// CRC-32 over names, shapes and value bytes of every parameter, in
    /// name order.
    pub fn hash(&self) -> u32 {
        self.hash_filtered(|_| true)
    }

    /// Checksum restricted to the given roles.
    pub fn role_hash(&self, roles: &[Role]) -> u32 {
        self.hash_filtered(|p| roles.contains(&p.role))
    }

    /// Checksum over every model role, excluding optimizer state and
    /// bookkeeping.
    pub fn model_hash(&self) -> u32 {
        self.role_hash(&Role::MODEL)
    }

    fn hash_filtered(&self, keep: impl Fn(&Param) -> bool) -> u32 {
        let mut order: Vec<&Param> = self.params.iter().filter(|p| keep(p)).collect();
        order.sort_by(|a, b| a.name.cmp(&b.name));
        let mut h = crc32fast::Hasher::new();
        for p in order {
            h.update(&(p.name.len() as u32).to_le_bytes());
            h.update(p.name.as_bytes());
            h.update(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                h.update(&(d as u32).to_le_bytes());
            }
            for v in &p.values {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    /// Copy of the parameters carrying one of `roles`.
    pub fn restricted(&self, roles: &[Role]) -> ParameterStore {
        let mut out = ParameterStore::new();
        for p in self.params.iter().filter(|p| roles.contains(&p.role)) {
            out.insert(&p.name, &p.shape, p.values.clone())
                .expect("names unique in source store");
        }
        out
    }

    /// Overwrite or add every parameter of `other` whose role is in `roles`.
    pub fn merge_from(&mut self, other: &ParameterStore, roles: &[Role]) -> Result<()> {
        for p in other.params.iter().filter(|p| roles.contains(&p.role)) {
            self.set(&p.name, &p.shape, p.values.clone())?;
        }
        Ok(())
    }

    /// Drop one parameter by name; returns whether it existed.
    pub fn remove(&mut self, name: &str) -> bool {
        let before = self.params.len();
        self.retain(|p| p.name != name);
        before != self.params.len()
    }

    pub fn remove_roles(&mut self, roles: &[Role]) {
        self.retain(|p| !roles.contains(&p.role));
    }

    fn retain(&mut self, keep: impl Fn(&Param) -> bool) {
        let kept: Vec<Param> = self
            .params
            .drain(..)
            .filter(|p| keep(p))
            .collect();
        self.index = kept
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        self.params = kept;
    }
}

/// Gradient accumulator aligned with a [`ParameterStore`]'s indices.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn for_store(store: &ParameterStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    /// Mutable gradient buffer for parameter `idx` of length `len`, created
    /// zeroed on first use.
    pub fn slot(&mut self, idx: usize, len: usize) -> &mut [f64] {
        if idx >= self.grads.len() {
            self.grads.resize(idx + 1, None);
        }
        self.grads[idx].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, idx: usize) -> Option<&[f64]> {
        self.grads.get(idx).and_then(|g| g.as_deref())
    }

    pub fn add(&mut self, other: &Gradients) {
        for (idx, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                let slot = self.slot(idx, g.len());
                for (a, b) in slot.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= k;
            }
        }
    }

    /// Euclidean norm of the gradients of parameters carrying `role`.
    pub fn role_norm(&self, store: &ParameterStore, role: Role) -> f64 {
        self.grads
            .iter()
            .enumerate()
            .filter(|(i, _)| *i < store.len() && store.param(*i).role == role)
            .filter_map(|(_, g)| g.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
