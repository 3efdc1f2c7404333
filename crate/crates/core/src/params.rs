//! Named parameter tensors, their initialization and binding into a graph.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Parameters keyed by a stable dotted path, iterated in key order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::State(format!("parameter {name} registered twice")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bindings {
        Bindings { vars: self.tensors.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect() }
    }

    /// Registers every tensor as a constant (inference, no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Bindings {
        Bindings { vars: self.tensors.iter().map(|(k, v)| (k.clone(), g.constant(v.clone()))).collect() }
    }

    /// One PMT1 file per parameter plus `params.txt` listing names and shapes.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut listing = String::new();
        for (name, t) in &self.tensors {
            t.save(dir.join(format!("{name}.pmt")))?;
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            listing.push_str(&format!("{name} {}\n", shape.join("x")));
        }
        fs::write(dir.join("params.txt"), listing)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let listing = fs::read_to_string(dir.join("params.txt"))?;
        let mut store = ParamStore::new();
        for line in listing.lines().filter(|l| !l.trim().is_empty()) {
            let name = line.split_whitespace().next().unwrap_or_default();
            store.insert(name, Tensor::load(dir.join(format!("{name}.pmt")))?)?;
        }
        Ok(store)
    }
}

/// Graph variables of a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn scope(&self, prefix: &str) -> Scope<'_> {
        Scope { bindings: self, prefix: prefix.to_string() }
    }
}

impl FromIterator<(String, Var)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Bindings { vars: iter.into_iter().collect() }
    }
}

/// A prefix view into [`Bindings`].
#[derive(Clone, Debug)]
pub struct Scope<'a> {
    bindings: &'a Bindings,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.bindings.get(&join(&self.prefix, name))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.bindings.vars.get(&join(&self.prefix, name)).copied()
    }

    pub fn child(&self, name: &str) -> Scope<'a> {
        Scope { bindings: self.bindings, prefix: join(&self.prefix, name) }
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Seeded initializer that registers parameters under a prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore<f32>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, rng: &'a mut ChaCha8Rng) -> Self {
        Init { store, rng, prefix: String::new() }
    }

    pub fn child(&mut self, name: &str) -> Init<'_> {
        Init { store: self.store, rng: self.rng, prefix: join(&self.prefix, name) }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn tensor(&mut self, name: &str, t: Tensor<f32>) -> Result<()> {
        self.store.insert(join(&self.prefix, name), t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.tensor(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.tensor(name, Tensor::full(shape, 1.0))
    }

    /// Draws uniformly from `±1/sqrt(fan_in)` without registering.
    pub fn sample_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<f32> {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let rng = &mut *self.rng;
        Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let t = self.sample_uniform(shape, fan_in);
        self.tensor(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f32) -> Result<()> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Argument(e.to_string()))?;
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| dist.sample(rng));
        self.tensor(name, t)
    }

    /// `weight [out, in]` and `bias [out]`.
    pub fn linear(&mut self, name: &str, inp: usize, out: usize, bias: bool) -> Result<()> {
        let mut c = self.child(name);
        c.uniform("weight", &[out, inp], inp)?;
        if bias {
            c.uniform("bias", &[out], inp)?;
        }
        Ok(())
    }

    /// `weight [out, in, k, k]` and `bias [out]`.
    pub fn conv(&mut self, name: &str, inp: usize, out: usize, k: usize) -> Result<()> {
        let mut c = self.child(name);
        c.uniform("weight", &[out, inp, k, k], inp * k * k)?;
        c.uniform("bias", &[out], inp * k * k)
    }

    pub fn zero_conv(&mut self, name: &str, inp: usize, out: usize, k: usize) -> Result<()> {
        let mut c = self.child(name);
        c.zeros("weight", &[out, inp, k, k])?;
        c.zeros("bias", &[out])
    }

    pub fn zero_linear(&mut self, name: &str, inp: usize, out: usize) -> Result<()> {
        let mut c = self.child(name);
        c.zeros("weight", &[out, inp])?;
        c.zeros("bias", &[out])
    }

    /// Group-norm affine: `scale` ones and `shift` zeros.
    pub fn norm(&mut self, name: &str, channels: usize) -> Result<()> {
        let mut c = self.child(name);
        c.ones("scale", &[channels])?;
        c.zeros("shift", &[channels])
    }
}

/// Fresh generator for parameter initialization.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
