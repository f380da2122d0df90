use std::collections::HashMap;

use crate::cmnist::rng::DetRng;
use crate::diffcore::{Real, Tape, Tensor, Var};

/// Which network a parameter belongs to; optimizers and gating tests
/// select parameters by group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Generator,
    StyleEncoder,
    Mapping,
    Discriminator,
    Mappers,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Generator,
        Group::StyleEncoder,
        Group::Mapping,
        Group::Discriminator,
        Group::Mappers,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a parameter inside its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Kernel,
    DenseWeight,
    Bias,
    /// Weight matrix of a dense layer producing demodulation scales.
    StyleWeight,
    /// Bias of a dense layer producing demodulation scales.
    StyleBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub kind: Kind,
    pub value: Tensor,
}

/// Flat, ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn count(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    pub(crate) fn add(&mut self, name: String, group: Group, kind: Kind, value: Tensor) -> ParamId {
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            group,
            kind,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Registers every parameter on `tape`, tracking those whose group
    /// satisfies `trainable`.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, trainable: impl Fn(Group) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.cast::<T>(), trainable(p.group)))
            .collect();
        Bound { vars }
    }
}

/// Tape handles of a [`ParamStore`], index-aligned with it.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Points one parameter at a different tape value.
    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = var;
    }
}

/// Helper that names and initializes parameters while networks are built.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: DetRng,
    pub group: Group,
    pub prefix: String,
}

impl Init<'_> {
    fn name(&self, local: &str) -> String {
        format!("{}.{}", self.prefix, local)
    }

    /// He-normal kernel `[kh, kw, cin, cout]`.
    pub fn kernel(&mut self, local: &str, k: usize, cin: usize, cout: usize) -> ParamId {
        let std = (2.0 / (k * k * cin) as f32).sqrt();
        let rng = &mut self.rng;
        let t = Tensor::from_fn(&[k, k, cin, cout], |_| rng.normal() * std);
        self.store.add(self.name(local), self.group, Kind::Kernel, t)
    }

    /// Kernel with a caller-supplied initial value.
    pub fn kernel_fixed(&mut self, local: &str, value: Tensor) -> ParamId {
        self.store.add(self.name(local), self.group, Kind::Kernel, value)
    }

    /// He-normal weight and zero bias of a dense layer.
    pub fn dense(&mut self, local: &str, din: usize, dout: usize) -> (ParamId, ParamId) {
        let std = (2.0 / din as f32).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[din, dout], |_| rng.normal() * std);
        let w = self
            .store
            .add(self.name(&format!("{local}.w")), self.group, Kind::DenseWeight, w);
        let b = self.store.add(
            self.name(&format!("{local}.b")),
            self.group,
            Kind::Bias,
            Tensor::zeros(&[dout]),
        );
        (w, b)
    }

    /// Style-to-scale dense layer: small uniform weights, bias of ones, so
    /// a zero style yields unit modulation.
    pub fn style_dense(&mut self, local: &str, din: usize, dout: usize) -> (ParamId, ParamId) {
        let a = 1.0 / (din as f32).sqrt();
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&[din, dout], |_| rng.uniform_range(-a, a));
        let w = self
            .store
            .add(self.name(&format!("{local}.w")), self.group, Kind::StyleWeight, w);
        let b = self.store.add(
            self.name(&format!("{local}.b")),
            self.group,
            Kind::StyleBias,
            Tensor::full(&[dout], 1.0),
        );
        (w, b)
    }

    pub fn scope(&mut self, local: &str) -> Init<'_> {
        let tag = self.rng.next_u64();
        let prefix = self.name(local);
        Init {
            store: self.store,
            rng: DetRng::new(tag),
            group: self.group,
            prefix,
        }
    }
}
