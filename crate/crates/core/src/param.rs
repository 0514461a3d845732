//! Named parameter plumbing shared by the attention modules, blocks and the
//! model.
//!
//! Every layer describes its parameters once, through [`ParamSource`]. At
//! construction the source is an [`Initializer`], which materializes seeded
//! tensors in declaration order; during a forward pass it is a [`Binder`],
//! which resolves the same names to tape variables.

use std::collections::HashMap;
use std::marker::PhantomData;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::init::Init;
use crate::tensor::{Element, Tape, Tensor, Var};

pub trait ParamSource<T: Element> {
    /// Resolves (or creates) the parameter `name` with the given extents.
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var>;
}

/// Joins a dotted parameter path.
pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Creates parameters on a tape from a seeded generator, remembering names
/// and declaration order.
pub struct Initializer<'t, T: Element> {
    tape: &'t mut Tape<T>,
    rng: ChaCha8Rng,
    vars: IndexMap<String, Var>,
}

impl<'t, T: Element> Initializer<'t, T> {
    pub fn new(tape: &'t mut Tape<T>, seed: u64) -> Self {
        Initializer {
            tape,
            rng: ChaCha8Rng::seed_from_u64(seed),
            vars: IndexMap::new(),
        }
    }

    /// Declared parameters in order.
    pub fn vars(&self) -> &IndexMap<String, Var> {
        &self.vars
    }

    /// Copies every declared parameter out of the tape.
    pub fn into_tensors(self) -> IndexMap<String, Tensor<T>> {
        let tape = self.tape;
        self.vars
            .into_iter()
            .map(|(name, var)| (name, tape.value(var).clone().with_requires_grad(true)))
            .collect()
    }
}

impl<T: Element> ParamSource<T> for Initializer<'_, T> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let tensor = init.materialize::<T, _>(shape, &mut self.rng)?;
        let var = self.tape.param(tensor);
        self.vars.insert(name.to_string(), var);
        Ok(var)
    }
}

/// Resolves parameter names to variables already recorded on a tape.
#[derive(Debug, Clone)]
pub struct Binder<T> {
    vars: HashMap<String, (Var, Vec<usize>)>,
    _element: PhantomData<T>,
}

impl<T: Element> Default for Binder<T> {
    fn default() -> Self {
        Binder {
            vars: HashMap::new(),
            _element: PhantomData,
        }
    }
}

impl<T: Element> Binder<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, var: Var, shape: Vec<usize>) {
        self.vars.insert(name.into(), (var, shape));
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).map(|(v, _)| *v)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

impl<T: Element> ParamSource<T> for Binder<T> {
    fn param(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Var> {
        let (var, have) = self
            .vars
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
        if have != shape {
            return Err(Error::dim(format!(
                "parameter {name} has shape {have:?}, layer expects {shape:?}"
            )));
        }
        Ok(*var)
    }
}

impl<T: Element> Binder<T> {
    /// Binds each tensor as a tape leaf. Trainable leaves receive gradients.
    pub fn bind_all(tape: &mut Tape<T>, params: &IndexMap<String, Tensor<T>>, trainable: bool) -> Self {
        let mut binder = Binder::new();
        for (name, t) in params {
            let var = if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            binder.insert(name.clone(), var, t.shape().to_vec());
        }
        binder
    }

    /// Binds names to variables that are already on a tape, in order.
    pub fn from_vars(tape: &Tape<T>, names: &[String], vars: &[Var]) -> Self {
        let mut binder = Binder::new();
        for (name, var) in names.iter().zip(vars) {
            binder.insert(name.clone(), *var, tape.shape(*var).to_vec());
        }
        binder
    }
}

/// Runs a declaration against a scratch tape and returns the seeded tensors.
pub fn initialize<T: Element, P>(
    seed: u64,
    declare: impl FnOnce(&mut Initializer<'_, T>) -> Result<P>,
) -> Result<IndexMap<String, Tensor<T>>> {
    let mut tape = Tape::new();
    let mut init = Initializer::new(&mut tape, seed);
    declare(&mut init)?;
    Ok(init.into_tensors())
}
