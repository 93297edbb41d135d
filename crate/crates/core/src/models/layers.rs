use rand::Rng;

use crate::numeric::{Graph, NodeId, NumericError, ParameterStore, Tensor};

type Result<T> = std::result::Result<T, NumericError>;

/// How a parameter is filled at initialization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Uniform(f64),
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tensor {
        let n: usize = self.shape.iter().product();
        let data = match self.init {
            Init::Uniform(bound) => (0..n).map(|_| bound * (2.0 * rng.random::<f64>() - 1.0)).collect(),
            Init::Const(v) => vec![v; n],
        };
        Tensor::new(self.shape.clone(), data).expect("spec shape")
    }
}

/// Fill a fresh store from specs in declaration order.
pub fn init_store(specs: &[ParamSpec], rng: &mut impl Rng) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    for s in specs {
        store.insert(&s.name, s.sample(rng))?;
    }
    Ok(store)
}

/// Every spec must be present with the declared shape.
pub fn check_store(specs: &[ParamSpec], store: &ParameterStore) -> std::result::Result<(), String> {
    for s in specs {
        match store.get(&s.name) {
            None => return Err(format!("missing parameter `{}`", s.name)),
            Some(t) if t.shape() != s.shape.as_slice() => {
                return Err(format!(
                    "parameter `{}` has shape {:?}, architecture expects {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                ))
            }
            _ => {}
        }
    }
    if store.len() != specs.len() {
        return Err(format!(
            "checkpoint holds {} parameters, architecture declares {}",
            store.len(),
            specs.len()
        ));
    }
    Ok(())
}

/// Affine map `x W + b` applied to every row of `x`, with an optional fixed
/// 0/1 connectivity mask on `W`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub inputs: usize,
    pub outputs: usize,
    mask: Option<Tensor>,
    weight_init: Init,
    bias_init: Init,
}

impl Linear {
    pub fn new(prefix: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: Some(format!("{prefix}.b")),
            inputs,
            outputs,
            mask: None,
            // He-uniform, suited to ReLU stacks
            weight_init: Init::Uniform((6.0 / inputs.max(1) as f64).sqrt()),
            bias_init: Init::Const(0.0),
        }
    }

    pub fn masked(mut self, mask: Tensor) -> Self {
        debug_assert_eq!(mask.shape(), [self.inputs, self.outputs]);
        self.mask = Some(mask);
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn with_weight_init(mut self, init: Init) -> Self {
        self.weight_init = init;
        self
    }

    pub fn with_bias_init(mut self, init: Init) -> Self {
        self.bias_init = init;
        self
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut specs = vec![ParamSpec::new(&self.weight, &[self.inputs, self.outputs], self.weight_init)];
        if let Some(b) = &self.bias {
            specs.push(ParamSpec::new(b, &[1, self.outputs], self.bias_init));
        }
        specs
    }

    pub fn weight_node(&self, g: &Graph, store: &ParameterStore) -> Result<NodeId> {
        let w = g.param(store, &self.weight)?;
        match &self.mask {
            Some(m) => g.mul(w, g.constant(m.clone())?),
            None => Ok(w),
        }
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, x: NodeId) -> Result<NodeId> {
        let w = self.weight_node(g, store)?;
        let y = g.matmul(x, w)?;
        match &self.bias {
            Some(b) => g.add(y, g.param(store, b)?),
            None => Ok(y),
        }
    }

    /// Masked weight as a plain tensor, for graph-free inference.
    pub fn effective_weight(&self, store: &ParameterStore) -> Result<Tensor> {
        let w = store
            .get(&self.weight)
            .ok_or_else(|| NumericError::UnknownParam(self.weight.clone()))?;
        Ok(match &self.mask {
            Some(m) => {
                let data = w.data().iter().zip(m.data()).map(|(a, b)| a * b).collect();
                Tensor::new(w.shape().to_vec(), data)?
            }
            None => w.clone(),
        })
    }
}

/// Stack of [`Linear`] layers with ReLU between them. When `relu_last` is
/// false the final layer stays linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    relu_last: bool,
}

impl Mlp {
    pub fn new(prefix: &str, inputs: usize, widths: &[usize], relu_last: bool) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = inputs;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(&format!("{prefix}.{i}"), prev, w));
            prev = w;
        }
        Self { layers, relu_last }
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn last_mut(&mut self) -> Option<&mut Linear> {
        self.layers.last_mut()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(Linear::specs).collect()
    }

    pub fn forward(&self, g: &Graph, store: &ParameterStore, mut x: NodeId) -> Result<NodeId> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i < last || self.relu_last {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }
}
