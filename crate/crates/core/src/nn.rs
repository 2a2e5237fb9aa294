//! Parameters, initialization and the small layer zoo the network is
//! assembled from.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoadError, Result};
use crate::tensor::{Scalar, Tensor};

/// Named trainable tensor with its Adam moment accumulators.
pub struct Parameter<T: Scalar> {
    name: String,
    tensor: Tensor<T>,
    pub(crate) adam_m: RefCell<Vec<T>>,
    pub(crate) adam_v: RefCell<Vec<T>>,
    pub(crate) step_count: Cell<u64>,
}

pub type Param<T> = Rc<Parameter<T>>;

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Param<T>> {
        let tensor = Tensor::variable(shape, data)?;
        let n = tensor.numel();
        Ok(Rc::new(Parameter {
            name: name.into(),
            tensor,
            adam_m: RefCell::new(vec![T::zero(); n]),
            adam_v: RefCell::new(vec![T::zero(); n]),
            step_count: Cell::new(0),
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count.get()
    }
}

/// Deterministic weight initializer (Kaiming fan-in normal). All draws are
/// taken in f64 so f32 and f64 models see identical values for a seed.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kaiming<T: Scalar>(&mut self, n: usize, fan_in: usize) -> Vec<T> {
        let std = (2.0 / fan_in as f64).sqrt();
        (0..n)
            .map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                T::of_f64(z * std)
            })
            .collect()
    }

    /// Bias init: uniform in +-1/sqrt(fan_in). Nonzero biases keep relu
    /// pre-activations off the exact kink even in dead regions.
    pub fn bias<T: Scalar>(&mut self, n: usize, fan_in: usize) -> Vec<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        (0..n)
            .map(|_| T::of_f64(self.rng.gen_range(-bound..bound)))
            .collect()
    }
}

pub struct Conv2dLayer<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl<T: Scalar> Conv2dLayer<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let fan_in = cin * k * k;
        let weight = Parameter::new(
            format!("{name}.weight"),
            &[cout, cin, k, k],
            init.kaiming(cout * fan_in, fan_in),
        )?;
        let bias = Parameter::new(format!("{name}.bias"), &[cout], init.bias(cout, fan_in))?;
        Ok(Conv2dLayer {
            weight,
            bias,
            stride,
            padding,
            dilation,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(
            self.weight.tensor(),
            self.bias.tensor(),
            self.stride,
            self.padding,
            self.dilation,
        )
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        out.push(Rc::clone(&self.weight));
        out.push(Rc::clone(&self.bias));
    }
}

pub struct ConvTranspose2dLayer<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvTranspose2dLayer<T> {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        init: &mut Init,
    ) -> Result<Self> {
        let fan_in = cin * k * k;
        let weight = Parameter::new(
            format!("{name}.weight"),
            &[cin, cout, k, k],
            init.kaiming(cin * cout * k * k, fan_in),
        )?;
        let bias = Parameter::new(format!("{name}.bias"), &[cout], init.bias(cout, fan_in))?;
        Ok(ConvTranspose2dLayer {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv_transpose2d(
            self.weight.tensor(),
            self.bias.tensor(),
            self.stride,
            self.padding,
        )
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        out.push(Rc::clone(&self.weight));
        out.push(Rc::clone(&self.bias));
    }
}

/// Fully connected layer on vectors.
pub struct Linear<T: Scalar> {
    pub weight: Param<T>, // out x in
    pub bias: Param<T>,   // out
}

impl<T: Scalar> Linear<T> {
    pub fn new(name: &str, input: usize, output: usize, init: &mut Init) -> Result<Self> {
        let weight = Parameter::new(
            format!("{name}.weight"),
            &[output, input],
            init.kaiming(output * input, input),
        )?;
        let bias = Parameter::new(format!("{name}.bias"), &[output], init.bias(output, input))?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = x.numel();
        if x.rank() != 1 {
            return Err(CoadError::ShapeMismatch {
                op: "linear",
                detail: format!("expected vector, got {:?}", x.shape()),
            });
        }
        let out = self.weight.tensor().shape()[0];
        let col = x.reshape(&[n, 1])?;
        let y = self.weight.tensor().matmul(&col)?.reshape(&[out])?;
        y.add(self.bias.tensor())
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        out.push(Rc::clone(&self.weight));
        out.push(Rc::clone(&self.bias));
    }
}

/// Asserts that parameter names are unique across the model.
pub fn check_unique_names<T: Scalar>(params: &[Param<T>]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for p in params {
        if !seen.insert(p.name().to_string()) {
            return Err(CoadError::Config(format!(
                "duplicate parameter name `{}`",
                p.name()
            )));
        }
    }
    Ok(())
}
