use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

use super::{Activation, Adam, BatchNorm, BatchStats, BnMode, BoundBatchNorm, Linear};

/// Layer layout of a multilayer perceptron.
///
/// `widths = [input, hidden.., output]`. Each hidden linear layer is followed
/// by an optional batch norm and the activation; the final linear layer is
/// raw and never weight-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// Batch norm on the raw input, before the first linear layer.
    pub input_batchnorm: bool,
    /// Batch norm after every hidden linear layer.
    pub hidden_batchnorm: bool,
    /// Unit-norm rows for every hidden linear layer.
    pub weight_norm: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl MlpSpec {
    pub fn plain(widths: &[usize], activation: Activation) -> Self {
        Self {
            widths: widths.to_vec(),
            activation,
            input_batchnorm: false,
            hidden_batchnorm: false,
            weight_norm: false,
            bn_momentum: super::batchnorm::DEFAULT_MOMENTUM,
            bn_eps: super::batchnorm::DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::contract(format!(
                "mlp widths must have at least two positive entries, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub spec: MlpSpec,
    pub input_norm: Option<BatchNorm<T>>,
    pub linears: Vec<Linear<T>>,
    /// `norms[i]` follows `linears[i]`; always `None` for the final layer.
    pub norms: Vec<Option<BatchNorm<T>>>,
}

impl<T: Real> Mlp<T> {
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let depth = spec.depth();
        let bn = |d| BatchNorm::new(d, spec.bn_momentum, spec.bn_eps);
        let input_norm = spec.input_batchnorm.then(|| bn(spec.widths[0]));
        let mut linears = Vec::with_capacity(depth);
        let mut norms = Vec::with_capacity(depth);
        for i in 0..depth {
            let hidden = i + 1 < depth;
            linears.push(Linear::init(
                spec.widths[i],
                spec.widths[i + 1],
                hidden && spec.weight_norm,
                rng,
            ));
            norms.push((hidden && spec.hidden_batchnorm).then(|| bn(spec.widths[i + 1])));
        }
        Ok(Self {
            spec: spec.clone(),
            input_norm,
            linears,
            norms,
        })
    }

    pub fn input_width(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.spec.widths.last().expect("validated widths")
    }

    fn norm_slots(&self) -> impl Iterator<Item = (String, &BatchNorm<T>)> {
        self.input_norm.iter().map(|n| ("input_bn".to_string(), n)).chain(
            self.norms
                .iter()
                .enumerate()
                .filter_map(|(i, n)| n.as_ref().map(|n| (format!("bn{i}"), n))),
        )
    }

    fn norm_slots_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        self.input_norm.iter_mut().chain(self.norms.iter_mut().flatten())
    }

    /// Trainable parameters in their canonical order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        if let Some(n) = &self.input_norm {
            out.push(("input_bn.gamma".to_string(), &n.gamma));
            out.push(("input_bn.beta".to_string(), &n.beta));
        }
        for (i, (l, n)) in self.linears.iter().zip(&self.norms).enumerate() {
            out.push((format!("linear{i}.weight"), &l.weight));
            out.push((format!("linear{i}.bias"), &l.bias));
            if let Some(n) = n {
                out.push((format!("bn{i}.gamma"), &n.gamma));
                out.push((format!("bn{i}.beta"), &n.beta));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        if let Some(n) = &mut self.input_norm {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
        for (l, n) in self.linears.iter_mut().zip(&mut self.norms) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = n {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameters followed by batch-norm running statistics.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, t) in self.named_params() {
            ck.push(name, t);
        }
        for (name, n) in self.norm_slots() {
            ck.push(format!("{name}.running_mean"), &n.running_mean);
            ck.push(format!("{name}.running_var"), &n.running_var);
        }
        ck
    }

    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let names = self.param_names();
        let loaded = names.iter().map(|n| ck.tensor::<T>(n)).collect::<Result<Vec<_>>>()?;
        for ((p, new), name) in self.params_mut().into_iter().zip(loaded).zip(&names) {
            if p.shape() != new.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    new.shape(),
                    p.shape()
                )));
            }
            *p = new;
        }
        let slots: Vec<String> = self.norm_slots().map(|(n, _)| n).collect();
        for (name, n) in slots.iter().zip(self.norm_slots_mut()) {
            n.running_mean = ck.tensor(&format!("{name}.running_mean"))?;
            n.running_var = ck.tensor(&format!("{name}.running_var"))?;
        }
        Ok(())
    }

    /// Records the parameters on `tape`. With `trainable == false` they are
    /// constants and receive no gradient.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> BoundMlp<'t, T> {
        BoundMlp {
            input_norm: self.input_norm.as_ref().map(|n| n.bind(tape, trainable)),
            layers: self
                .linears
                .iter()
                .zip(&self.norms)
                .map(|(l, n)| BoundLayer {
                    weight: tape.leaf(l.weight.clone(), trainable),
                    bias: tape.leaf(l.bias.clone(), trainable),
                    norm: n.as_ref().map(|n| n.bind(tape, trainable)),
                })
                .collect(),
            activation: self.spec.activation,
        }
    }

    /// Advances running statistics with the batch statistics returned by a
    /// train-mode [`BoundMlp::forward`].
    pub fn commit_stats(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        let slots: Vec<&mut BatchNorm<T>> = self.norm_slots_mut().collect();
        if slots.len() != stats.len() {
            return Err(Error::contract(format!(
                "{} batch statistics for {} batch-norm layers",
                stats.len(),
                slots.len()
            )));
        }
        for (n, s) in slots.into_iter().zip(stats) {
            n.commit(s);
        }
        Ok(())
    }

    /// Re-projects every weight-normalised layer.
    pub fn project_weights(&mut self) {
        for l in self.linears.iter_mut().filter(|l| l.wn_enabled) {
            l.wn_project();
        }
    }

    /// One Adam step followed by weight-norm projection.
    pub fn adam_step(&mut self, opt: &mut Adam<T>, grads: &[Tensor<T>]) -> Result<()> {
        let names = self.param_names();
        opt.update(&mut self.params_mut(), grads, &names)?;
        self.project_weights();
        Ok(())
    }

    /// Eval-mode forward pass without a tape.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (rows, cols) = x.dims2()?;
        if cols != self.input_width() {
            return Err(Error::contract(format!(
                "mlp expects {} inputs, got {cols}",
                self.input_width()
            )));
        }
        let mut h = x.data().to_vec();
        if let Some(n) = &self.input_norm {
            n.infer_rows(&mut h);
        }
        let depth = self.linears.len();
        for (i, (l, n)) in self.linears.iter().zip(&self.norms).enumerate() {
            let (inputs, outputs) = (l.inputs(), l.outputs());
            let mut out = Vec::with_capacity(rows * outputs);
            for _ in 0..rows {
                out.extend_from_slice(l.bias.data());
            }
            T::gemm(
                rows,
                inputs,
                outputs,
                &h,
                inputs,
                1,
                l.weight.data(),
                1,
                inputs,
                &mut out,
                true,
            );
            if let Some(n) = n {
                n.infer_rows(&mut out);
            }
            if i + 1 < depth {
                let act = self.spec.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            h = out;
        }
        Ok(Tensor::from_vec(&[rows, self.output_width()], h)?)
    }
}

struct BoundLayer<'t, T: Real> {
    weight: Var<'t, T>,
    bias: Var<'t, T>,
    norm: Option<BoundBatchNorm<'t, T>>,
}

/// An [`Mlp`] whose parameters are recorded on a tape.
pub struct BoundMlp<'t, T: Real> {
    input_norm: Option<BoundBatchNorm<'t, T>>,
    layers: Vec<BoundLayer<'t, T>>,
    activation: Activation,
}

impl<'t, T: Real> BoundMlp<'t, T> {
    /// Forward pass. In train mode the batch statistics of every batch-norm
    /// layer are returned in layer order; nothing is written back.
    pub fn forward(&self, x: Var<'t, T>, mode: BnMode) -> Result<(Var<'t, T>, Vec<BatchStats<T>>)> {
        let mut stats = Vec::new();
        let mut h = x;
        if let Some(n) = &self.input_norm {
            let (y, s) = n.forward(h, mode)?;
            h = y;
            stats.extend(s);
        }
        let depth = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.linear(layer.weight, layer.bias)?;
            if let Some(n) = &layer.norm {
                let (y, s) = n.forward(h, mode)?;
                h = y;
                stats.extend(s);
            }
            if i + 1 < depth {
                h = self.activation.apply_var(h);
            }
        }
        Ok((h, stats))
    }

    /// Leaf handles in canonical parameter order.
    pub fn param_vars(&self) -> Vec<Var<'t, T>> {
        let mut out = Vec::new();
        if let Some(n) = &self.input_norm {
            out.push(n.gamma);
            out.push(n.beta);
        }
        for l in &self.layers {
            out.push(l.weight);
            out.push(l.bias);
            if let Some(n) = &l.norm {
                out.push(n.gamma);
                out.push(n.beta);
            }
        }
        out
    }

    /// Accumulated gradients in canonical parameter order; zeros for frozen bindings.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.param_vars()
            .into_iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}
