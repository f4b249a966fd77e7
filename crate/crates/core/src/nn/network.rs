use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NnError, TensorShape};

/// One entry of a network description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid (unpadded) 2-D convolution over a `[h, w, c]` input.
    Conv {
        filters: usize,
        size: usize,
        stride: usize,
    },
    /// Fully connected layer; flattens its input.
    Dense { units: usize },
    Rectifier,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        !matches!(self, LayerSpec::Rectifier)
    }
}

/// Weight and bias arrays, one pair per parameterized layer.
///
/// Used for parameters, gradients and optimizer accumulators alike so the
/// three always share a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArrays {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParamArrays {
    pub fn zeros_like(other: &ParamArrays) -> Self {
        Self {
            weights: other.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: other.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamArrays) -> bool {
        self.weights.len() == other.weights.len()
            && self.biases.len() == other.biases.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.len() == b.len())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.biases).flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten()
    }

    pub fn count(&self) -> usize {
        self.iter().count()
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|g| *g *= factor);
    }

    /// `self += other`, layouts must match.
    pub fn add_assign(&mut self, other: &ParamArrays) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Resolved geometry of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub spec: LayerSpec,
    pub input: TensorShape,
    pub output: TensorShape,
    /// Index into the parameter arrays for layers that own weights.
    pub param_slot: Option<usize>,
}

/// Parameters of a feed-forward network together with its optimizer state.
///
/// The layer list always ends with the dense output layer of
/// `output_count` units (no rectifier after it).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    input_shape: TensorShape,
    output_count: usize,
    plan: Vec<LayerPlan>,
    pub params: ParamArrays,
    /// Per-parameter squared-gradient accumulator.
    pub optimizer: ParamArrays,
}

/// Resolve the shape chain. `layers` must already include the output layer.
pub fn plan_layers(layers: &[LayerSpec], input_shape: &TensorShape) -> Result<Vec<LayerPlan>, NnError> {
    let mut plan = Vec::with_capacity(layers.len());
    let mut current = input_shape.clone();
    let mut slot = 0;
    for (index, spec) in layers.iter().enumerate() {
        let bad = |reason: String| NnError::Config { layer: index, reason };
        let output = match *spec {
            LayerSpec::Conv { filters, size, stride } => {
                if filters == 0 || size == 0 || stride == 0 {
                    return Err(bad("conv needs filters, size and stride >= 1".into()));
                }
                let (h, w, _) = current
                    .as_image()
                    .ok_or_else(|| bad(format!("conv needs a [h, w, c] input, got {current}")))?;
                if size > h || size > w {
                    return Err(bad(format!("filter {size}x{size} larger than input {current}")));
                }
                let oh = (h - size) / stride + 1;
                let ow = (w - size) / stride + 1;
                TensorShape::image(oh, ow, filters).map_err(|e| bad(e.to_string()))?
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(bad("dense layer needs at least one unit".into()));
                }
                TensorShape::flat(units).map_err(|e| bad(e.to_string()))?
            }
            LayerSpec::Rectifier => current.clone(),
        };
        let param_slot = if spec.has_params() {
            slot += 1;
            Some(slot - 1)
        } else {
            None
        };
        plan.push(LayerPlan { spec: *spec, input: current, output: output.clone(), param_slot });
        current = output;
    }
    Ok(plan)
}

fn param_counts(plan: &LayerPlan) -> Option<(usize, usize)> {
    match plan.spec {
        LayerSpec::Conv { filters, size, .. } => {
            let (_, _, c) = plan.input.as_image()?;
            Some((filters * size * size * c, filters))
        }
        LayerSpec::Dense { units } => Some((units * plan.input.len(), units)),
        LayerSpec::Rectifier => None,
    }
}

/// Build and initialize a network.
///
/// A dense output layer of `output_count` units is appended to `layers`.
/// Weights and biases are drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn build_network(
    layers: &[LayerSpec],
    input_shape: &TensorShape,
    output_count: usize,
    seed: u64,
) -> Result<NetworkParams, NnError> {
    if output_count == 0 {
        return Err(NnError::Config { layer: layers.len(), reason: "output_count must be >= 1".into() });
    }
    let mut all: Vec<LayerSpec> = layers.to_vec();
    all.push(LayerSpec::Dense { units: output_count });
    let plan = plan_layers(&all, input_shape)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for layer in &plan {
        if let Some((wn, bn)) = param_counts(layer) {
            let fan_in = wn / bn;
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push((0..wn).map(|_| rng.gen_range(-bound..=bound)).collect());
            biases.push((0..bn).map(|_| rng.gen_range(-bound..=bound)).collect());
        }
    }
    let params = ParamArrays { weights, biases };
    let optimizer = ParamArrays::zeros_like(&params);
    Ok(NetworkParams { input_shape: input_shape.clone(), output_count, plan, params, optimizer })
}

impl NetworkParams {
    /// Reassemble a network from stored arrays, validating every length.
    pub fn from_parts(
        layers: &[LayerSpec],
        input_shape: &TensorShape,
        params: ParamArrays,
        optimizer: ParamArrays,
    ) -> Result<Self, NnError> {
        let plan = plan_layers(layers, input_shape)?;
        let output_count = match plan.last() {
            Some(LayerPlan { spec: LayerSpec::Dense { units }, .. }) => *units,
            _ => return Err(NnError::Shape("network must end with a dense output layer".into())),
        };
        let expected: Vec<(usize, usize)> = plan.iter().filter_map(param_counts).collect();
        let ok = params.weights.len() == expected.len()
            && params.biases.len() == expected.len()
            && expected
                .iter()
                .zip(params.weights.iter().zip(&params.biases))
                .all(|(&(wn, bn), (w, b))| w.len() == wn && b.len() == bn)
            && params.same_layout(&optimizer);
        if !ok {
            return Err(NnError::Shape("parameter arrays do not match the layer list".into()));
        }
        Ok(Self { input_shape: input_shape.clone(), output_count, plan, params, optimizer })
    }

    pub fn input_shape(&self) -> &TensorShape {
        &self.input_shape
    }

    pub fn output_count(&self) -> usize {
        self.output_count
    }

    pub fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    /// Full layer list including the output layer.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.plan.iter().map(|p| p.spec).collect()
    }

    /// Deep copy of the parameters (the optimizer state comes along).
    pub fn copy_params(&self) -> NetworkParams {
        self.clone()
    }

    /// Overwrite weights and biases with those of `src`, keeping this
    /// network's optimizer state.
    pub fn load_weights_from(&mut self, src: &NetworkParams) {
        self.params.clone_from(&src.params);
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NnError> {
        if input.len() != self.input_shape.len() {
            return Err(NnError::Shape(format!(
                "input has {} elements, network expects {} ({})",
                input.len(),
                self.input_shape.len(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Q-value estimates for all outputs.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input)?;
        let mut act = input.to_vec();
        for layer in &self.plan {
            act = self.layer_forward(layer, &act);
        }
        Ok(act)
    }

    /// Activations of every layer; element 0 is the input.
    pub fn forward_trace(&self, input: &[f64]) -> Result<Vec<Vec<f64>>, NnError> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.plan.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.plan {
            let next = self.layer_forward(layer, acts.last().expect("non-empty"));
            acts.push(next);
        }
        Ok(acts)
    }

    /// Gradients of `output . output_grad` with respect to every parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<ParamArrays, NnError> {
        let mut grads = ParamArrays::zeros_like(&self.params);
        self.accumulate_backward(input, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into `grads`.
    pub fn accumulate_backward(
        &self,
        input: &[f64],
        output_grad: &[f64],
        grads: &mut ParamArrays,
    ) -> Result<(), NnError> {
        if output_grad.len() != self.output_count {
            return Err(NnError::Shape(format!(
                "output gradient has {} entries, network has {} outputs",
                output_grad.len(),
                self.output_count
            )));
        }
        if !grads.same_layout(&self.params) {
            return Err(NnError::Shape("gradient buffer layout mismatch".into()));
        }
        let acts = self.forward_trace(input)?;
        let mut upstream = output_grad.to_vec();
        for (index, layer) in self.plan.iter().enumerate().rev() {
            let x = &acts[index];
            let need_input_grad = index > 0;
            upstream = match (layer.spec, layer.param_slot) {
                (LayerSpec::Rectifier, _) => {
                    x.iter().zip(&upstream).map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 }).collect()
                }
                (LayerSpec::Dense { units }, Some(slot)) => {
                    let w = &self.params.weights[slot];
                    let n_in = x.len();
                    let (gw, gb) = (&mut grads.weights[slot], &mut grads.biases[slot]);
                    let mut gx = vec![0.0; if need_input_grad { n_in } else { 0 }];
                    for o in 0..units {
                        let g = upstream[o];
                        if g == 0.0 {
                            continue;
                        }
                        gb[o] += g;
                        let row = o * n_in;
                        for i in 0..n_in {
                            gw[row + i] += g * x[i];
                        }
                        if need_input_grad {
                            for i in 0..n_in {
                                gx[i] += g * w[row + i];
                            }
                        }
                    }
                    gx
                }
                (LayerSpec::Conv { filters, size, stride }, Some(slot)) => {
                    let (ih, iw, ic) = layer.input.as_image().expect("planned conv input");
                    let (oh, ow, _) = layer.output.as_image().expect("planned conv output");
                    let w = &self.params.weights[slot];
                    let (gw, gb) = (&mut grads.weights[slot], &mut grads.biases[slot]);
                    let mut gx = vec![0.0; if need_input_grad { ih * iw * ic } else { 0 }];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for f in 0..filters {
                                let g = upstream[(oy * ow + ox) * filters + f];
                                if g == 0.0 {
                                    continue;
                                }
                                gb[f] += g;
                                for i in 0..size {
                                    for j in 0..size {
                                        let xb = ((oy * stride + i) * iw + ox * stride + j) * ic;
                                        let wb = ((f * size + i) * size + j) * ic;
                                        for c in 0..ic {
                                            gw[wb + c] += g * x[xb + c];
                                            if need_input_grad {
                                                gx[xb + c] += g * w[wb + c];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    gx
                }
                _ => unreachable!("parameterized layer without a slot"),
            };
        }
        Ok(())
    }

    fn layer_forward(&self, layer: &LayerPlan, x: &[f64]) -> Vec<f64> {
        match (layer.spec, layer.param_slot) {
            (LayerSpec::Rectifier, _) => x.iter().map(|&v| v.max(0.0)).collect(),
            (LayerSpec::Dense { units }, Some(slot)) => {
                let w = &self.params.weights[slot];
                let b = &self.params.biases[slot];
                let n_in = x.len();
                (0..units)
                    .map(|o| {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect()
            }
            (LayerSpec::Conv { filters, size, stride }, Some(slot)) => {
                let (_, iw, ic) = layer.input.as_image().expect("planned conv input");
                let (oh, ow, _) = layer.output.as_image().expect("planned conv output");
                let w = &self.params.weights[slot];
                let b = &self.params.biases[slot];
                let mut out = vec![0.0; oh * ow * filters];
                let row_len = size * ic;
                for oy in 0..oh {
                    for ox in 0..ow {
                        for f in 0..filters {
                            let mut acc = b[f];
                            for i in 0..size {
                                // one filter row is contiguous in both input and weights
                                let xb = ((oy * stride + i) * iw + ox * stride) * ic;
                                let wb = (f * size + i) * size * ic;
                                acc += x[xb..xb + row_len]
                                    .iter()
                                    .zip(&w[wb..wb + row_len])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            }
                            out[(oy * ow + ox) * filters + f] = acc;
                        }
                    }
                }
                out
            }
            _ => unreachable!("parameterized layer without a slot"),
        }
    }
}

/// The convolutional stack used for 84x84x4 Atari frames.
pub fn atari_conv_stack(hidden_units: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv { filters: 32, size: 8, stride: 4 },
        LayerSpec::Rectifier,
        LayerSpec::Conv { filters: 64, size: 4, stride: 2 },
        LayerSpec::Rectifier,
        LayerSpec::Conv { filters: 64, size: 3, stride: 1 },
        LayerSpec::Rectifier,
        LayerSpec::Dense { units: hidden_units },
        LayerSpec::Rectifier,
    ]
}
