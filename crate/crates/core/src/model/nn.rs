//! Dense layers over a flat parameter vector, with hand-written backprop.

use rand::Rng;

/// A row-major `rows x cols` block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn view<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.range()]
    }

    pub fn view_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.range()]
    }

    pub fn row<'a>(&self, params: &'a [f64], r: usize) -> &'a [f64] {
        debug_assert!(r < self.rows);
        let start = self.offset + r * self.cols;
        &params[start..start + self.cols]
    }

    pub fn row_mut<'a>(&self, params: &'a mut [f64], r: usize) -> &'a mut [f64] {
        debug_assert!(r < self.rows);
        let start = self.offset + r * self.cols;
        &mut params[start..start + self.cols]
    }
}

/// Hands out consecutive tensors and records their names.
#[derive(Debug, Default)]
pub struct LayoutBuilder {
    next: usize,
    pub names: Vec<(String, Tensor)>,
}

impl LayoutBuilder {
    pub fn tensor(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Tensor {
        let t = Tensor {
            offset: self.next,
            rows,
            cols,
        };
        self.next += t.len();
        self.names.push((name.into(), t));
        t
    }

    pub fn len(&self) -> usize {
        self.next
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn uniform_init(params: &mut [f64], t: Tensor, scale: f64, rng: &mut impl Rng) {
    for p in t.view_mut(params) {
        *p = rng.gen_range(-scale..=scale);
    }
}

/// `y = W x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Dense {
    pub fn new(
        layout: &mut LayoutBuilder,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Self {
        let weight = layout.tensor(format!("{name}.weight"), output, input);
        let bias = bias.then(|| layout.tensor(format!("{name}.bias"), 1, output));
        Dense { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        let scale = (6.0 / (self.input_dim() + self.output_dim()) as f64).sqrt();
        uniform_init(params, self.weight, scale, rng);
        if let Some(b) = self.bias {
            b.view_mut(params).fill(0.0);
        }
    }

    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_dim());
        debug_assert_eq!(y.len(), self.output_dim());
        let w = self.weight.view(params);
        let cols = self.weight.cols;
        match self.bias {
            Some(b) => y.copy_from_slice(b.view(params)),
            None => y.fill(0.0),
        }
        for (r, out) in y.iter_mut().enumerate() {
            *out += dot(&w[r * cols..(r + 1) * cols], x);
        }
    }

    /// Accumulates parameter gradients; adds `W^T dy` into `dx` when given.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        grads: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let cols = self.weight.cols;
        {
            let gw = self.weight.view_mut(grads);
            for (r, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, x, &mut gw[r * cols..(r + 1) * cols]);
                }
            }
        }
        if let Some(b) = self.bias {
            for (g, d) in b.view_mut(grads).iter_mut().zip(dy) {
                *g += d;
            }
        }
        if let Some(dx) = dx {
            let w = self.weight.view(params);
            for (r, &d) in dy.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[r * cols..(r + 1) * cols], dx);
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Two tanh hidden layers followed by a linear read-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub output: Dense,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub mask1: Option<Vec<f64>>,
    pub mask2: Option<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(
        layout: &mut LayoutBuilder,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        output_bias: bool,
    ) -> Self {
        Mlp {
            hidden1: Dense::new(layout, &format!("{name}.hidden1"), input, hidden, true),
            hidden2: Dense::new(layout, &format!("{name}.hidden2"), hidden, hidden, true),
            output: Dense::new(
                layout,
                &format!("{name}.output"),
                hidden,
                output,
                output_bias,
            ),
        }
    }

    pub fn init(&self, params: &mut [f64], rng: &mut impl Rng) {
        self.hidden1.init(params, rng);
        self.hidden2.init(params, rng);
        self.output.init(params, rng);
    }

    /// Forward pass; with `dropout = Some((rate, rng))` hidden units are
    /// dropped and rescaled.
    pub fn forward<R: Rng>(
        &self,
        params: &[f64],
        input: Vec<f64>,
        mut dropout: Option<(f64, &mut R)>,
    ) -> MlpCache {
        let mut h1 = vec![0.0; self.hidden1.output_dim()];
        self.hidden1.forward(params, &input, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mask1 = dropout
            .as_mut()
            .map(|(rate, rng)| apply_dropout(&mut h1, *rate, *rng));

        let mut h2 = vec![0.0; self.hidden2.output_dim()];
        self.hidden2.forward(params, &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mask2 = dropout
            .as_mut()
            .map(|(rate, rng)| apply_dropout(&mut h2, *rate, *rng));

        let mut output = vec![0.0; self.output.output_dim()];
        self.output.forward(params, &h2, &mut output);
        MlpCache {
            input,
            h1,
            h2,
            mask1,
            mask2,
            output,
        }
    }

    /// Backpropagates `d_output`; returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        d_output: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        let mut dh2 = vec![0.0; cache.h2.len()];
        self.output
            .backward(params, &cache.h2, d_output, grads, Some(&mut dh2));
        tanh_backward(&mut dh2, &cache.h2, cache.mask2.as_deref());

        let mut dh1 = vec![0.0; cache.h1.len()];
        self.hidden2
            .backward(params, &cache.h1, &dh2, grads, Some(&mut dh1));
        tanh_backward(&mut dh1, &cache.h1, cache.mask1.as_deref());

        let mut dx = vec![0.0; cache.input.len()];
        self.hidden1
            .backward(params, &cache.input, &dh1, grads, Some(&mut dx));
        dx
    }
}

/// Inverted dropout; returns the applied mask (0 or 1/(1-rate)).
fn apply_dropout(h: &mut [f64], rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    h.iter_mut()
        .map(|v| {
            let m = if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 };
            *v *= m;
            m
        })
        .collect()
}

/// `d <- d * mask * (1 - tanh^2)`; `h` holds the masked activation.
fn tanh_backward(d: &mut [f64], h: &[f64], mask: Option<&[f64]>) {
    match mask {
        None => {
            for (g, a) in d.iter_mut().zip(h) {
                *g *= 1.0 - a * a;
            }
        }
        Some(mask) => {
            for ((g, a), m) in d.iter_mut().zip(h).zip(mask) {
                if *m == 0.0 {
                    *g = 0.0;
                } else {
                    let t = a / m;
                    *g *= m * (1.0 - t * t);
                }
            }
        }
    }
}
