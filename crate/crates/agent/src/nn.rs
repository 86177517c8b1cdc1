//! Minimal dense layers over a flat parameter vector, with hand-written backprop.
//!
//! Layers only hold offsets into the shared parameter slice; gradients are
//! accumulated into a slice of the same length.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Name, shape and offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamBuilder {
    len: usize,
    tensors: Vec<TensorInfo>,
}

impl ParamBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn alloc(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.len;
        self.len += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo {
            name,
            shape,
            offset,
        });
        offset
    }

    pub fn linear(&mut self, name: &str, input: usize, output: usize, bias: bool) -> Linear {
        let weight = self.alloc(format!("{name}.weight"), vec![output, input]);
        let bias = bias.then(|| self.alloc(format!("{name}.bias"), vec![output]));
        Linear {
            input,
            output,
            weight,
            bias,
        }
    }

    /// ReLU hidden layers followed by a linear output layer.
    pub fn mlp(&mut self, name: &str, input: usize, hidden: &[usize], output: usize) -> Mlp {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = input;
        for (i, &h) in hidden.iter().chain(std::iter::once(&output)).enumerate() {
            layers.push(self.linear(&format!("{name}.{i}"), width, h, true));
            width = h;
        }
        Mlp { layers }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn finish(self) -> Vec<TensorInfo> {
        self.tensors
    }
}

/// `y = W x + b` with `W` stored row-major as `output × input`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    weight: usize,
    bias: Option<usize>,
}

impl Linear {
    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        let w = &p[self.weight..self.weight + self.input * self.output];
        (0..self.output)
            .map(|o| {
                let row = &w[o * self.input..(o + 1) * self.input];
                let b = self.bias.map_or(0.0, |b| p[b + o]);
                row.iter().zip(x).fold(b, |acc, (wi, xi)| acc + wi * xi)
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.input];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let start = self.weight + o * self.input;
            let row = &p[start..start + self.input];
            let grow = &mut grad[start..start + self.input];
            for i in 0..self.input {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
            if let Some(b) = self.bias {
                grad[b + o] += g;
            }
        }
        dx
    }

    /// Uniform `±scale/√input` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R, scale: f64) {
        let bound = scale / (self.input.max(1) as f64).sqrt();
        for w in &mut p[self.weight..self.weight + self.input * self.output] {
            *w = rng.gen_range(-bound..=bound);
        }
        self.fill_bias(p, 0.0);
    }

    pub fn fill_bias(&self, p: &mut [f64], value: f64) {
        if let Some(b) = self.bias {
            p[b..b + self.output].iter_mut().for_each(|v| *v = value);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Layer inputs and pre-activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

impl Mlp {
    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn input(&self) -> usize {
        self.layers[0].input
    }

    pub fn output(&self) -> usize {
        self.layers.last().expect("at least one layer").output
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> MlpTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(p, &h);
            let next = if i + 1 < self.layers.len() {
                relu(&y)
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(y);
        }
        MlpTrace { inputs, pre }
    }

    pub fn backward(
        &self,
        p: &[f64],
        trace: &MlpTrace,
        dout: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let mut dy = dout.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                for (d, z) in dy.iter_mut().zip(&trace.pre[i]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dy = layer.backward(p, &trace.inputs[i], &dy, grad);
        }
        dy
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R, output_scale: f64) {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            // √6 keeps ReLU activations from shrinking layer over layer
            let scale = if i == last { output_scale } else { 6f64.sqrt() };
            layer.init(p, rng, scale);
        }
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("at least one layer")
    }
}

/// Single-head self-attention over a fixed set of feature-group tokens, with a
/// residual connection and mean pooling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attention {
    embed: Vec<Linear>,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionTrace {
    tokens: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    mixed: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

impl AttentionTrace {
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }
}

impl Attention {
    pub fn new(builder: &mut ParamBuilder, name: &str, group_sizes: &[usize], dim: usize) -> Self {
        let embed = group_sizes
            .iter()
            .enumerate()
            .map(|(i, &g)| builder.linear(&format!("{name}.token{i}"), g, dim, true))
            .collect();
        Self {
            embed,
            query: builder.linear(&format!("{name}.query"), dim, dim, false),
            key: builder.linear(&format!("{name}.key"), dim, dim, false),
            value: builder.linear(&format!("{name}.value"), dim, dim, false),
            out: builder.linear(&format!("{name}.out"), dim, dim, false),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        for l in self
            .embed
            .iter()
            .chain([&self.query, &self.key, &self.value, &self.out])
        {
            l.init(p, rng, 3f64.sqrt());
        }
    }

    pub fn forward(&self, p: &[f64], groups: &[&[f64]]) -> AttentionTrace {
        let tokens: Vec<Vec<f64>> = self
            .embed
            .iter()
            .zip(groups)
            .map(|(l, g)| l.forward(p, g))
            .collect();
        let q: Vec<Vec<f64>> = tokens.iter().map(|e| self.query.forward(p, e)).collect();
        let k: Vec<Vec<f64>> = tokens.iter().map(|e| self.key.forward(p, e)).collect();
        let v: Vec<Vec<f64>> = tokens.iter().map(|e| self.value.forward(p, e)).collect();
        let scale = 1.0 / (self.dim as f64).sqrt();
        let weights: Vec<Vec<f64>> = q
            .iter()
            .map(|qi| {
                let s: Vec<f64> = k.iter().map(|kj| dot(qi, kj) * scale).collect();
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| x / z).collect()
            })
            .collect();
        let mixed: Vec<Vec<f64>> = weights
            .iter()
            .map(|a| {
                let mut o = vec![0.0; self.dim];
                for (w, vj) in a.iter().zip(&v) {
                    o.iter_mut().zip(vj).for_each(|(x, y)| *x += w * y);
                }
                o
            })
            .collect();
        let n = tokens.len() as f64;
        let mut pooled = vec![0.0; self.dim];
        for (e, o) in tokens.iter().zip(&mixed) {
            let proj = self.out.forward(p, o);
            for d in 0..self.dim {
                pooled[d] += (e[d] + proj[d]) / n;
            }
        }
        AttentionTrace {
            tokens,
            q,
            k,
            v,
            weights,
            mixed,
            pooled,
        }
    }

    pub fn backward(
        &self,
        p: &[f64],
        groups: &[&[f64]],
        t: &AttentionTrace,
        dpooled: &[f64],
        grad: &mut [f64],
    ) {
        let n = t.tokens.len();
        let dh: Vec<f64> = dpooled.iter().map(|g| g / n as f64).collect();
        let scale = 1.0 / (self.dim as f64).sqrt();

        let mut de = vec![dh.clone(); n];
        let mut dv = vec![vec![0.0; self.dim]; n];
        let mut dq = vec![vec![0.0; self.dim]; n];
        let mut dk = vec![vec![0.0; self.dim]; n];
        for i in 0..n {
            let dmixed = self.out.backward(p, &t.mixed[i], &dh, grad);
            let da: Vec<f64> = t.v.iter().map(|vj| dot(&dmixed, vj)).collect();
            for j in 0..n {
                dv[j]
                    .iter_mut()
                    .zip(&dmixed)
                    .for_each(|(x, y)| *x += t.weights[i][j] * y);
            }
            let mean: f64 = t.weights[i].iter().zip(&da).map(|(a, d)| a * d).sum();
            for j in 0..n {
                let ds = t.weights[i][j] * (da[j] - mean) * scale;
                dq[i]
                    .iter_mut()
                    .zip(&t.k[j])
                    .for_each(|(x, y)| *x += ds * y);
                dk[j]
                    .iter_mut()
                    .zip(&t.q[i])
                    .for_each(|(x, y)| *x += ds * y);
            }
        }
        for i in 0..n {
            for (lin, d) in [
                (&self.query, &dq[i]),
                (&self.key, &dk[i]),
                (&self.value, &dv[i]),
            ] {
                let back = lin.backward(p, &t.tokens[i], d, grad);
                de[i].iter_mut().zip(back).for_each(|(x, y)| *x += y);
            }
            self.embed[i].backward(p, groups[i], &de[i], grad);
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check<F: Fn(&[f64]) -> f64>(f: F, p: &[f64], analytic: &[f64]) {
        let h = 1e-6;
        let mut q = p.to_vec();
        for i in 0..p.len() {
            q[i] = p[i] + h;
            let up = f(&q);
            q[i] = p[i] - h;
            let down = f(&q);
            q[i] = p[i];
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                (fd - analytic[i]).abs() / denom < 1e-5,
                "param {i}: fd {fd} vs {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn linear_forward_by_hand() {
        let mut b = ParamBuilder::new();
        let l = b.linear("l", 2, 1, true);
        let p = vec![2.0, -1.0, 0.5];
        assert_eq!(l.forward(&p, &[3.0, 4.0]), vec![2.5]);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut b = ParamBuilder::new();
        let m = b.mlp("m", 3, &[5, 4], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![0.0; b.len()];
        m.init(&mut p, &mut rng, 1.0);
        p.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        let x = [0.3, -0.7, 1.1];
        let c = [0.4, -1.3];
        let loss = |p: &[f64]| dot(m.forward(p, &x).output(), &c);
        let trace = m.forward(&p, &x);
        let mut g = vec![0.0; p.len()];
        let dx = m.backward(&p, &trace, &c, &mut g);
        check(loss, &p, &g);
        assert_eq!(dx.len(), 3);
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut b = ParamBuilder::new();
        let a = Attention::new(&mut b, "att", &[1, 3, 3], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = vec![0.0; b.len()];
        a.init(&mut p, &mut rng);
        let g0 = [0.2];
        let g1 = [0.5, 0.3, 0.2];
        let g2 = [0.1, -0.4, 0.9];
        let groups: [&[f64]; 3] = [&g0, &g1, &g2];
        let c = [1.0, -0.5, 0.25, 2.0];
        let loss = |p: &[f64]| dot(a.forward(p, &groups).pooled(), &c);
        let t = a.forward(&p, &groups);
        let mut g = vec![0.0; p.len()];
        a.backward(&p, &groups, &t, &c, &mut g);
        check(loss, &p, &g);
    }

    #[test]
    fn layout_records_every_tensor() {
        let mut b = ParamBuilder::new();
        b.mlp("enc", 4, &[8], 2);
        assert_eq!(b.len(), 4 * 8 + 8 + 8 * 2 + 2);
        let t = b.finish();
        assert_eq!(t.len(), 4);
        assert_eq!(t[2].name, "enc.1.weight");
        assert_eq!(t[2].shape, vec![2, 8]);
        assert_eq!(t[2].offset, 40);
    }
}
