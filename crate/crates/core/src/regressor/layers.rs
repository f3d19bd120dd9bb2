//! Layer math for the regression head: convolution, max pooling, batch
//! normalization, fully connected layers and ReLU, each with forward and
//! backward passes over batched NCHW data.
//!
//! Convolution runs stride 1 with zero padding `kernel / 2` via an im2col
//! lowering. The column order is (channel, ky, kx), the same accumulation
//! order a direct nested loop uses, so the lowered path reproduces the naive
//! computation to the last bit.

use crate::rng::SplitMix64;

/// Glorot-uniform initialization: U(-sqrt(6/(fan_in+fan_out)), +...).
pub(crate) fn glorot_uniform(rng: &mut SplitMix64, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.uniform(-limit, limit)).collect()
}

/// 2-D convolution, stride 1, zero padding `kernel / 2`.
#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// [out_ch][in_ch * kernel * kernel], inner order (channel, ky, kx).
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn init(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut SplitMix64) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        Self {
            in_ch,
            out_ch,
            kernel,
            weight: glorot_uniform(rng, fan_in, fan_out, out_ch * fan_in),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// Lower one sample to columns: rows indexed by (c, ky, kx), columns by
    /// output cell. Out-of-bounds taps contribute zero.
    fn im2col(&self, x: &[f64], h: usize, w: usize, cols: &mut [f64]) {
        let k = self.kernel;
        let pad = self.pad() as isize;
        let cells = h * w;
        for c in 0..self.in_ch {
            let plane = &x[c * cells..(c + 1) * cells];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * cells;
                    for oy in 0..h {
                        let iy = oy as isize + ky as isize - pad;
                        let dst = &mut cols[row + oy * w..row + (oy + 1) * w];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src_base = iy as usize * w;
                        for ox in 0..w {
                            let ix = ox as isize + kx as isize - pad;
                            dst[ox] = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                plane[src_base + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Forward over a batch. Returns the outputs and the per-sample columns
    /// (kept for the backward pass).
    pub fn forward(&self, x: &[f64], n: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
        let cells = h * w;
        let taps = self.in_ch * self.kernel * self.kernel;
        let in_plane = self.in_ch * cells;
        let out_plane = self.out_ch * cells;
        let mut cols = vec![0.0; n * taps * cells];
        let mut y = vec![0.0; n * out_plane];
        for s in 0..n {
            let sample_cols = &mut cols[s * taps * cells..(s + 1) * taps * cells];
            self.im2col(&x[s * in_plane..(s + 1) * in_plane], h, w, sample_cols);
            let out = &mut y[s * out_plane..(s + 1) * out_plane];
            for o in 0..self.out_ch {
                let row = &mut out[o * cells..(o + 1) * cells];
                row.fill(self.bias[o]);
                let wrow = &self.weight[o * taps..(o + 1) * taps];
                for (idx, &wv) in wrow.iter().enumerate() {
                    let col = &sample_cols[idx * cells..(idx + 1) * cells];
                    for (r, &cv) in row.iter_mut().zip(col.iter()) {
                        *r += wv * cv;
                    }
                }
            }
        }
        (y, cols)
    }

    /// Backward over a batch: gradients for input, weight and bias.
    pub fn backward(
        &self,
        cols: &[f64],
        dy: &[f64],
        n: usize,
        h: usize,
        w: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let cells = h * w;
        let taps = self.in_ch * self.kernel * self.kernel;
        let k = self.kernel;
        let pad = self.pad() as isize;
        let in_plane = self.in_ch * cells;
        let out_plane = self.out_ch * cells;

        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; self.out_ch];
        let mut dx = vec![0.0; n * in_plane];

        for s in 0..n {
            let sample_cols = &cols[s * taps * cells..(s + 1) * taps * cells];
            let dout = &dy[s * out_plane..(s + 1) * out_plane];
            for o in 0..self.out_ch {
                let drow = &dout[o * cells..(o + 1) * cells];
                db[o] += drow.iter().sum::<f64>();
                let dwrow = &mut dw[o * taps..(o + 1) * taps];
                for (idx, dwv) in dwrow.iter_mut().enumerate() {
                    let col = &sample_cols[idx * cells..(idx + 1) * cells];
                    let mut acc = 0.0;
                    for (d, c) in drow.iter().zip(col.iter()) {
                        acc += d * c;
                    }
                    *dwv += acc;
                }
            }
            // dcols = W^T . dY, scattered back to input positions.
            let dxs = &mut dx[s * in_plane..(s + 1) * in_plane];
            for c in 0..self.in_ch {
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = (c * k + ky) * k + kx;
                        for oy in 0..h {
                            let iy = oy as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..w {
                                let ix = ox as isize + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let cell = oy * w + ox;
                                let mut acc = 0.0;
                                for o in 0..self.out_ch {
                                    acc += self.weight[o * taps + idx] * dout[o * cells + cell];
                                }
                                dxs[c * cells + iy as usize * w + ix as usize] += acc;
                            }
                        }
                    }
                }
            }
        }
        (dx, dw, db)
    }
}

/// 2x2 max pooling with stride 2; trailing odd rows/columns are dropped.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MaxPool2;

impl MaxPool2 {
    pub fn out_dims(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    /// Forward; also returns, per output element, the linear index of the
    /// winning input element (first-scanned wins ties).
    pub fn forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
        let (oh, ow) = Self::out_dims(h, w);
        let mut y = vec![0.0; n * c * oh * ow];
        let mut arg = vec![0usize; y.len()];
        for s in 0..n {
            for ch in 0..c {
                let in_base = (s * c + ch) * h * w;
                let out_base = (s * c + ch) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = in_base + (2 * oy) * w + 2 * ox;
                        let mut best = x[best_idx];
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let idx = in_base + (2 * oy + dy) * w + 2 * ox + dx;
                                if x[idx] > best {
                                    best = x[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        y[out_base + oy * ow + ox] = best;
                        arg[out_base + oy * ow + ox] = best_idx;
                    }
                }
            }
        }
        (y, arg)
    }

    /// Route output gradients back to the winning inputs.
    pub fn backward(dy: &[f64], argmax: &[usize], input_numel: usize) -> Vec<f64> {
        let mut dx = vec![0.0; input_numel];
        for (g, &idx) in dy.iter().zip(argmax.iter()) {
            dx[idx] += g;
        }
        dx
    }
}

/// Per-channel batch normalization over (batch, height, width).
#[derive(Debug, Clone)]
pub(crate) struct BatchNorm2d {
    pub channels: usize,
    pub eps: f64,
    /// Weight of the current batch in the running-statistic update.
    pub momentum: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Values the backward pass needs from a train-mode forward.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn init(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Train-mode forward: normalize by batch statistics (biased variance),
    /// update running statistics by exponential moving average.
    pub fn forward_train(&mut self, x: &[f64], n: usize, hw: usize) -> (Vec<f64>, BnCache) {
        let c = self.channels;
        let m = (n * hw) as f64;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sum += x[base..base + hw].iter().sum::<f64>();
            }
            let mean = sum / m;
            let mut ss = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for &v in &x[base..base + hw] {
                    let d = v - mean;
                    ss += d * d;
                }
            }
            let var = ss / m;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = istd;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean) * istd;
                    xhat[i] = xh;
                    y[i] = self.gamma[ch] * xh + self.beta[ch];
                }
            }
            self.running_mean[ch] = (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
            self.running_var[ch] = (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var;
        }
        (y, BnCache { xhat, inv_std })
    }

    /// Inference-mode forward using running statistics.
    pub fn forward_infer(&self, x: &[f64], n: usize, hw: usize) -> Vec<f64> {
        let c = self.channels;
        let mut y = vec![0.0; x.len()];
        for ch in 0..c {
            let istd = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let mean = self.running_mean[ch];
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    y[i] = self.gamma[ch] * (x[i] - mean) * istd + self.beta[ch];
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        cache: &BnCache,
        dy: &[f64],
        n: usize,
        hw: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = self.channels;
        let m = (n * hw) as f64;
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * cache.xhat[i];
                }
            }
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch];
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    dx[i] = scale * (dy[i] - sum_dy / m - cache.xhat[i] * sum_dy_xhat / m);
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

/// Fully connected layer.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// [out][in]
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(in_features: usize, out_features: usize, rng: &mut SplitMix64) -> Self {
        Self {
            in_features,
            out_features,
            weight: glorot_uniform(rng, in_features, out_features, in_features * out_features),
            bias: vec![0.0; out_features],
        }
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut y = vec![0.0; n * self.out_features];
        for s in 0..n {
            let xin = &x[s * self.in_features..(s + 1) * self.in_features];
            let yout = &mut y[s * self.out_features..(s + 1) * self.out_features];
            for o in 0..self.out_features {
                let wrow = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                let mut acc = self.bias[o];
                for (wv, xv) in wrow.iter().zip(xin.iter()) {
                    acc += wv * xv;
                }
                yout[o] = acc;
            }
        }
        y
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut dw = vec![0.0; self.weight.len()];
        let mut db = vec![0.0; self.out_features];
        let mut dx = vec![0.0; n * self.in_features];
        for s in 0..n {
            let xin = &x[s * self.in_features..(s + 1) * self.in_features];
            let dout = &dy[s * self.out_features..(s + 1) * self.out_features];
            let dxs = &mut dx[s * self.in_features..(s + 1) * self.in_features];
            for o in 0..self.out_features {
                let g = dout[o];
                db[o] += g;
                let wrow = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                let dwrow = &mut dw[o * self.in_features..(o + 1) * self.in_features];
                for i in 0..self.in_features {
                    dwrow[i] += g * xin[i];
                    dxs[i] += g * wrow[i];
                }
            }
        }
        (dx, dw, db)
    }
}

pub(crate) fn relu_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward through ReLU given the *post-activation* values.
pub(crate) fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y.iter()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}
