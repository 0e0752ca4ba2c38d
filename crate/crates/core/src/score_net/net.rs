use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::container::{read_f64_array, read_u32, truncated, write_f64_array, write_u32};
use crate::error::{check_len, invalid, GudError, Result};
use crate::process::ScoreFunction;
use crate::rng;
use crate::schedule::NoisingState;

pub const NET_MAGIC: &[u8; 6] = b"GUDNET";
pub const NET_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Hidden layers: one projection followed by `depth - 1` residual blocks.
    pub depth: usize,
}

impl NetConfig {
    pub fn new(dim: usize, hidden: usize, depth: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 || depth == 0 {
            return Err(invalid("network widths and depth must be positive"));
        }
        Ok(NetConfig { dim, hidden, depth })
    }

    pub fn input_width(&self) -> usize {
        3 * self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    fn zeros(out: usize, inp: usize) -> Self {
        Layer { w: DMatrix::zeros(out, inp), b: DVector::zeros(out) }
    }
}

/// Parameters plus the fixed input normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    config: NetConfig,
    gamma_range: (f64, f64),
    labels: Vec<f64>,
    pub(crate) layers: Vec<Layer>,
}

pub(crate) struct Cache {
    input: DMatrix<f64>,
    pre: Vec<DMatrix<f64>>,
    hidden: Vec<DMatrix<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

fn normalise(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        2.0 * (v - lo) / (hi - lo) - 1.0
    } else {
        0.0
    }
}

impl ScoreNet {
    /// Random hidden layers, zero output layer. `gamma_range` maps to
    /// `[-1, 1]` at the input; `labels` are the per-component position labels.
    pub fn new(config: NetConfig, gamma_range: (f64, f64), labels: Vec<f64>, seed: u64) -> Result<Self> {
        check_len(config.dim, labels.len())?;
        if !(gamma_range.0.is_finite() && gamma_range.1.is_finite()) {
            return Err(invalid("gamma range must be finite"));
        }
        let mut r = rng::seeded(seed);
        let mut layers = Vec::with_capacity(config.depth + 1);
        let mut fan_in = config.input_width();
        for _ in 0..config.depth {
            let scale = (1.0 / fan_in as f64).sqrt();
            let w = DMatrix::from_fn(config.hidden, fan_in, |_, _| scale * rng::normal(&mut r));
            layers.push(Layer { w, b: DVector::zeros(config.hidden) });
            fan_in = config.hidden;
        }
        layers.push(Layer::zeros(config.dim, config.hidden));
        Ok(ScoreNet { config, gamma_range, labels, layers })
    }

    pub fn config(&self) -> NetConfig {
        self.config
    }

    pub fn gamma_range(&self) -> (f64, f64) {
        self.gamma_range
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_len(self.param_count(), p.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
            let n = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&p[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn label_features(&self) -> Vec<f64> {
        let lo = self.labels.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.labels.iter().map(|&l| normalise(l, (lo, hi))).collect()
    }

    /// Network input `[chi_t, normalised gamma, normalised labels]`.
    pub fn input(&self, chi_t: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.dim;
        check_len(d, chi_t.len())?;
        check_len(d, gamma.len())?;
        let mut x = Vec::with_capacity(3 * d);
        x.extend_from_slice(chi_t);
        x.extend(gamma.iter().map(|&g| normalise(g, self.gamma_range)));
        x.extend(self.label_features());
        Ok(x)
    }

    pub(crate) fn input_batch(&self, chi_t: &[Vec<f64>], gamma: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        check_len(chi_t.len(), gamma.len())?;
        let d = self.config.dim;
        let labels = self.label_features();
        let mut m = DMatrix::zeros(3 * d, chi_t.len());
        for (j, (x, g)) in chi_t.iter().zip(gamma).enumerate() {
            check_len(d, x.len())?;
            check_len(d, g.len())?;
            for i in 0..d {
                m[(i, j)] = x[i];
                m[(d + i, j)] = normalise(g[i], self.gamma_range);
                m[(2 * d + i, j)] = labels[i];
            }
        }
        Ok(m)
    }

    pub(crate) fn forward_cached(&self, input: DMatrix<f64>) -> (DMatrix<f64>, Cache) {
        let depth = self.config.depth;
        let mut pre = Vec::with_capacity(depth);
        let mut hidden = Vec::with_capacity(depth);
        let mut z = &self.layers[0].w * &input;
        add_bias(&mut z, &self.layers[0].b);
        let mut h = z.map(silu);
        pre.push(z);
        for k in 1..depth {
            let mut z = &self.layers[k].w * &h;
            add_bias(&mut z, &self.layers[k].b);
            let next = &h + z.map(silu);
            hidden.push(h);
            pre.push(z);
            h = next;
        }
        let mut out = &self.layers[depth].w * &h;
        add_bias(&mut out, &self.layers[depth].b);
        hidden.push(h);
        (out, Cache { input, pre, hidden })
    }

    /// Gradients of `sum(grad_out .* out)` with respect to every layer.
    pub(crate) fn backward(&self, cache: &Cache, grad_out: &DMatrix<f64>) -> Vec<Layer> {
        let depth = self.config.depth;
        let mut grads: Vec<Layer> = Vec::with_capacity(depth + 1);
        let h_last = &cache.hidden[depth - 1];
        let top = Layer { w: grad_out * h_last.transpose(), b: grad_out.column_sum() };
        let mut dh = self.layers[depth].w.transpose() * grad_out;
        for k in (1..depth).rev() {
            let dz = dh.zip_map(&cache.pre[k], |g, z| g * silu_prime(z));
            let h_prev = &cache.hidden[k - 1];
            grads.push(Layer { w: &dz * h_prev.transpose(), b: dz.column_sum() });
            dh += self.layers[k].w.transpose() * &dz;
        }
        let dz = dh.zip_map(&cache.pre[0], |g, z| g * silu_prime(z));
        grads.push(Layer { w: &dz * cache.input.transpose(), b: dz.column_sum() });
        grads.reverse();
        grads.push(top);
        grads
    }

    /// Predicted noise for a single input.
    pub fn predict_eps(&self, chi_t: &[f64], state: &NoisingState) -> Result<Vec<f64>> {
        let x = self.input(chi_t, &state.gamma)?;
        let (out, _) = self.forward_cached(DMatrix::from_column_slice(x.len(), 1, &x));
        Ok(out.as_slice().to_vec())
    }

    pub fn predict_eps_batch(&self, chi_t: &[Vec<f64>], gamma: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let input = self.input_batch(chi_t, gamma)?;
        let (out, _) = self.forward_cached(input);
        Ok(out.column_iter().map(|c| c.iter().cloned().collect()).collect())
    }

    /// Forward-mode derivative of the predicted noise along `v` in `chi_t`.
    pub fn eps_jvp(&self, chi_t: &[f64], state: &NoisingState, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.dim;
        check_len(d, v.len())?;
        let x = DVector::from_vec(self.input(chi_t, &state.gamma)?);
        let mut xd = DVector::zeros(3 * d);
        xd.rows_mut(0, d).copy_from_slice(v);
        let depth = self.config.depth;
        let z = &self.layers[0].w * &x + &self.layers[0].b;
        let zd = &self.layers[0].w * &xd;
        let mut h = z.map(silu);
        let mut hd = zd.zip_map(&z, |t, z| t * silu_prime(z));
        for k in 1..depth {
            let z = &self.layers[k].w * &h + &self.layers[k].b;
            let zd = &self.layers[k].w * &hd;
            h += z.map(silu);
            hd += zd.zip_map(&z, |t, z| t * silu_prime(z));
        }
        Ok((&self.layers[depth].w * hd).as_slice().to_vec())
    }

    pub fn write_to<W: Write>(&self, mut w: W, ema: bool, meta: &str) -> Result<()> {
        w.write_all(NET_MAGIC)?;
        w.write_all(&[NET_VERSION, ema as u8])?;
        write_u32(&mut w, self.config.dim as u32)?;
        write_u32(&mut w, self.config.hidden as u32)?;
        write_u32(&mut w, self.config.depth as u32)?;
        write_f64_array(&mut w, &[self.gamma_range.0, self.gamma_range.1])?;
        write_f64_array(&mut w, &self.labels)?;
        write_f64_array(&mut w, &self.params())?;
        let bytes = meta.as_bytes();
        write_u32(&mut w, bytes.len() as u32)?;
        w.write_all(bytes)?;
        Ok(())
    }

    /// Returns the network, the EMA flag and the free-form metadata text.
    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, bool, String)> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != NET_MAGIC {
            return Err(GudError::Format("not a GUDNET checkpoint".into()));
        }
        let mut head = [0u8; 2];
        r.read_exact(&mut head).map_err(truncated)?;
        if head[0] != NET_VERSION {
            return Err(GudError::Format(format!("unsupported checkpoint version {}", head[0])));
        }
        let dim = read_u32(&mut r)? as usize;
        let hidden = read_u32(&mut r)? as usize;
        let depth = read_u32(&mut r)? as usize;
        let config = NetConfig::new(dim, hidden, depth).map_err(|e| GudError::Format(e.to_string()))?;
        let range = read_f64_array(&mut r)?;
        if range.len() != 2 {
            return Err(GudError::Format("bad gamma range".into()));
        }
        let labels = read_f64_array(&mut r)?;
        if labels.len() != dim {
            return Err(GudError::Format("label count does not match dimension".into()));
        }
        let params = read_f64_array(&mut r)?;
        let mut net = ScoreNet::new(config, (range[0], range[1]), labels, 0)?;
        net.set_params(&params).map_err(|_| GudError::Format("parameter count does not match architecture".into()))?;
        let len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; len];
        r.read_exact(&mut meta).map_err(truncated)?;
        let meta = String::from_utf8(meta).map_err(|_| GudError::Format("metadata is not UTF-8".into()))?;
        Ok((net, head[1] != 0, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, ema: bool, meta: &str) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf, ema, meta)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, bool, String)> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    /// Perturb every parameter; used for tests and warm restarts.
    pub fn jitter<R: Rng + ?Sized>(&mut self, scale: f64, r: &mut R) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|p| *p += scale * rng::normal(r));
        }
    }
}

/// The implied score `-eps / sigma`.
impl ScoreFunction for ScoreNet {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn score(&self, chi: &[f64], state: &NoisingState) -> Vec<f64> {
        match self.predict_eps(chi, state) {
            Ok(e) => e.iter().zip(&state.sigma).map(|(e, s)| -e / s).collect(),
            Err(_) => vec![f64::NAN; self.config.dim],
        }
    }

    fn score_jvp(&self, chi: &[f64], state: &NoisingState, v: &[f64]) -> Vec<f64> {
        match self.eps_jvp(chi, state, v) {
            Ok(e) => e.iter().zip(&state.sigma).map(|(e, s)| -e / s).collect(),
            Err(_) => vec![f64::NAN; self.config.dim],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> ScoreNet {
        let mut n = ScoreNet::new(NetConfig::new(3, 8, 3).unwrap(), (-7.0, 4.0), vec![1.0, 2.0, 3.0], 5).unwrap();
        n.jitter(0.3, &mut rng::seeded(9));
        n
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let n = ScoreNet::new(NetConfig::new(3, 8, 3).unwrap(), (-7.0, 4.0), vec![0.0; 3], 5).unwrap();
        let e = n.predict_eps(&[0.3, -2.0, 5.0], &NoisingState::uniform(1.0, 3)).unwrap();
        assert_eq!(e, vec![0.0; 3]);
    }

    #[test]
    fn jvp_matches_finite_differences() {
        let n = net();
        let state = NoisingState::new(vec![-1.0, 0.5, 2.0]);
        let x = [0.2, -0.4, 1.1];
        let v = [0.7, -0.3, 0.5];
        let jvp = n.eps_jvp(&x, &state, &v).unwrap();
        let h = 1e-6;
        let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let fp = n.predict_eps(&plus, &state).unwrap();
        let fm = n.predict_eps(&minus, &state).unwrap();
        for i in 0..3 {
            assert!((jvp[i] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let n = net();
        let mut buf = Vec::new();
        n.write_to(&mut buf, true, "k = v").unwrap();
        let (back, ema, meta) = ScoreNet::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, n);
        assert!(ema);
        assert_eq!(meta, "k = v");
        assert!(ScoreNet::read_from(&buf[..buf.len() - 3]).is_err());
        buf[0] = b'X';
        assert!(matches!(ScoreNet::read_from(buf.as_slice()), Err(GudError::Format(_))));
    }

    #[test]
    fn batch_and_single_agree() {
        let n = net();
        let xs = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 0.0, 2.0]];
        let gs = vec![vec![0.0; 3], vec![-3.0, 1.0, 2.0]];
        let batch = n.predict_eps_batch(&xs, &gs).unwrap();
        for (j, x) in xs.iter().enumerate() {
            let single = n.predict_eps(x, &NoisingState::new(gs[j].clone())).unwrap();
            for i in 0..3 {
                assert!((single[i] - batch[j][i]).abs() < 1e-14);
            }
        }
    }
}
