//! Change of representation `chi = M phi` with `M = S^-1 U`.
//!
//! `U` is orthogonal (identity, PCA, real 2-D Fourier, Haar wavelet, or a
//! column-major permutation) and `S` is a positive diagonal scaling. The data
//! `phi` is an image flattened row-major as `(row, column, channel)`. Every
//! orthogonal part acts on each colour channel separately and the component
//! vector keeps the channel index fastest, so `chi[comp * C + ch]`.
//!
//! The prior covariance in data space is `U^-1 S^2 U`; with PCA whitening it
//! matches the data covariance.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::container::{self, Container};
use crate::error::{check_len, invalid, GudError, Result};

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(invalid(format!("degenerate shape {height}x{width}x{channels}")));
        }
        Ok(Shape { height, width, channels })
    }

    /// Plain vectors are treated as a single row with one channel.
    pub fn vector(d: usize) -> Self {
        Shape { height: 1, width: d.max(1), channels: 1 }
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Identity,
    Dense,
    Fft2Real,
    Haar { levels: usize },
    /// Column-major reordering: components of one column are contiguous.
    Permutation,
}

impl BasisKind {
    pub fn name(&self) -> &'static str {
        match self {
            BasisKind::Identity => "identity",
            BasisKind::Dense => "pca",
            BasisKind::Fft2Real => "fft",
            BasisKind::Haar { .. } => "haar",
            BasisKind::Permutation => "column",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BasisSpec {
    kind: BasisKind,
    shape: Shape,
    scaling: Vec<f64>,
    labels: Vec<f64>,
    /// Per-channel orthogonal block (rows are basis vectors) for the dense and
    /// Fourier kinds.
    block: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
    pub count: usize,
}

impl CovarianceEstimate {
    pub fn log_variances(&self, floor: f64) -> Vec<f64> {
        self.variances.iter().map(|v| v.max(floor).ln()).collect()
    }
}

/// Empirical mean and unbiased per-component variances.
pub fn estimate_covariance(samples: &[Vec<f64>]) -> Result<CovarianceEstimate> {
    if samples.len() < 2 {
        return Err(invalid("covariance estimation needs at least 2 samples"));
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        check_len(d, s.len())?;
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variances = vec![0.0; d];
    for s in samples {
        for ((acc, v), m) in variances.iter_mut().zip(s).zip(&mean) {
            let c = v - m;
            *acc += c * c;
        }
    }
    variances.iter_mut().for_each(|v| *v /= n - 1.0);
    Ok(CovarianceEstimate { mean, variances, count: samples.len() })
}

/// Pixel covariance pooled over colour channels (`pixels x pixels`), computed
/// after removing the per-component mean.
pub fn pooled_pixel_covariance(samples: &[Vec<f64>], shape: Shape) -> Result<DMatrix<f64>> {
    if samples.len() < 2 {
        return Err(invalid("covariance estimation needs at least 2 samples"));
    }
    let est = estimate_covariance(samples)?;
    check_len(shape.dim(), est.mean.len())?;
    let (n, c) = (shape.pixels(), shape.channels);
    let rows = samples.len() * c;
    let mut x = DMatrix::<f64>::zeros(rows, n);
    for (s_idx, s) in samples.iter().enumerate() {
        for ch in 0..c {
            let r = s_idx * c + ch;
            for p in 0..n {
                let k = p * c + ch;
                x[(r, p)] = s[k] - est.mean[k];
            }
        }
    }
    let denom = ((samples.len() - 1) * c) as f64;
    Ok(x.transpose() * x / denom)
}

impl BasisSpec {
    pub fn identity(shape: Shape) -> Self {
        let d = shape.dim();
        let labels = (0..d).map(|k| ((k / shape.channels) % shape.width + 1) as f64).collect();
        BasisSpec { kind: BasisKind::Identity, shape, scaling: vec![1.0; d], labels, block: None }
    }

    /// Column-major permutation; labels are 1-based column indices.
    pub fn permutation(shape: Shape) -> Self {
        let d = shape.dim();
        let per_col = shape.height * shape.channels;
        let labels = (0..d).map(|k| (k / per_col + 1) as f64).collect();
        BasisSpec { kind: BasisKind::Permutation, shape, scaling: vec![1.0; d], labels, block: None }
    }

    pub fn haar(shape: Shape, levels: usize) -> Result<Self> {
        let layout = HaarLayout::new(shape, levels)?;
        let labels = layout.group_labels();
        Ok(BasisSpec {
            kind: BasisKind::Haar { levels },
            shape,
            scaling: vec![1.0; shape.dim()],
            labels,
            block: None,
        })
    }

    /// Real orthogonal 2-D DFT applied per channel. Labels carry `|k|`.
    pub fn fft(shape: Shape) -> Result<Self> {
        let (block, freq) = fft_block(shape.height, shape.width);
        let c = shape.channels;
        let labels = freq.iter().flat_map(|&k| std::iter::repeat_n(k, c)).collect();
        Ok(BasisSpec {
            kind: BasisKind::Fft2Real,
            shape,
            scaling: vec![1.0; shape.dim()],
            labels,
            block: Some(block),
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn block(&self) -> Option<&DMatrix<f64>> {
        self.block.as_ref()
    }

    pub fn with_scaling(mut self, scaling: Vec<f64>) -> Result<Self> {
        check_len(self.dim(), scaling.len())?;
        if scaling.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(invalid("scaling entries must be positive and finite"));
        }
        self.scaling = scaling;
        Ok(self)
    }

    /// Whitening for an arbitrary orthogonal part: `S_i = sqrt(max(var_i, floor))`
    /// where `var_i` are variances of `U phi`.
    pub fn whitened(self, variances: &[f64], floor: f64) -> Result<Self> {
        if floor <= 0.0 {
            return Err(invalid("variance floor must be positive"));
        }
        let s = variances.iter().map(|v| v.max(floor).sqrt()).collect();
        self.with_scaling(s)
    }

    pub fn apply_orthogonal(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), phi.len())?;
        let shape = self.shape;
        Ok(match self.kind {
            BasisKind::Identity => phi.to_vec(),
            BasisKind::Permutation => {
                let mut out = vec![0.0; phi.len()];
                for (k, &v) in phi.iter().enumerate() {
                    out[permuted_index(shape, k)] = v;
                }
                out
            }
            BasisKind::Haar { levels } => haar_decompose(phi, shape, levels)?.coefficients,
            BasisKind::Dense | BasisKind::Fft2Real => {
                apply_block(self.block.as_ref().expect("dense basis without block"), phi, shape, false)
            }
        })
    }

    pub fn apply_orthogonal_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), y.len())?;
        let shape = self.shape;
        Ok(match self.kind {
            BasisKind::Identity => y.to_vec(),
            BasisKind::Permutation => {
                (0..y.len()).map(|k| y[permuted_index(shape, k)]).collect()
            }
            BasisKind::Haar { levels } => {
                let layout = HaarLayout::new(shape, levels)?;
                haar_reconstruct(y, &layout)?
            }
            BasisKind::Dense | BasisKind::Fft2Real => {
                apply_block(self.block.as_ref().expect("dense basis without block"), y, shape, true)
            }
        })
    }

    /// `chi = S^-1 U phi`
    pub fn forward(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.apply_orthogonal(phi)?;
        for (v, s) in y.iter_mut().zip(&self.scaling) {
            *v /= s;
        }
        Ok(y)
    }

    /// `phi = U^-1 S chi`
    pub fn inverse(&self, chi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), chi.len())?;
        let y: Vec<f64> = chi.iter().zip(&self.scaling).map(|(c, s)| c * s).collect();
        self.apply_orthogonal_inverse(&y)
    }

    /// Gradient with respect to `chi` from a gradient with respect to `phi`:
    /// `grad_chi = S U grad_phi`.
    pub fn score_phi_to_chi(&self, grad_phi: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.apply_orthogonal(grad_phi)?;
        for (v, s) in y.iter_mut().zip(&self.scaling) {
            *v *= s;
        }
        Ok(y)
    }

    pub fn score_chi_to_phi(&self, grad_chi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), grad_chi.len())?;
        let y: Vec<f64> = grad_chi.iter().zip(&self.scaling).map(|(g, s)| g / s).collect();
        self.apply_orthogonal_inverse(&y)
    }

    /// `log p_phi(phi) = log p_chi(chi) - sum_i log S_ii`.
    pub fn loglik_base_change(&self, loglik_chi: f64) -> Result<f64> {
        loglik_base_change(&self.scaling, loglik_chi)
    }

    /// 1-based column index of every component, for bases where a component
    /// belongs to a single pixel column.
    pub fn column_groups(&self) -> Option<Vec<usize>> {
        let shape = self.shape;
        match self.kind {
            BasisKind::Identity => Some(column_grouping(shape)),
            BasisKind::Permutation => {
                let per_col = shape.height * shape.channels;
                Some((0..shape.dim()).map(|k| k / per_col + 1).collect())
            }
            _ => None,
        }
    }

    pub fn haar_layout(&self) -> Option<HaarLayout> {
        match self.kind {
            BasisKind::Haar { levels } => HaarLayout::new(self.shape, levels).ok(),
            _ => None,
        }
    }

    pub fn to_container(&self) -> Container {
        let (kind, levels) = match self.kind {
            BasisKind::Identity => (container::KIND_IDENTITY, 0),
            BasisKind::Dense => (container::KIND_DENSE, 0),
            BasisKind::Fft2Real => (container::KIND_FFT2_REAL, 0),
            BasisKind::Haar { levels } => (container::KIND_HAAR, levels as u32),
            BasisKind::Permutation => (container::KIND_PERMUTATION, 0),
        };
        let mut arrays = vec![self.scaling.clone(), self.labels.clone()];
        if self.kind == BasisKind::Dense {
            let b = self.block.as_ref().expect("dense basis without block");
            let mut flat = Vec::with_capacity(b.len());
            for r in 0..b.nrows() {
                flat.extend(b.row(r).iter());
            }
            arrays.push(flat);
        }
        Container {
            kind,
            height: self.shape.height as u32,
            width: self.shape.width as u32,
            channels: self.shape.channels as u32,
            levels,
            count: 0,
            arrays,
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let shape = Shape::new(c.height as usize, c.width as usize, c.channels as usize)?;
        let mut arrays = c.arrays.into_iter();
        let scaling = arrays.next().ok_or_else(|| GudError::Format("missing scaling".into()))?;
        let labels = arrays.next().ok_or_else(|| GudError::Format("missing labels".into()))?;
        let mut spec = match c.kind {
            container::KIND_IDENTITY => BasisSpec::identity(shape),
            container::KIND_PERMUTATION => BasisSpec::permutation(shape),
            container::KIND_FFT2_REAL => BasisSpec::fft(shape)?,
            container::KIND_HAAR => BasisSpec::haar(shape, c.levels as usize)?,
            container::KIND_DENSE => {
                let n = shape.pixels();
                let flat = arrays.next().ok_or_else(|| GudError::Format("missing dense matrix".into()))?;
                if flat.len() != n * n {
                    return Err(GudError::Format("dense matrix size does not match shape".into()));
                }
                BasisSpec {
                    kind: BasisKind::Dense,
                    shape,
                    scaling: vec![1.0; shape.dim()],
                    labels: vec![0.0; shape.dim()],
                    block: Some(DMatrix::from_row_slice(n, n, &flat)),
                }
            }
            k => return Err(GudError::Format(format!("unknown basis kind {k}"))),
        };
        check_len(shape.dim(), labels.len()).map_err(|e| GudError::Format(e.to_string()))?;
        spec.labels = labels;
        spec.with_scaling(scaling)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

pub fn loglik_base_change(scaling: &[f64], loglik_chi: f64) -> Result<f64> {
    if scaling.iter().any(|s| !(*s > 0.0)) {
        return Err(invalid("scaling entries must be positive"));
    }
    Ok(loglik_chi - scaling.iter().map(|s| s.ln()).sum::<f64>())
}

/// 1-based column index of each flattened `(row, column, channel)` component.
pub fn column_grouping(shape: Shape) -> Vec<usize> {
    (0..shape.dim()).map(|k| (k / shape.channels) % shape.width + 1).collect()
}

fn permuted_index(shape: Shape, k: usize) -> usize {
    let ch = k % shape.channels;
    let p = k / shape.channels;
    let (row, col) = (p / shape.width, p % shape.width);
    (col * shape.height + row) * shape.channels + ch
}

fn apply_block(block: &DMatrix<f64>, x: &[f64], shape: Shape, transpose: bool) -> Vec<f64> {
    let (n, c) = (shape.pixels(), shape.channels);
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let u = if transpose { block[(j, i)] } else { block[(i, j)] };
                acc += u * x[j * c + ch];
            }
            out[i * c + ch] = acc;
        }
    }
    out
}

/// PCA basis from a symmetric covariance over pixels. Rows of `U` are
/// eigenvectors ordered by descending eigenvalue, each signed so its
/// largest-magnitude entry is positive.
pub fn build_pca_basis(cov: &DMatrix<f64>, whiten: bool, variance_floor: f64, shape: Shape) -> Result<BasisSpec> {
    let n = shape.pixels();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(GudError::DimensionMismatch { expected: n, got: cov.nrows() });
    }
    if !(variance_floor > 0.0) {
        return Err(invalid("variance floor must be positive"));
    }
    let scale = cov.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-8 * scale {
                return Err(invalid("covariance matrix is not symmetric"));
            }
        }
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 10_000)
        .ok_or_else(|| GudError::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut block = DMatrix::<f64>::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (row, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for j in 1..n {
            if v[j].abs() > v[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            block[(row, j)] = sign * v[j];
        }
        eigenvalues.push(eig.eigenvalues[k].max(variance_floor));
    }

    let c = shape.channels;
    let labels = eigenvalues.iter().flat_map(|&l| std::iter::repeat_n(-l.ln(), c)).collect();
    let scaling = if whiten {
        eigenvalues.iter().flat_map(|&l| std::iter::repeat_n(l.sqrt(), c)).collect()
    } else {
        vec![1.0; shape.dim()]
    };
    BasisSpec { kind: BasisKind::Dense, shape, scaling: vec![1.0; shape.dim()], labels, block: Some(block) }
        .with_scaling(scaling)
}

/// Rows of the real orthogonal DFT matrix over an `h x w` grid together with
/// the frequency magnitude of each row. Rows are sorted by
/// `(|k|, k_y, k_x, cos-before-sin)` on signed representative frequencies.
fn fft_block(h: usize, w: usize) -> (DMatrix<f64>, Vec<f64>) {
    let n = h * w;
    let signed = |k: usize, len: usize| -> i64 {
        let k = k as i64;
        let len = len as i64;
        if 2 * k <= len { k } else { k - len }
    };
    // (|k|^2, sy, sx, part, ky, kx)
    let mut rows: Vec<(i64, i64, i64, u8, usize, usize)> = Vec::with_capacity(n);
    for ky in 0..h {
        for kx in 0..w {
            let (cy, cx) = ((h - ky) % h, (w - kx) % w);
            let (sy, sx) = (signed(ky, h), signed(kx, w));
            let r2 = sy * sy + sx * sx;
            if (cy, cx) == (ky, kx) {
                rows.push((r2, sy, sx, 0, ky, kx));
            } else if (sy, sx) > (signed(cy, h), signed(cx, w)) {
                rows.push((r2, sy, sx, 0, ky, kx));
                rows.push((r2, sy, sx, 1, ky, kx));
            }
        }
    }
    rows.sort();
    debug_assert_eq!(rows.len(), n);

    let mut block = DMatrix::<f64>::zeros(n, n);
    let mut freq = Vec::with_capacity(n);
    for (r, &(r2, _, _, part, ky, kx)) in rows.iter().enumerate() {
        let self_conj = ((h - ky) % h, (w - kx) % w) == (ky, kx);
        let norm = if self_conj { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for y in 0..h {
            for x in 0..w {
                let theta = 2.0 * PI * ((ky * y) as f64 / h as f64 + (kx * x) as f64 / w as f64);
                let v = if part == 0 { theta.cos() } else { theta.sin() };
                block[(r, y * w + x)] = norm * v;
            }
        }
        freq.push((r2 as f64).sqrt());
    }
    (block, freq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubBand {
    LH,
    HL,
    HH,
    LL,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub kind: SubBand,
    /// Decomposition level, 1 = finest.
    pub level: usize,
    pub height: usize,
    pub width: usize,
    pub offset: usize,
}

/// Coefficient layout: `LH1, HL1, HH1, LH2, ..., HH_N, LL_N`, each band stored
/// row-major with the channel index fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaarLayout {
    pub shape: Shape,
    pub levels: usize,
    pub bands: Vec<Band>,
}

impl HaarLayout {
    pub fn new(shape: Shape, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(invalid("Haar transform needs at least one level"));
        }
        let f = 1usize.checked_shl(levels as u32).unwrap_or(0);
        if f == 0 || !shape.height.is_multiple_of(f) || !shape.width.is_multiple_of(f) {
            return Err(invalid(format!(
                "shape {}x{} is not divisible by 2^{levels}",
                shape.height, shape.width
            )));
        }
        let mut bands = Vec::with_capacity(3 * levels + 1);
        let mut offset = 0;
        let c = shape.channels;
        for level in 1..=levels {
            let (h, w) = (shape.height >> level, shape.width >> level);
            for kind in [SubBand::LH, SubBand::HL, SubBand::HH] {
                bands.push(Band { kind, level, height: h, width: w, offset });
                offset += h * w * c;
            }
        }
        let (h, w) = (shape.height >> levels, shape.width >> levels);
        bands.push(Band { kind: SubBand::LL, level: levels, height: h, width: w, offset });
        Ok(HaarLayout { shape, levels, bands })
    }

    pub fn band(&self, kind: SubBand, level: usize) -> Option<&Band> {
        self.bands.iter().find(|b| b.kind == kind && b.level == level)
    }

    /// Schedule level of a wavelet level: 1 for the coarsest (`LL_N` joins
    /// `HF_N`) up to `levels` for the finest.
    pub fn schedule_level(&self, band: &Band) -> usize {
        self.levels - band.level + 1
    }

    /// Column count per schedule level (index 0 = schedule level 1).
    pub fn columns_per_level(&self) -> Vec<usize> {
        (1..=self.levels).map(|i| self.shape.width >> (self.levels - i + 1)).collect()
    }

    /// `(schedule level, column)` of every coefficient, both 1-based.
    pub fn groups(&self) -> Vec<(usize, usize)> {
        let c = self.shape.channels;
        let mut out = vec![(0, 0); self.shape.dim()];
        for b in &self.bands {
            let level = self.schedule_level(b);
            for i in 0..b.height {
                for j in 0..b.width {
                    for ch in 0..c {
                        out[b.offset + (i * b.width + j) * c + ch] = (level, j + 1);
                    }
                }
            }
        }
        out
    }

    /// Integer labels increasing by one per column, continuing across levels.
    pub fn group_labels(&self) -> Vec<f64> {
        let cols = self.columns_per_level();
        let mut start = vec![0usize; cols.len()];
        for i in 1..cols.len() {
            start[i] = start[i - 1] + cols[i - 1];
        }
        self.groups().iter().map(|&(l, j)| (start[l - 1] + j) as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct HaarCoefficients {
    pub coefficients: Vec<f64>,
    pub layout: HaarLayout,
}

impl HaarCoefficients {
    pub fn get(&self, kind: SubBand, level: usize, row: usize, col: usize, ch: usize) -> Option<f64> {
        let b = self.layout.band(kind, level)?;
        let c = self.layout.shape.channels;
        (row < b.height && col < b.width && ch < c)
            .then(|| self.coefficients[b.offset + (row * b.width + col) * c + ch])
    }
}

/// Multi-level orthonormal 2-D Haar transform, applied to each channel.
pub fn haar_decompose(image: &[f64], shape: Shape, levels: usize) -> Result<HaarCoefficients> {
    check_len(shape.dim(), image.len())?;
    let layout = HaarLayout::new(shape, levels)?;
    let c = shape.channels;
    let mut out = vec![0.0; image.len()];
    for ch in 0..c {
        let (mut h, mut w) = (shape.height, shape.width);
        let mut x: Vec<f64> = (0..shape.pixels()).map(|p| image[p * c + ch]).collect();
        for level in 1..=levels {
            let (h2, w2) = (h / 2, w / 2);
            let mut ll = vec![0.0; h2 * w2];
            let lh = layout.band(SubBand::LH, level).unwrap().offset;
            let hl = layout.band(SubBand::HL, level).unwrap().offset;
            let hh = layout.band(SubBand::HH, level).unwrap().offset;
            for i in 0..h2 {
                for j in 0..w2 {
                    let a = x[(2 * i) * w + 2 * j];
                    let b = x[(2 * i) * w + 2 * j + 1];
                    let cc = x[(2 * i + 1) * w + 2 * j];
                    let e = x[(2 * i + 1) * w + 2 * j + 1];
                    // rows then columns with 1/sqrt2 each, folded into one 1/2
                    let k = (i * w2 + j) * c + ch;
                    ll[i * w2 + j] = 0.5 * (a + b + cc + e);
                    out[lh + k] = 0.5 * (a + cc - b - e);
                    out[hl + k] = 0.5 * (a - cc + b - e);
                    out[hh + k] = 0.5 * (a - cc - b + e);
                }
            }
            x = ll;
            h = h2;
            w = w2;
        }
        let ll_off = layout.band(SubBand::LL, levels).unwrap().offset;
        for (p, v) in x.iter().enumerate() {
            out[ll_off + p * c + ch] = *v;
        }
    }
    Ok(HaarCoefficients { coefficients: out, layout })
}

pub fn haar_reconstruct(coefficients: &[f64], layout: &HaarLayout) -> Result<Vec<f64>> {
    let shape = layout.shape;
    check_len(shape.dim(), coefficients.len())?;
    let c = shape.channels;
    let levels = layout.levels;
    let mut out = vec![0.0; coefficients.len()];
    for ch in 0..c {
        let ll_band = layout.band(SubBand::LL, levels).unwrap();
        let (mut h, mut w) = (ll_band.height, ll_band.width);
        let mut x: Vec<f64> = (0..h * w).map(|p| coefficients[ll_band.offset + p * c + ch]).collect();
        for level in (1..=levels).rev() {
            let lh = layout.band(SubBand::LH, level).unwrap().offset;
            let hl = layout.band(SubBand::HL, level).unwrap().offset;
            let hh = layout.band(SubBand::HH, level).unwrap().offset;
            let (h2, w2) = (2 * h, 2 * w);
            let mut up = vec![0.0; h2 * w2];
            for i in 0..h {
                for j in 0..w {
                    let k = (i * w + j) * c + ch;
                    let ll = x[i * w + j];
                    let (vlh, vhl, vhh) = (coefficients[lh + k], coefficients[hl + k], coefficients[hh + k]);
                    up[(2 * i) * w2 + 2 * j] = 0.5 * (ll + vlh + vhl + vhh);
                    up[(2 * i + 1) * w2 + 2 * j] = 0.5 * (ll + vlh - vhl - vhh);
                    up[(2 * i) * w2 + 2 * j + 1] = 0.5 * (ll - vlh + vhl - vhh);
                    up[(2 * i + 1) * w2 + 2 * j + 1] = 0.5 * (ll - vlh - vhl + vhh);
                }
            }
            x = up;
            h = h2;
            w = w2;
        }
        for (p, v) in x.iter().enumerate() {
            out[p * c + ch] = *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
        let scale = norm(b).max(1e-300);
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn two_point_and_degenerate_covariance() {
        let est = estimate_covariance(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(est.mean, vec![1.0, 1.0]);
        assert_eq!(est.variances, vec![2.0, 2.0]);
        let same = estimate_covariance(&vec![vec![3.0, -1.0]; 5]).unwrap();
        assert_eq!(same.variances, vec![0.0, 0.0]);
        assert!(estimate_covariance(&[vec![1.0]]).is_err());
        assert!(estimate_covariance(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn covariance_of_gaussian_draws() {
        let mut r = rng::seeded(11);
        let samples: Vec<Vec<f64>> =
            (0..100_000).map(|_| vec![rng::normal(&mut r), 2.0 * rng::normal(&mut r)]).collect();
        let est = estimate_covariance(&samples).unwrap();
        assert!((est.variances[0] - 1.0).abs() < 0.05);
        assert!((est.variances[1] - 4.0).abs() < 0.2);
    }

    #[test]
    fn pure_scaling_and_identity() {
        let shape = Shape::vector(2);
        let b = BasisSpec::identity(shape);
        assert_eq!(b.forward(&[3.0, 1.5]).unwrap(), vec![3.0, 1.5]);
        let b = b.with_scaling(vec![2.0, 2.0]).unwrap();
        assert_eq!(b.forward(&[2.0, -4.0]).unwrap(), vec![1.0, -2.0]);
        assert!(b.forward(&[1.0]).is_err());
        assert!(BasisSpec::identity(shape).with_scaling(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn haar_hand_example() {
        let shape = Shape::new(2, 2, 1).unwrap();
        let h = haar_decompose(&[1.0, 2.0, 3.0, 4.0], shape, 1).unwrap();
        assert_eq!(h.get(SubBand::LL, 1, 0, 0, 0), Some(5.0));
        assert_eq!(h.get(SubBand::LH, 1, 0, 0, 0), Some(-1.0));
        assert_eq!(h.get(SubBand::HL, 1, 0, 0, 0), Some(-2.0));
        assert_eq!(h.get(SubBand::HH, 1, 0, 0, 0), Some(0.0));
        assert_eq!(norm(&h.coefficients).powi(2), 30.0);
        let b = BasisSpec::haar(shape, 1).unwrap();
        let chi = b.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        // LH, HL, HH, LL
        assert_eq!(chi, vec![-1.0, -2.0, 0.0, 5.0]);
    }

    #[test]
    fn haar_constant_image() {
        let shape = Shape::new(4, 4, 2).unwrap();
        let h = haar_decompose(&vec![1.5; 32], shape, 1).unwrap();
        let ll = h.layout.band(SubBand::LL, 1).unwrap().offset;
        for (k, v) in h.coefficients.iter().enumerate() {
            if k >= ll {
                assert!((v - 3.0).abs() < 1e-12);
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn haar_roundtrip_random_rgb() {
        let shape = Shape::new(8, 8, 3).unwrap();
        let mut r = rng::seeded(3);
        let x = rng::normal_vec(&mut r, shape.dim());
        for levels in 1..=3 {
            let h = haar_decompose(&x, shape, levels).unwrap();
            assert!((norm(&h.coefficients) - norm(&x)).abs() < 1e-10 * norm(&x));
            let back = haar_reconstruct(&h.coefficients, &h.layout).unwrap();
            assert!(max_rel_diff(&back, &x) < 1e-10);
        }
        assert!(HaarLayout::new(shape, 4).is_err());
        assert!(HaarLayout::new(Shape::new(6, 8, 1).unwrap(), 2).is_err());
    }

    #[test]
    fn haar_groups_cover_levels_and_columns() {
        let layout = HaarLayout::new(Shape::new(8, 8, 1).unwrap(), 2).unwrap();
        assert_eq!(layout.columns_per_level(), vec![2, 4]);
        let groups = layout.groups();
        let ll = layout.band(SubBand::LL, 2).unwrap();
        assert_eq!(groups[ll.offset + 1], (1, 2));
        let lh1 = layout.band(SubBand::LH, 1).unwrap();
        assert_eq!(groups[lh1.offset + 3], (2, 4));
        let labels = layout.group_labels();
        assert_eq!(labels[ll.offset], 1.0);
        assert_eq!(labels[lh1.offset], 3.0);
        assert_eq!(labels.iter().cloned().fold(0.0, f64::max), 6.0);
    }

    #[test]
    fn fft_dc_parseval_and_impulse() {
        let shape = Shape::new(4, 6, 1).unwrap();
        let b = BasisSpec::fft(shape).unwrap();
        assert_eq!(b.labels()[0], 0.0);
        let chi = b.forward(&[2.0; 24]).unwrap();
        assert!((chi[0] - 2.0 * 24f64.sqrt()).abs() < 1e-10);
        assert!(chi[1..].iter().all(|v| v.abs() < 1e-10));

        let mut r = rng::seeded(5);
        let x = rng::normal_vec(&mut r, 24);
        let chi = b.forward(&x).unwrap();
        assert!((norm(&chi) - norm(&x)).abs() < 1e-10 * norm(&x));

        let mut delta = vec![0.0; 24];
        delta[0] = 1.0;
        let chi = b.forward(&delta).unwrap();
        assert!((norm(&chi) - 1.0).abs() < 1e-12);
        // every complex frequency carries power 1/n
        let block = b.block().unwrap();
        let mut k = 0;
        while k < 24 {
            let row = block.row(k);
            let self_conj = (0..24).all(|j| (row[j].abs() - row[0].abs()).abs() < 1e-12)
                && (row[0].abs() - (1.0 / 24f64).sqrt()).abs() < 1e-12;
            if self_conj {
                assert!((chi[k].powi(2) - 1.0 / 24.0).abs() < 1e-12);
                k += 1;
            } else {
                let p = chi[k].powi(2) + chi[k + 1].powi(2);
                assert!((p - 2.0 / 24.0).abs() < 1e-12, "bin {k}: {p}");
                k += 2;
            }
        }
        let labels = b.labels();
        assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn column_grouping_counts() {
        assert_eq!(column_grouping(Shape::new(2, 2, 1).unwrap()), vec![1, 2, 1, 2]);
        let g = column_grouping(Shape::new(32, 32, 3).unwrap());
        for col in 1..=32 {
            assert_eq!(g.iter().filter(|&&x| x == col).count(), 96);
        }
        let g = column_grouping(Shape::new(3, 5, 2).unwrap());
        assert_eq!(*g.iter().max().unwrap(), 5);
    }

    #[test]
    fn pca_isotropic_and_diagonal() {
        let shape = Shape::vector(3);
        let b = build_pca_basis(&DMatrix::identity(3, 3), true, 1e-6, shape).unwrap();
        assert!(b.scaling().iter().all(|s| (s - 1.0).abs() < 1e-12));
        let x = [0.3, -1.0, 2.0];
        let chi = b.forward(&x).unwrap();
        assert!((norm(&chi) - norm(&x)).abs() < 1e-12);

        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let b = build_pca_basis(&cov, true, 1e-6, Shape::vector(2)).unwrap();
        assert!((b.scaling()[0] - 2.0).abs() < 1e-12);
        assert!((b.scaling()[1] - 1.0).abs() < 1e-12);
        assert!((b.labels()[0] + 4f64.ln()).abs() < 1e-12);
        // transformed covariance M cov M^T = I
        let bl = b.block().unwrap();
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(b.scaling().to_vec()));
        let m = s.try_inverse().unwrap() * bl;
        let t = &m * &cov * m.transpose();
        assert!((t - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }

    #[test]
    fn pca_rejects_asymmetric_input() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(build_pca_basis(&cov, false, 1e-6, Shape::vector(2)).is_err());
        let cov = DMatrix::identity(2, 2);
        assert!(build_pca_basis(&cov, false, 0.0, Shape::vector(2)).is_err());
    }

    #[test]
    fn pca_sign_convention() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let b = build_pca_basis(&cov, false, 1e-6, Shape::vector(2)).unwrap();
        for r in 0..2 {
            let row = b.block().unwrap().row(r);
            let pivot = if row[0].abs() >= row[1].abs() { row[0] } else { row[1] };
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn loglik_base_change_cases() {
        let b = BasisSpec::identity(Shape::vector(3));
        assert_eq!(b.loglik_base_change(-1.25).unwrap(), -1.25);
        let b = b.with_scaling(vec![2.0; 3]).unwrap();
        assert!((b.loglik_base_change(-1.0).unwrap() - (-1.0 - 3.0 * 2f64.ln())).abs() < 1e-14);
        // standard normal chi with S = diag(2, 1): density of phi = 0 is (2 pi)^-1 / 2
        let b = BasisSpec::identity(Shape::vector(2)).with_scaling(vec![2.0, 1.0]).unwrap();
        let log_chi = -(2.0 * PI).ln();
        let phi_density = b.loglik_base_change(log_chi).unwrap().exp();
        assert!((phi_density - 0.5 / (2.0 * PI)).abs() < 1e-15);
        assert!(loglik_base_change(&[1.0, -1.0], 0.0).is_err());
    }

    #[test]
    fn container_roundtrip_all_kinds() {
        let shape = Shape::new(4, 4, 2).unwrap();
        let mut r = rng::seeded(9);
        let a = DMatrix::from_fn(16, 16, |_, _| rng::normal(&mut r));
        let cov = &a * a.transpose();
        let bases = vec![
            BasisSpec::identity(shape),
            BasisSpec::permutation(shape),
            BasisSpec::haar(shape, 2).unwrap(),
            BasisSpec::fft(shape).unwrap(),
            build_pca_basis(&cov, true, 1e-6, shape).unwrap(),
        ];
        let x = rng::normal_vec(&mut r, shape.dim());
        for b in bases {
            let mut buf = Vec::new();
            b.to_container().write_to(&mut buf).unwrap();
            let back = BasisSpec::from_container(Container::read_from(&buf[..]).unwrap()).unwrap();
            assert_eq!(back.kind(), b.kind());
            assert_eq!(back.scaling(), b.scaling());
            assert_eq!(back.labels(), b.labels());
            assert_eq!(back.forward(&x).unwrap(), b.forward(&x).unwrap());
        }
    }
}
