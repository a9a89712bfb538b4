use candle_core::{Tensor, D};
use ndarray::{Array2, Array3};

use crate::error::{shape_err, Result};

/// The discrete latent vocabulary: `K` code vectors of dimension `n_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Array2<f32>,
}

impl Codebook {
    pub fn new(vectors: Array2<f32>) -> Result<Self> {
        if vectors.nrows() < 2 {
            return Err(shape_err(format!("codebook needs at least 2 codes, got {}", vectors.nrows())));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(shape_err("codebook holds non-finite entries"));
        }
        Ok(Self { vectors })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (k, n_z) = t.dims2()?;
        let v: Vec<f32> = t.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1()?;
        Self::new(Array2::from_shape_vec((k, n_z), v).map_err(|e| shape_err(e.to_string()))?)
    }

    pub fn size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn code_dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f32> {
        &self.vectors
    }
}

/// Continuous latents laid out `h x w x n_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    pub values: Array3<f32>,
}

impl LatentGrid {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    /// (n_z, h, w) tensor with a leading batch axis of 1.
    pub fn to_tensor(&self, device: &candle_core::Device) -> Result<Tensor> {
        let (h, w, n_z) = self.values.dim();
        let flat: Vec<f32> = self.values.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (1, h, w, n_z), device)?
            .permute((0, 3, 1, 2))?
            .contiguous()?)
    }

    /// From a (1, n_z, h, w) or (n_z, h, w) tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = if t.rank() == 4 { t.squeeze(0)? } else { t.clone() };
        let (n_z, h, w) = t.dims3()?;
        let v: Vec<f32> = t
            .to_dtype(candle_core::DType::F32)?
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_vec1()?;
        Ok(Self {
            values: Array3::from_shape_vec((h, w, n_z), v).map_err(|e| shape_err(e.to_string()))?,
        })
    }
}

/// Code indices of one frame, `h x w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    pub indices: Array2<u32>,
}

impl TokenGrid {
    pub fn dims(&self) -> (usize, usize) {
        self.indices.dim()
    }

    /// Raster-scan order.
    pub fn flat(&self) -> Vec<u32> {
        self.indices.iter().copied().collect()
    }
}

/// Nearest code by Euclidean distance; ties go to the lowest index.
/// Returns (index, squared distance).
pub fn nearest_code(z: &[f64], codebook: &[f64], code_dim: usize) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (k, code) in codebook.chunks_exact(code_dim).enumerate() {
        let d: f64 = z.iter().zip(code).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Replaces each latent cell by its nearest code.
pub fn quantize(z_hat: &LatentGrid, codebook: &Codebook) -> Result<(LatentGrid, TokenGrid)> {
    let (h, w, n_z) = z_hat.dims();
    if n_z != codebook.code_dim() {
        return Err(shape_err(format!(
            "latent code dimension {n_z} differs from codebook dimension {}",
            codebook.code_dim()
        )));
    }
    let book: Vec<f64> = codebook.vectors.iter().map(|&v| v as f64).collect();
    let mut indices = Array2::<u32>::zeros((h, w));
    let mut z_q = Array3::<f32>::zeros((h, w, n_z));
    let mut cell = vec![0.0f64; n_z];
    for i in 0..h {
        for j in 0..w {
            for (c, slot) in cell.iter_mut().enumerate() {
                *slot = z_hat.values[[i, j, c]] as f64;
            }
            let (k, _) = nearest_code(&cell, &book, n_z);
            indices[[i, j]] = k as u32;
            for c in 0..n_z {
                z_q[[i, j, c]] = codebook.vectors[[k, c]];
            }
        }
    }
    Ok((LatentGrid { values: z_q }, TokenGrid { indices }))
}

/// Batched quantization of a (B, n_z, h, w) latent tensor against a (K, n_z)
/// codebook tensor. Returns raster-ordered indices per batch element and
/// the quantized latents, differentiable with respect to the codebook.
pub fn quantize_tensor(z_hat: &Tensor, codebook: &Tensor) -> Result<(Vec<u32>, Tensor)> {
    let (b, n_z, h, w) = z_hat.dims4()?;
    let (_, cb_dim) = codebook.dims2()?;
    if cb_dim != n_z {
        return Err(shape_err(format!(
            "latent code dimension {n_z} differs from codebook dimension {cb_dim}"
        )));
    }
    let cells: Vec<f64> = z_hat
        .detach()
        .permute((0, 2, 3, 1))?
        .to_dtype(candle_core::DType::F64)?
        .flatten_all()?
        .to_vec1()?;
    let book: Vec<f64> = codebook
        .detach()
        .to_dtype(candle_core::DType::F64)?
        .flatten_all()?
        .to_vec1()?;
    let indices: Vec<u32> = cells
        .chunks_exact(n_z)
        .map(|cell| nearest_code(cell, &book, n_z).0 as u32)
        .collect();
    let idx = Tensor::from_vec(indices.clone(), b * h * w, z_hat.device())?;
    let z_q = codebook
        .index_select(&idx, 0)?
        .reshape((b, h, w, n_z))?
        .permute((0, 3, 1, 2))?
        .contiguous()?;
    Ok((indices, z_q))
}

/// Forward value `z_q`, gradient passed to `z_hat` unchanged.
pub fn straight_through(z_hat: &Tensor, z_q: &Tensor) -> Result<Tensor> {
    Ok((z_hat + (z_q - z_hat)?.detach())?)
}

/// Squared distance from each latent cell to its assigned code, for
/// diagnostics.
pub fn assignment_error(z_hat: &Tensor, z_q: &Tensor) -> Result<Tensor> {
    Ok((z_hat - z_q)?.sqr()?.sum(D::Minus1)?)
}
