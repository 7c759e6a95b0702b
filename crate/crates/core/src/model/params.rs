use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::SimRng;

/// Shape of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Vocabulary size including the pad token at id 0.
    pub vocab_size: usize,
    pub token_dim: usize,
    /// News and user embedding dimension `d`.
    pub dim: usize,
    pub num_basis: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 || self.token_dim < 1 || self.dim < 1 || self.num_basis < 1 {
            return Err(Error::invalid(format!("all model dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let (v, t, d, b) = (self.vocab_size, self.token_dim, self.dim, self.num_basis);
        v * t + t + t * d + d * d + d + b * d
    }
}

/// News encoder: token embeddings, additive-attention pooling, linear projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsEncoderParams {
    /// `V × d_tok`. Row 0 is the trainable pad token `e_0`.
    pub token_embeddings: Matrix,
    pub pool_query: Vec<f64>,
    /// `d_tok × d`; a pooled token vector `h` maps to `projectionᵀ h`.
    pub projection: Matrix,
}

impl NewsEncoderParams {
    pub fn pad_token(&self) -> &[f64] {
        self.token_embeddings.row(0)
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embeddings.rows()
    }
}

/// User encoder: additive attention `q · tanh(W r_i)` over the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEncoderParams {
    pub attn_query: Vec<f64>,
    pub attn_proj: Matrix,
}

/// The `B` basic interest vectors, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisTable {
    pub basis: Matrix,
}

impl BasisTable {
    pub fn num_basis(&self) -> usize {
        self.basis.rows()
    }

    pub fn dim(&self) -> usize {
        self.basis.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub news: NewsEncoderParams,
    pub user: UserEncoderParams,
    pub basis: BasisTable,
}

/// Names of the parameter blocks in flattening order.
pub const BLOCK_NAMES: [&str; 6] = [
    "token_embeddings",
    "pool_query",
    "projection",
    "attn_proj",
    "attn_query",
    "basis",
];

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            news: NewsEncoderParams {
                token_embeddings: Matrix::zeros(dims.vocab_size, dims.token_dim),
                pool_query: vec![0.0; dims.token_dim],
                projection: Matrix::zeros(dims.token_dim, dims.dim),
            },
            user: UserEncoderParams {
                attn_query: vec![0.0; dims.dim],
                attn_proj: Matrix::zeros(dims.dim, dims.dim),
            },
            basis: BasisTable {
                basis: Matrix::zeros(dims.num_basis, dims.dim),
            },
        }
    }

    /// Token embeddings and basis rows ~ U[-0.1, 0.1]; attention queries
    /// ~ N(0, 0.05²); projections Glorot-uniform.
    pub fn init(dims: ModelDims, rng: &mut SimRng) -> Result<Self> {
        dims.validate()?;
        let mut p = Self::zeros(dims);
        let query = Normal::new(0.0, 0.05).expect("valid normal");
        fill_uniform(p.news.token_embeddings.as_mut_slice(), 0.1, rng);
        p.news.pool_query.iter_mut().for_each(|x| *x = query.sample(rng));
        let glorot = (6.0 / (dims.token_dim + dims.dim) as f64).sqrt();
        fill_uniform(p.news.projection.as_mut_slice(), glorot, rng);
        let glorot = (6.0 / (2 * dims.dim) as f64).sqrt();
        fill_uniform(p.user.attn_proj.as_mut_slice(), glorot, rng);
        p.user.attn_query.iter_mut().for_each(|x| *x = query.sample(rng));
        fill_uniform(p.basis.basis.as_mut_slice(), 0.1, rng);
        Ok(p)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab_size: self.news.token_embeddings.rows(),
            token_dim: self.news.token_embeddings.cols(),
            dim: self.news.projection.cols(),
            num_basis: self.basis.basis.rows(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.dims().num_params()
    }

    /// Parameter blocks as slices, in [`BLOCK_NAMES`] order.
    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            self.news.token_embeddings.as_slice(),
            &self.news.pool_query,
            self.news.projection.as_slice(),
            self.user.attn_proj.as_slice(),
            &self.user.attn_query,
            self.basis.basis.as_slice(),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.news.token_embeddings.as_mut_slice(),
            &mut self.news.pool_query,
            self.news.projection.as_mut_slice(),
            self.user.attn_proj.as_mut_slice(),
            &mut self.user.attn_query,
            self.basis.basis.as_mut_slice(),
        ]
    }

    /// `(rows, cols)` of every block, vectors reported as `(1, n)`.
    pub fn block_shapes(&self) -> [(usize, usize); 6] {
        let d = self.dims();
        [
            (d.vocab_size, d.token_dim),
            (1, d.token_dim),
            (d.token_dim, d.dim),
            (d.dim, d.dim),
            (1, d.dim),
            (d.num_basis, d.dim),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for b in self.blocks() {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn unflatten(dims: ModelDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.num_params() {
            return Err(Error::invalid(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                dims.num_params()
            )));
        }
        let mut p = Self::zeros(dims);
        let mut offset = 0;
        for block in p.blocks_mut() {
            block.copy_from_slice(&flat[offset..offset + block.len()]);
            offset += block.len();
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }
}

fn fill_uniform(xs: &mut [f64], bound: f64, rng: &mut SimRng) {
    xs.iter_mut().for_each(|x| *x = rng.random_range(-bound..bound));
}
