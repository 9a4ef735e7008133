use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Grid, Real, RngStream};

/// Round-trip tolerance enforced on construction and on load.
pub const ROUND_TRIP_TOL: f64 = 1e-10;

/// Affine invertible map between a pixel space and a latent space.
///
/// `encode(x) = F vec(x) + b`, `decode(z) = G (vec(z) - b)` with `G F = I`.
/// `F` is `latent_dim x pixel_dim` and must have full column rank, so the
/// latent may be larger than (but never smaller than) the pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCodec<T = f64> {
    pixel_shape: Vec<usize>,
    latent_shape: Vec<usize>,
    forward: Vec<T>,
    bias: Vec<T>,
    inverse: Vec<T>,
}

/// On-disk form: the inverse is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodecRecord {
    pub pixel_shape: Vec<usize>,
    pub latent_shape: Vec<usize>,
    pub forward_matrix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl<T: Real> LinearCodec<T> {
    pub fn new(
        pixel_shape: Vec<usize>,
        latent_shape: Vec<usize>,
        forward: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let p: usize = pixel_shape.iter().product();
        let l: usize = latent_shape.iter().product();
        if p == 0 || l == 0 {
            return Err(shape_err!("codec shapes must be nonempty"));
        }
        if l < p {
            return Err(shape_err!("latent dim {l} smaller than pixel dim {p}; codec cannot be invertible"));
        }
        if forward.len() != l * p || bias.len() != l {
            return Err(shape_err!(
                "forward matrix must be {l}x{p} and bias length {l}, got {} and {}",
                forward.len(),
                bias.len()
            ));
        }
        if forward.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NumericalDomain("codec parameters must be finite".into()));
        }
        let diagonal = l == p && forward.iter().enumerate().all(|(k, v)| k / p == k % p || *v == 0.0);
        let inverse = if diagonal { Self::diagonal_inverse(&forward, p)? } else { Self::left_inverse(&forward, l, p)? };
        Ok(Self {
            pixel_shape,
            latent_shape,
            forward: forward.into_iter().map(T::of).collect(),
            bias: bias.into_iter().map(T::of).collect(),
            inverse: inverse.into_iter().map(T::of).collect(),
        })
    }

    fn diagonal_inverse(forward: &[f64], n: usize) -> Result<Vec<f64>> {
        let mut inverse = vec![0.0; n * n];
        for i in 0..n {
            let d = forward[i * n + i];
            if d == 0.0 {
                return Err(Error::NumericalDomain("codec forward matrix is rank deficient".into()));
            }
            let err = (d.recip() * d - 1.0).abs();
            if err > ROUND_TRIP_TOL {
                return Err(Error::NumericalDomain(format!(
                    "codec round trip error {err:e} exceeds {ROUND_TRIP_TOL:e}"
                )));
            }
            inverse[i * n + i] = d.recip();
        }
        Ok(inverse)
    }

    /// Row-major `p x l` left inverse of the row-major `l x p` matrix.
    fn left_inverse(forward: &[f64], l: usize, p: usize) -> Result<Vec<f64>> {
        let f = DMatrix::from_row_slice(l, p, forward);
        // left inverse (F^T F)^{-1} F^T; equals F^{-1} when square
        let gram = f.transpose() * &f;
        let gram_inv = gram
            .try_inverse()
            .ok_or_else(|| Error::NumericalDomain("codec forward matrix is rank deficient".into()))?;
        let g = gram_inv * f.transpose();
        let err = (&g * &f - DMatrix::<f64>::identity(p, p)).abs().max();
        if err > ROUND_TRIP_TOL {
            return Err(Error::NumericalDomain(format!(
                "codec round trip error {err:e} exceeds {ROUND_TRIP_TOL:e}"
            )));
        }
        Ok(g.transpose().as_slice().to_vec())
    }

    pub fn identity(shape: Vec<usize>) -> Result<Self> {
        Self::scaled(shape, 1.0)
    }

    /// `encode(x) = scale * x`.
    pub fn scaled(shape: Vec<usize>, scale: f64) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut f = vec![0.0; n * n];
        for i in 0..n {
            f[i * n + i] = scale;
        }
        Self::new(shape.clone(), shape, f, vec![0.0; n])
    }

    /// Haar-random orthogonal forward matrix with an optional bias of
    /// standard deviation `bias_scale`.
    pub fn random_orthogonal(shape: Vec<usize>, bias_scale: f64, rng: &mut RngStream) -> Result<Self> {
        let n: usize = shape.iter().product();
        let q = random_orthogonal_matrix(n, rng);
        let bias = (0..n).map(|_| bias_scale * rng.normal()).collect();
        Self::new(shape.clone(), shape, row_major(&q), bias)
    }

    pub fn from_record(rec: &CodecRecord) -> Result<Self> {
        Self::new(rec.pixel_shape.clone(), rec.latent_shape.clone(), rec.forward_matrix.clone(), rec.bias.clone())
    }

    pub fn to_record(&self) -> CodecRecord {
        CodecRecord {
            pixel_shape: self.pixel_shape.clone(),
            latent_shape: self.latent_shape.clone(),
            forward_matrix: self.forward.iter().map(|v| v.to_f64_lossy()).collect(),
            bias: self.bias.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn pixel_shape(&self) -> &[usize] {
        &self.pixel_shape
    }

    pub fn latent_shape(&self) -> &[usize] {
        &self.latent_shape
    }

    pub fn forward_matrix(&self) -> &[T] {
        &self.forward
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    fn pixel_dim(&self) -> usize {
        self.pixel_shape.iter().product()
    }

    fn latent_dim(&self) -> usize {
        self.latent_shape.iter().product()
    }

    /// Whether `F F^T = I` within `tol` (square, orthogonal forward map).
    pub fn is_orthogonal(&self, tol: f64) -> bool {
        let (l, p) = (self.latent_dim(), self.pixel_dim());
        if l != p {
            return false;
        }
        let f = DMatrix::from_row_slice(l, p, &self.forward.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
        (&f * f.transpose() - DMatrix::<f64>::identity(l, l)).abs().max() <= tol
    }

    pub fn encode(&self, x: &Grid<T>) -> Result<Grid<T>> {
        x.expect_shape(&self.pixel_shape)?;
        let p = self.pixel_dim();
        let out = self
            .forward
            .chunks_exact(p)
            .zip(&self.bias)
            .map(|(row, &b)| dot(row, x.data()) + b)
            .collect();
        Grid::from_raw(self.latent_shape.clone(), out).ensure_finite("encode")
    }

    pub fn decode(&self, z: &Grid<T>) -> Result<Grid<T>> {
        z.expect_shape(&self.latent_shape)?;
        let centered: Vec<T> = z.data().iter().zip(&self.bias).map(|(&v, &b)| v - b).collect();
        let l = self.latent_dim();
        let out = self.inverse.chunks_exact(l).map(|row| dot(row, &centered)).collect();
        Grid::from_raw(self.pixel_shape.clone(), out).ensure_finite("decode")
    }

    pub fn cast<U: Real>(&self) -> LinearCodec<U> {
        let c = |v: &[T]| v.iter().map(|x| U::of(x.to_f64_lossy())).collect();
        LinearCodec {
            pixel_shape: self.pixel_shape.clone(),
            latent_shape: self.latent_shape.clone(),
            forward: c(&self.forward),
            bias: c(&self.bias),
            inverse: c(&self.inverse),
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// QR of a Gaussian matrix with the sign convention that makes the result
/// Haar-distributed.
pub fn random_orthogonal_matrix(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
    let qr = a.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_noise;

    #[test]
    fn identity_and_scale_examples() {
        let id = LinearCodec::<f64>::identity(vec![2]).unwrap();
        let x = Grid::from_vec(vec![1.5, -2.0]).unwrap();
        assert_eq!(id.encode(&x).unwrap().data(), &[1.5, -2.0]);

        let s2 = LinearCodec::<f64>::scaled(vec![2], 2.0).unwrap();
        let x = Grid::from_vec(vec![1.0, -1.0]).unwrap();
        assert_eq!(s2.encode(&x).unwrap().data(), &[2.0, -2.0]);
        let z = Grid::from_vec(vec![2.0, -2.0]).unwrap();
        assert_eq!(s2.decode(&z).unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn orthogonal_codec_preserves_norm_and_round_trips() {
        let mut rng = RngStream::new(11);
        let c = LinearCodec::<f64>::random_orthogonal(vec![4, 4], 0.0, &mut rng).unwrap();
        assert!(c.is_orthogonal(1e-12));
        let cb = LinearCodec::<f64>::random_orthogonal(vec![4, 4], 0.5, &mut rng).unwrap();
        for _ in 0..100 {
            let x: Grid<f64> = gaussian_noise(&[4, 4], &mut rng).unwrap();
            let z = c.encode(&x).unwrap();
            assert!((z.norm2() - x.norm2()).abs() < 1e-10);
            let back = cb.decode(&cb.encode(&x).unwrap()).unwrap();
            assert!(back.max_abs_diff(&x).unwrap() < 1e-10);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let c = LinearCodec::<f64>::identity(vec![2, 2]).unwrap();
        let x = Grid::<f64>::zeros(vec![4]).unwrap();
        assert!(matches!(c.encode(&x), Err(Error::Shape(_))));
        assert!(matches!(c.decode(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn singular_or_short_latent_rejected() {
        assert!(LinearCodec::<f64>::new(vec![2], vec![2], vec![1.0, 2.0, 2.0, 4.0], vec![0.0; 2]).is_err());
        assert!(LinearCodec::<f64>::new(vec![2], vec![1], vec![1.0, 0.0], vec![0.0]).is_err());
    }

    #[test]
    fn tall_codec_left_inverse() {
        let c = LinearCodec::<f64>::new(vec![2], vec![3], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], vec![0.1, 0.2, 0.3])
            .unwrap();
        let x = Grid::from_vec(vec![0.7, -1.3]).unwrap();
        assert!(c.decode(&c.encode(&x).unwrap()).unwrap().max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn diagonal_codec_inverts_exactly() {
        let c = LinearCodec::<f64>::new(vec![3], vec![3], vec![2.0, 0.0, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0, 4.0], vec![1.0, 0.0, -1.0])
            .unwrap();
        let x = Grid::from_vec(vec![0.3, 1.1, -2.0]).unwrap();
        let z = c.encode(&x).unwrap();
        assert!(z.max_abs_diff(&Grid::from_vec(vec![1.6, -0.55, -9.0]).unwrap()).unwrap() < 1e-15);
        assert!(c.decode(&z).unwrap().max_abs_diff(&x).unwrap() < 1e-15);
        assert!(LinearCodec::<f64>::new(vec![2], vec![2], vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 2]).is_err());
        let big = LinearCodec::<f64>::identity(vec![64, 64]).unwrap();
        let y = Grid::from_fn2(64, 64, |i, j| (i * 64 + j) as f64).unwrap();
        assert_eq!(big.decode(&big.encode(&y).unwrap()).unwrap().data(), y.data());
    }

    #[test]
    fn record_round_trip_reverifies() {
        let c = LinearCodec::<f64>::random_orthogonal(vec![3], 0.2, &mut RngStream::new(1)).unwrap();
        let json = serde_json::to_string(&c.to_record()).unwrap();
        let back = LinearCodec::<f64>::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.forward_matrix(), c.forward_matrix());
        let mut bad: CodecRecord = serde_json::from_str(&json).unwrap();
        bad.forward_matrix = vec![0.0; 9];
        assert!(LinearCodec::<f64>::from_record(&bad).is_err());
    }
}
