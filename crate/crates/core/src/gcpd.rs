//! Group consistency preserving decoder: three cascaded feature-decoding
//! units, each doubling resolution and halving channels while re-injecting
//! an order-insensitive group statistic, followed by the co-saliency head.

use crate::error::{CoadError, Result};
use crate::nn::{Conv2dLayer, ConvTranspose2dLayer, Init, Linear, Param};
use crate::tensor::{Scalar, Tensor};

/// Column-wise softmax-weighted row aggregation of `Y in R^{N x C}` into a
/// length-C group vector; order-insensitive across rows.
pub fn group_vector<T: Scalar>(y: &Tensor<T>) -> Result<Tensor<T>> {
    if y.rank() != 2 {
        return Err(CoadError::ShapeMismatch {
            op: "group_vector",
            detail: format!("expected N x C matrix, got {:?}", y.shape()),
        });
    }
    y.softmax_weighted_sum0()
}

/// One decoding unit: 1x1 conv halves channels, a 4x4/stride-2 deconvolution
/// doubles resolution, and a shared MLP recalibrates channels from the
/// concatenated per-image and group descriptors.
pub struct FdUnit<T: Scalar> {
    reduce: Conv2dLayer<T>,             // 1x1: C -> C/2
    deconv: ConvTranspose2dLayer<T>,    // C/2 -> C/2, k4 s2 p1 (exact 2x)
    mlp_in: Linear<T>,                  // 2*Cd -> Cd
    mlp_out: Linear<T>,                 // Cd -> Cd, sigmoid gate
    pub channels_out: usize,
}

impl<T: Scalar> FdUnit<T> {
    pub fn new(name: &str, channels_in: usize, init: &mut Init) -> Result<Self> {
        if channels_in < 2 || channels_in % 2 != 0 {
            return Err(CoadError::Config(format!(
                "FD unit needs an even channel count >= 2, got {channels_in}"
            )));
        }
        let cd = channels_in / 2;
        Ok(FdUnit {
            reduce: Conv2dLayer::new(&format!("{name}.reduce"), channels_in, cd, 1, 1, 0, 1, init)?,
            deconv: ConvTranspose2dLayer::new(&format!("{name}.deconv"), cd, cd, 4, 2, 1, init)?,
            mlp_in: Linear::new(&format!("{name}.mlp.in"), 2 * cd, cd, init)?,
            mlp_out: Linear::new(&format!("{name}.mlp.out"), cd, cd, init)?,
            channels_out: cd,
        })
    }

    /// `N x (C x H x W) -> N x (C/2 x 2H x 2W)`, equivariant in the image
    /// order; the group vector y is the only cross-image coupling.
    pub fn forward(&self, xs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        Ok(self.forward_detailed(xs)?.0)
    }

    /// Like [`forward`], also returning the group vector y.
    pub fn forward_detailed(&self, xs: &[Tensor<T>]) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        if xs.is_empty() {
            return Err(CoadError::ShapeMismatch {
                op: "fd_unit",
                detail: "empty group".into(),
            });
        }
        let mut upsampled = Vec::with_capacity(xs.len());
        let mut pooled = Vec::with_capacity(xs.len());
        for x in xs {
            let x_hat = self.deconv.forward(&self.reduce.forward(x)?)?;
            pooled.push(x_hat.global_avg_pool()?);
            upsampled.push(x_hat);
        }
        let y_mat = Tensor::stack0(&pooled)?;
        let y = group_vector(&y_mat)?;
        let mut out = Vec::with_capacity(xs.len());
        for (x_hat, x_vec) in upsampled.into_iter().zip(pooled) {
            let desc = Tensor::concat0(&[x_vec, y.clone()])?;
            let gate = self.mlp_out.forward(&self.mlp_in.forward(&desc)?.relu())?.sigmoid();
            out.push(x_hat.broadcast_mul_channel_vec(&gate)?);
        }
        Ok((out, y))
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        self.reduce.collect_params(out);
        self.deconv.collect_params(out);
        self.mlp_in.collect_params(out);
        self.mlp_out.collect_params(out);
    }
}

/// Three stacked FD units: `C x H x W -> C/8 x 8H x 8W`.
pub struct Gcpd<T: Scalar> {
    units: Vec<FdUnit<T>>,
}

impl<T: Scalar> Gcpd<T> {
    pub fn new(channels: usize, init: &mut Init) -> Result<Self> {
        if channels % 8 != 0 {
            return Err(CoadError::Config(format!(
                "decoder input channels must be divisible by 8, got {channels}"
            )));
        }
        let mut units = Vec::with_capacity(3);
        let mut c = channels;
        for i in 0..3 {
            let unit = FdUnit::new(&format!("gcpd.fd{i}"), c, init)?;
            c = unit.channels_out;
            units.push(unit);
        }
        Ok(Gcpd { units })
    }

    pub fn forward(&self, xs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let mut cur = xs.to_vec();
        for unit in &self.units {
            cur = unit.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Decoded features plus the group vector of every FD unit.
    pub fn forward_with_group_vectors(
        &self,
        xs: &[Tensor<T>],
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
        let mut cur = xs.to_vec();
        let mut ys = Vec::with_capacity(self.units.len());
        for unit in &self.units {
            let (next, y) = unit.forward_detailed(&cur)?;
            cur = next;
            ys.push(y);
        }
        Ok((cur, ys))
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        for u in &self.units {
            u.collect_params(out);
        }
    }
}

/// Co-saliency head: a 1x1 convolution with sigmoid activation; output maps
/// lie strictly in (0,1).
pub struct CoSalHead<T: Scalar> {
    conv: Conv2dLayer<T>,
}

impl<T: Scalar> CoSalHead<T> {
    pub fn new(channels_in: usize, init: &mut Init) -> Result<Self> {
        Ok(CoSalHead {
            conv: Conv2dLayer::new("cosh", channels_in, 1, 1, 1, 0, 1, init)?,
        })
    }

    pub fn forward(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.conv.forward(z)?.sigmoid())
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        self.conv.collect_params(out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_maps(n: usize, c: usize, hw: usize, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let data = (0..c * hw * hw).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::new(&[c, hw, hw], data).unwrap()
            })
            .collect()
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = vec![];
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q: Vec<usize> = p.iter().map(|&x| x + 1).collect();
                q.insert(pos, 0);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn group_vector_singleton_identical_and_permutation_invariant() {
        let single = Tensor::new(&[1, 3], vec![0.3, -0.5, 2.0]).unwrap();
        assert_eq!(group_vector(&single).unwrap().to_vec(), vec![0.3, -0.5, 2.0]);

        let rows = vec![0.1f64, 0.9, 0.1, 0.9, 0.1, 0.9];
        let same = Tensor::new(&[3, 2], rows).unwrap();
        let y = group_vector(&same).unwrap().to_vec();
        assert!((y[0] - 0.1).abs() < 1e-12 && (y[1] - 0.9).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base_t = Tensor::new(&[3, 4], data.clone()).unwrap();
        let base = group_vector(&base_t).unwrap().to_vec();
        for perm in permutations(3) {
            let mut permuted = vec![0.0; 12];
            for (to, &from) in perm.iter().enumerate() {
                permuted[to * 4..(to + 1) * 4].copy_from_slice(&data[from * 4..(from + 1) * 4]);
            }
            let y = group_vector(&Tensor::new(&[3, 4], permuted).unwrap())
                .unwrap()
                .to_vec();
            for (a, b) in y.iter().zip(&base) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fd_unit_halves_channels_and_doubles_extent() {
        let mut init = Init::new(41);
        let unit: FdUnit<f64> = FdUnit::new("t", 8, &mut init).unwrap();
        let xs = random_maps(2, 8, 4, 1);
        let out = unit.forward(&xs).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].shape(), &[4, 8, 8]);
        assert!(FdUnit::<f64>::new("t2", 7, &mut init).is_err());
    }

    #[test]
    fn fd_unit_is_permutation_equivariant() {
        let mut init = Init::new(42);
        let unit: FdUnit<f64> = FdUnit::new("t", 8, &mut init).unwrap();
        let xs = random_maps(3, 8, 4, 2);
        let base: Vec<Vec<f64>> = unit.forward(&xs).unwrap().iter().map(|t| t.to_vec()).collect();
        for perm in permutations(3) {
            let shuffled: Vec<_> = perm.iter().map(|&i| xs[i].clone()).collect();
            let out = unit.forward(&shuffled).unwrap();
            for (slot, &src) in perm.iter().enumerate() {
                let drift = out[slot]
                    .to_vec()
                    .iter()
                    .zip(&base[src])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(drift <= 1e-5, "drift {drift}");
            }
        }
    }

    #[test]
    fn singleton_group_reduces_to_channel_recalibration() {
        let mut init = Init::new(43);
        let unit: FdUnit<f64> = FdUnit::new("t", 4, &mut init).unwrap();
        let xs = random_maps(1, 4, 4, 3);
        let out = unit.forward(&xs).unwrap();
        // y == x_vec, so the gate is MLP([x;x]); output = X_hat * gate
        let x_hat = unit
            .deconv
            .forward(&unit.reduce.forward(&xs[0]).unwrap())
            .unwrap();
        let x_vec = x_hat.global_avg_pool().unwrap();
        let desc = Tensor::concat0(&[x_vec.clone(), x_vec]).unwrap();
        let gate = unit
            .mlp_out
            .forward(&unit.mlp_in.forward(&desc).unwrap().relu())
            .unwrap()
            .sigmoid();
        let expect = x_hat.broadcast_mul_channel_vec(&gate).unwrap();
        for (a, b) in out[0].to_vec().iter().zip(expect.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_units_shrink_channels_by_8_and_grow_extent_by_8() {
        let mut init = Init::new(44);
        let gcpd: Gcpd<f64> = Gcpd::new(16, &mut init).unwrap();
        let xs = random_maps(2, 16, 2, 4);
        let out = gcpd.forward(&xs).unwrap();
        assert_eq!(out[0].shape(), &[2, 16, 16]);
    }

    #[test]
    fn head_outputs_open_unit_interval_at_full_resolution() {
        let mut init = Init::new(45);
        let head: CoSalHead<f64> = CoSalHead::new(2, &mut init).unwrap();
        let z = random_maps(1, 2, 16, 5).pop().unwrap();
        let m = head.forward(&z).unwrap();
        assert_eq!(m.shape(), &[1, 16, 16]);
        assert!(m.to_vec().iter().all(|&v| v > 0.0 && v < 1.0));

        head.conv.weight.tensor().set_data(&[0.0, 0.0]);
        head.conv.bias.tensor().set_data(&[0.0]);
        let m = head.forward(&z).unwrap();
        assert!(m.to_vec().iter().all(|&v| v == 0.5));
    }
}
