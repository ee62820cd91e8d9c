//! Checkpoints: flat trainable parameters plus batch-norm running statistics.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::spec::{Layer, ModelSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T = f32> {
    pub params: Vec<T>,
    /// Per BN layer: running mean followed by running variance.
    pub bn_stats: Vec<T>,
    pub spec_hash: String,
    pub step_count: u64,
}

impl<T: Real> Checkpoint<T> {
    pub fn cast<U: Real>(&self) -> Checkpoint<U> {
        Checkpoint {
            params: self.params.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            bn_stats: self.bn_stats.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            spec_hash: self.spec_hash.clone(),
            step_count: self.step_count,
        }
    }

    pub fn same_spec(&self, other: &Checkpoint<T>) -> Result<()> {
        if self.spec_hash != other.spec_hash {
            return Err(Error::SpecMismatch {
                expected: self.spec_hash.clone(),
                found: other.spec_hash.clone(),
            });
        }
        if self.params.len() != other.params.len() || self.bn_stats.len() != other.bn_stats.len() {
            return Err(Error::Shape("checkpoint lengths differ".into()));
        }
        Ok(())
    }
}

impl Checkpoint<f32> {
    /// SHA-256 over the spec hash and the little-endian parameter and statistic bytes.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.spec_hash.as_bytes());
        for v in self.params.iter().chain(&self.bn_stats) {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

impl Network {
    /// Kaiming-uniform (fan-in) weights, PyTorch-style uniform biases, BN gamma 1 / beta 0,
    /// running mean 0 / variance 1.
    pub fn init<T: Real>(&self, seed: u64) -> Checkpoint<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); self.n_params()];
        for plan in &self.plans {
            let p = plan.param_offset;
            match plan.layer {
                Layer::Dense { inputs, outputs } => {
                    fill_kaiming(&mut rng, &mut params[p..p + inputs * outputs], inputs);
                    fill_bias(&mut rng, &mut params[p + inputs * outputs..][..outputs], inputs);
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let n = out_channels * fan_in;
                    fill_kaiming(&mut rng, &mut params[p..p + n], fan_in);
                    fill_bias(&mut rng, &mut params[p + n..][..out_channels], fan_in);
                }
                Layer::BatchNorm { features } => {
                    params[p..p + features].fill(T::one());
                }
                _ => {}
            }
        }
        let mut bn_stats = vec![T::zero(); self.n_stats()];
        for (_, f, off) in self.bn_layers() {
            bn_stats[off + f..off + 2 * f].fill(T::one());
        }
        Checkpoint {
            params,
            bn_stats,
            spec_hash: self.spec_hash().to_string(),
            step_count: 0,
        }
    }

    /// Verifies that `ckpt` belongs to this network and is well formed.
    pub fn check<T: Real>(&self, ckpt: &Checkpoint<T>) -> Result<()> {
        if ckpt.spec_hash != self.spec_hash() {
            return Err(Error::SpecMismatch {
                expected: self.spec_hash().to_string(),
                found: ckpt.spec_hash.clone(),
            });
        }
        if ckpt.params.len() != self.n_params() || ckpt.bn_stats.len() != self.n_stats() {
            return Err(Error::Shape(format!(
                "checkpoint has {} params / {} stats, network needs {} / {}",
                ckpt.params.len(),
                ckpt.bn_stats.len(),
                self.n_params(),
                self.n_stats()
            )));
        }
        for (_, f, off) in self.bn_layers() {
            if ckpt.bn_stats[off + f..off + 2 * f]
                .iter()
                .any(|&v| !(v > T::zero()) || !v.is_finite())
            {
                return Err(Error::InvalidParameter(
                    "running variance must be strictly positive".into(),
                ));
            }
        }
        Ok(())
    }
}

fn fill_kaiming<T: Real>(rng: &mut ChaCha8Rng, out: &mut [T], fan_in: usize) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in out {
        *v = T::from_f64(rng.random_range(-bound..bound));
    }
}

fn fill_bias<T: Real>(rng: &mut ChaCha8Rng, out: &mut [T], fan_in: usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in out {
        *v = T::from_f64(rng.random_range(-bound..bound));
    }
}

/// ‖θ_a − θ_b‖₂ over trainable parameters only (BN running statistics ignored).
pub fn l2_param_distance<T: Real>(a: &Checkpoint<T>, b: &Checkpoint<T>) -> Result<f64> {
    a.same_spec(b)?;
    let sq: f64 = a
        .params
        .iter()
        .zip(&b.params)
        .map(|(x, y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}

/// How running variances are blended along an interpolation path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnInterpolation {
    #[default]
    Variance,
    StdDev,
}

/// `(1 − α)·a + α·b` on parameters and BN statistics.
pub fn interpolate<T: Real>(
    net: &Network,
    a: &Checkpoint<T>,
    b: &Checkpoint<T>,
    alpha: f64,
    mode: BnInterpolation,
) -> Result<Checkpoint<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "interpolation weight {alpha} outside [0, 1]"
        )));
    }
    a.same_spec(b)?;
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    if alpha == 1.0 {
        return Ok(b.clone());
    }
    let mix = |x: T, y: T| T::from_f64((1.0 - alpha) * x.to_f64() + alpha * y.to_f64());
    let params = a.params.iter().zip(&b.params).map(|(&x, &y)| mix(x, y)).collect();
    let mut bn_stats: Vec<T> = a
        .bn_stats
        .iter()
        .zip(&b.bn_stats)
        .map(|(&x, &y)| mix(x, y))
        .collect();
    if mode == BnInterpolation::StdDev {
        for (_, f, off) in net.bn_layers() {
            for j in off + f..off + 2 * f {
                let s = (1.0 - alpha) * a.bn_stats[j].to_f64().sqrt()
                    + alpha * b.bn_stats[j].to_f64().sqrt();
                bn_stats[j] = T::from_f64(s * s);
            }
        }
    }
    Ok(Checkpoint {
        params,
        bn_stats,
        spec_hash: a.spec_hash.clone(),
        step_count: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Multiply every selected weight by `factor`.
    Attenuate { factor: f64 },
    /// Zero exactly `round(fraction · n)` selected weights.
    Dropout { fraction: f64 },
    /// Add i.i.d. N(0, σ²) noise to every selected weight.
    Gaussian { sigma: f64 },
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Perturbation::Attenuate { factor } => factor > 0.0 && factor.is_finite(),
            Perturbation::Dropout { fraction } => (0.0..1.0).contains(&fraction),
            Perturbation::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid perturbation {self:?}")))
        }
    }
}

/// Applies a seeded weight-space perturbation to the parameters selected by `mask`
/// (all parameters when `None`). BN running statistics are left untouched.
pub fn perturb<T: Real>(
    ckpt: &Checkpoint<T>,
    kind: Perturbation,
    seed: u64,
    mask: Option<&[bool]>,
) -> Result<Checkpoint<T>> {
    kind.validate()?;
    if let Some(m) = mask {
        if m.len() != ckpt.params.len() {
            return Err(Error::Shape("perturbation mask length".into()));
        }
    }
    let selected: Vec<usize> = (0..ckpt.params.len())
        .filter(|&i| mask.is_none_or(|m| m[i]))
        .collect();
    let mut out = ckpt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        Perturbation::Attenuate { factor } => {
            for &i in &selected {
                out.params[i] = T::from_f64(out.params[i].to_f64() * factor);
            }
        }
        Perturbation::Dropout { fraction } => {
            let k = (fraction * selected.len() as f64).round() as usize;
            for j in sample(&mut rng, selected.len(), k) {
                out.params[selected[j]] = T::zero();
            }
        }
        Perturbation::Gaussian { sigma } => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma)
                    .map_err(|e| Error::InvalidParameter(e.to_string()))?;
                for &i in &selected {
                    let noise: f64 = normal.sample(&mut rng);
                    out.params[i] = T::from_f64(out.params[i].to_f64() + noise);
                }
            }
        }
    }
    Ok(out)
}

const MAGIC: &[u8; 5] = b"ULCK1";
const FORMAT_VERSION: u16 = 1;

/// Writes the ULCK1 checkpoint format:
///
/// ```text
/// "ULCK1" | u16 version | str spec_hash | str spec_json | u64 step_count
/// | u32 n_entries | n × (str name, u8 kind, u8 role, u8 ndim, ndim × u32)
/// | u64 n_params | u64 n_stats | f32 params… | f32 stats…
/// ```
///
/// Strings are a u32 byte length followed by UTF-8; all integers and floats are
/// little-endian. `role` is 0 for trainable tensors, 1 for running means,
/// 2 for running variances.
pub fn write_checkpoint<W: Write>(
    mut w: W,
    net: &Network,
    ckpt: &Checkpoint<f32>,
) -> Result<()> {
    net.check(ckpt)?;
    let mut buf = Vec::with_capacity(64 + 4 * (ckpt.params.len() + ckpt.bn_stats.len()));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut buf, &ckpt.spec_hash);
    put_str(&mut buf, &serde_json::to_string(net.spec())?);
    buf.extend_from_slice(&ckpt.step_count.to_le_bytes());

    let mut entries: Vec<(String, u8, u8, Vec<usize>)> = net
        .param_tensors()
        .iter()
        .map(|t| {
            let kind = net.spec().layers[t.layer].kind_code();
            (t.name.clone(), kind, 0u8, t.shape.clone())
        })
        .collect();
    for (layer, f, _) in net.bn_layers() {
        let kind = net.spec().layers[layer].kind_code();
        entries.push((format!("batch_norm{layer}.running_mean"), kind, 1, vec![f]));
        entries.push((format!("batch_norm{layer}.running_var"), kind, 2, vec![f]));
    }
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, kind, role, shape) in &entries {
        put_str(&mut buf, name);
        buf.push(*kind);
        buf.push(*role);
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    buf.extend_from_slice(&(ckpt.params.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ckpt.bn_stats.len() as u64).to_le_bytes());
    for v in ckpt.params.iter().chain(&ckpt.bn_stats) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a ULCK1 checkpoint, returning the embedded spec alongside it.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelSpec, Checkpoint<f32>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    let magic = cur.take(5)?;
    if magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic {magic:02x?}"),
        });
    }
    let version = u16::from_le_bytes(cur.array()?);
    if version != FORMAT_VERSION {
        return Err(cur.err(format!("unsupported format version {version}")));
    }
    let spec_hash = cur.string()?;
    let spec_json = cur.string()?;
    let spec: ModelSpec = serde_json::from_str(&spec_json)
        .map_err(|e| cur.err(format!("embedded spec: {e}")))?;
    if spec.hash() != spec_hash {
        return Err(cur.err("embedded spec does not match its hash".into()));
    }
    let step_count = u64::from_le_bytes(cur.array()?);
    let n_entries = u32::from_le_bytes(cur.array()?);
    for _ in 0..n_entries {
        cur.string()?;
        cur.take(2)?;
        let ndim = cur.take(1)?[0] as usize;
        cur.take(4 * ndim)?;
    }
    let n_params = u64::from_le_bytes(cur.array()?) as usize;
    let n_stats = u64::from_le_bytes(cur.array()?) as usize;
    let mut floats = |n: usize| -> Result<Vec<f32>> {
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| cur_err_len())?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    let params = floats(n_params)?;
    let bn_stats = floats(n_stats)?;
    if cur.pos != bytes.len() {
        return Err(cur.err("trailing bytes".into()));
    }
    let ckpt = Checkpoint {
        params,
        bn_stats,
        spec_hash,
        step_count,
    };
    let net = Network::new(spec.clone())?;
    net.check(&ckpt)?;
    Ok((spec, ckpt))
}

fn cur_err_len() -> Error {
    Error::Parse {
        offset: 0,
        message: "length overflow".into(),
    }
}

pub fn save_checkpoint(path: &Path, net: &Network, ckpt: &Checkpoint<f32>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net, ckpt)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelSpec, Checkpoint<f32>)> {
    read_checkpoint(std::fs::File::open(path)?)
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: String) -> Error {
        Error::Parse {
            offset: self.pos as u64,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn string(&mut self) -> Result<String> {
        let n = u32::from_le_bytes(self.array()?) as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|e| self.err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn net() -> Network {
        Network::new(ModelSpec::mlp(4, 5, 3)).unwrap()
    }

    fn random_ckpt(net: &Network, seed: u64) -> Checkpoint<f32> {
        let mut c = net.init::<f32>(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for v in c.bn_stats.iter_mut() {
            *v = rng.random_range(0.1..2.0);
        }
        c
    }

    #[test]
    fn distance_identity_and_shift() {
        let n = net();
        let a = n.init::<f32>(1);
        assert_eq!(l2_param_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.params[7] += 3.0;
        assert!((l2_param_distance(&a, &b).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn distance_matches_naive_loop() {
        let n = net();
        let a = random_ckpt(&n, 3);
        let b = random_ckpt(&n, 4);
        let mut acc = 0.0f64;
        for i in 0..a.params.len() {
            let d = a.params[i] as f64 - b.params[i] as f64;
            acc += d * d;
        }
        let oracle = acc.sqrt();
        let got = l2_param_distance(&a, &b).unwrap();
        assert!((got - oracle).abs() <= 1e-6 * oracle);
    }

    #[test]
    fn distance_rejects_spec_mismatch() {
        let a = net().init::<f32>(0);
        let other = Network::new(ModelSpec::mlp(4, 6, 3)).unwrap();
        let b = other.init::<f32>(0);
        assert!(matches!(
            l2_param_distance(&a, &b),
            Err(Error::SpecMismatch { .. })
        ));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let n = Network::new(ModelSpec {
            name: "lin".into(),
            input_shape: vec![1],
            layers: vec![Layer::Dense {
                inputs: 1,
                outputs: 2,
            }],
            taps: vec![],
            classes: 2,
        })
        .unwrap();
        let mut a = n.init::<f32>(0);
        let mut b = a.clone();
        a.params = vec![0.0, 2.0, 0.0, 0.0];
        b.params = vec![2.0, 0.0, 0.0, 0.0];
        let mid = interpolate(&n, &a, &b, 0.5, BnInterpolation::Variance).unwrap();
        assert_eq!(&mid.params[..2], &[1.0, 1.0]);
        let zero = interpolate(&n, &a, &b, 0.0, BnInterpolation::Variance).unwrap();
        assert_eq!(zero.params, a.params);
        let one = interpolate(&n, &a, &b, 1.0, BnInterpolation::Variance).unwrap();
        assert_eq!(one.params, b.params);
        assert!(interpolate(&n, &a, &b, 1.5, BnInterpolation::Variance).is_err());
    }

    #[test]
    fn perturbations() {
        let n = net();
        let mut c = n.init::<f32>(0);
        c.params.fill(2.0);
        let att = perturb(&c, Perturbation::Attenuate { factor: 0.5 }, 0, None).unwrap();
        assert!(att.params.iter().all(|&v| v == 1.0));
        assert_eq!(att.bn_stats, c.bn_stats);

        let big = Network::new(ModelSpec::mlp(4, 20, 3)).unwrap();
        let mut hundred = big.init::<f32>(0);
        hundred.params.truncate(100);
        hundred.params.fill(2.0);
        let dropped = perturb(&hundred, Perturbation::Dropout { fraction: 0.2 }, 9, None).unwrap();
        assert_eq!(dropped.params.iter().filter(|&&v| v == 0.0).count(), 20);

        let same = perturb(&c, Perturbation::Gaussian { sigma: 0.0 }, 5, None).unwrap();
        assert_eq!(same, c);

        assert!(perturb(&c, Perturbation::Dropout { fraction: 1.0 }, 0, None).is_err());
        assert!(perturb(&c, Perturbation::Attenuate { factor: 0.0 }, 0, None).is_err());
        assert!(perturb(&c, Perturbation::Gaussian { sigma: -1.0 }, 0, None).is_err());
    }

    #[test]
    fn perturbation_respects_mask_and_seed() {
        let n = net();
        let c = n.init::<f32>(0);
        let mask = n.param_mask(super::super::spec::ParamScope::WeightsOnly);
        let g1 = perturb(&c, Perturbation::Gaussian { sigma: 0.1 }, 7, Some(&mask)).unwrap();
        let g2 = perturb(&c, Perturbation::Gaussian { sigma: 0.1 }, 7, Some(&mask)).unwrap();
        assert_eq!(g1, g2);
        for (i, on) in mask.iter().enumerate() {
            if !on {
                assert_eq!(g1.params[i], c.params[i]);
            }
        }
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let n = Network::new(ModelSpec::conv_tiny(1, 8, 8, 4)).unwrap();
        let mut c = random_ckpt(&n, 11);
        c.step_count = 1234;
        c.params[3] = -0.0;
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &n, &c).unwrap();
        let (spec, back) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(&spec, n.spec());
        assert_eq!(back.step_count, 1234);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&c.params));
        assert_eq!(bits(&back.bn_stats), bits(&c.bn_stats));
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let n = net();
        let c = n.init::<f32>(0);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &n, &c).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Parse { offset: 0, .. })));
        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn interpolation_is_symmetric(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
            let n = net();
            let a = random_ckpt(&n, seed);
            let b = random_ckpt(&n, seed + 1);
            let x = interpolate(&n, &a, &b, alpha, BnInterpolation::Variance).unwrap();
            let y = interpolate(&n, &b, &a, 1.0 - alpha, BnInterpolation::Variance).unwrap();
            for (p, q) in x.params.iter().zip(&y.params).chain(x.bn_stats.iter().zip(&y.bn_stats)) {
                prop_assert!((p - q).abs() <= 1e-6 * (1.0 + p.abs()));
            }
        }

        #[test]
        fn interpolated_variance_stays_positive(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
            let n = net();
            let a = random_ckpt(&n, seed);
            let b = random_ckpt(&n, seed + 7);
            for mode in [BnInterpolation::Variance, BnInterpolation::StdDev] {
                let x = interpolate(&n, &a, &b, alpha, mode).unwrap();
                prop_assert!(n.check(&x).is_ok());
            }
        }

        #[test]
        fn distance_triangle_inequality(s in 0u64..500) {
            let n = net();
            let (a, b, c) = (random_ckpt(&n, s), random_ckpt(&n, s + 1), random_ckpt(&n, s + 2));
            let ab = l2_param_distance(&a, &b).unwrap();
            let bc = l2_param_distance(&b, &c).unwrap();
            let ac = l2_param_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, l2_param_distance(&b, &a).unwrap());
        }
    }
}
