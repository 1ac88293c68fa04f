use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::geometry::{BoundingBox, BoxGrad};
use crate::pooling::{prpool_roi, prpool_roi_backward, PoolGrid};

use super::{denormalize_iou, IouPredictor};

pub const PRWT_MAGIC: &[u8; 4] = b"PRWT";
pub const PRWT_VERSION: u16 = 1;

/// Two dense layers with a ReLU in between.
///
/// Weights are row-major: `w1[h * input + i]` connects input `i` to hidden
/// unit `h`, `w2[o * hidden + h]` connects hidden `h` to output `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Parameter gradients, laid out like [`Mlp`].
#[derive(Debug, Clone)]
pub(crate) struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn clear(&mut self) {
        for v in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

impl Mlp {
    /// He-style initialisation for the first layer; the output layer starts
    /// small so initial predictions sit near zero.
    pub fn random<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must be positive, got {input}/{hidden}/{output}"
            )));
        }
        let n1 = Normal::new(0.0, (2.0 / input as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, 0.1 / (hidden as f64).sqrt()).expect("positive std");
        Ok(Self {
            input,
            hidden,
            output,
            w1: (0..hidden * input).map(|_| n1.sample(rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..output * hidden).map(|_| n2.sample(rng)).collect(),
            b2: vec![0.0; output],
        })
    }

    fn hidden_pre(&self, x: &[f64], z: &mut [f64]) {
        for (h, zh) in z.iter_mut().enumerate() {
            let row = &self.w1[h * self.input..(h + 1) * self.input];
            *zh = self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn output_from_hidden(&self, a: &[f64]) -> Vec<f64> {
        (0..self.output)
            .map(|o| {
                let row = &self.w2[o * self.hidden..(o + 1) * self.hidden];
                self.b2[o] + row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut z = vec![0.0; self.hidden];
        self.hidden_pre(x, &mut z);
        let a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        Ok(self.output_from_hidden(&a))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::InvalidArgument(format!(
                "network expects {} inputs, got {}",
                self.input,
                x.len()
            )));
        }
        Ok(())
    }

    /// Gradient of `dout . forward(x)` with respect to `x`.
    pub fn input_grad(&self, x: &[f64], dout: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut z = vec![0.0; self.hidden];
        self.hidden_pre(x, &mut z);
        let dz = self.hidden_grad(&z, dout);
        let mut dx = vec![0.0; self.input];
        for (h, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.w1[h * self.input..(h + 1) * self.input];
            for (acc, w) in dx.iter_mut().zip(row) {
                *acc += d * w;
            }
        }
        Ok(dx)
    }

    fn hidden_grad(&self, z: &[f64], dout: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                if z[h] <= 0.0 {
                    return 0.0;
                }
                (0..self.output).map(|o| dout[o] * self.w2[o * self.hidden + h]).sum()
            })
            .collect()
    }

    /// Forward pass that also adds the parameter gradient of
    /// `loss_grad(output)` into `grads`. Returns the outputs.
    pub(crate) fn accumulate(
        &self,
        x: &[f64],
        grads: &mut MlpGrads,
        loss_grad: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Vec<f64> {
        let mut z = vec![0.0; self.hidden];
        self.hidden_pre(x, &mut z);
        let a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let out = self.output_from_hidden(&a);
        let dout = loss_grad(&out);
        for o in 0..self.output {
            grads.b2[o] += dout[o];
            let row = &mut grads.w2[o * self.hidden..(o + 1) * self.hidden];
            for (g, av) in row.iter_mut().zip(&a) {
                *g += dout[o] * av;
            }
        }
        let dz = self.hidden_grad(&z, &dout);
        for (h, &d) in dz.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads.b1[h] += d;
            let row = &mut grads.w1[h * self.input..(h + 1) * self.input];
            for (g, xv) in row.iter_mut().zip(x) {
                *g += d * xv;
            }
        }
        out
    }

    pub(crate) fn apply_step(&mut self, grads: &MlpGrads, step: f64) {
        let pairs = [
            (&mut self.w1, &grads.w1),
            (&mut self.b1, &grads.b1),
            (&mut self.w2, &grads.w2),
            (&mut self.b2, &grads.b2),
        ];
        for (p, g) in pairs {
            for (pv, gv) in p.iter_mut().zip(g.iter()) {
                *pv -= step * gv;
            }
        }
    }

    fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    /// Serializes in the `PRWT` format: magic, version, layer count, layer
    /// dimensions, pool grid, then `f32` parameters in `w1, b1, w2, b2` order.
    pub fn write_prwt<W: Write>(&self, mut w: W, grid: PoolGrid) -> Result<()> {
        w.write_all(PRWT_MAGIC)?;
        w.write_u16::<LittleEndian>(PRWT_VERSION)?;
        w.write_u32::<LittleEndian>(2)?;
        for d in [self.input, self.hidden, self.output, grid.k_h, grid.k_w] {
            w.write_u32::<LittleEndian>(
                u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?,
            )?;
        }
        for &v in self.parameters() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        Ok(())
    }

    pub fn read_prwt<R: Read>(mut r: R) -> Result<(Self, PoolGrid)> {
        let bad = |reason: String| Error::Format { kind: "PRWT", reason };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PRWT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = r.read_u16::<LittleEndian>()?;
        if version != PRWT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let layers = r.read_u32::<LittleEndian>()?;
        if layers != 2 {
            return Err(bad(format!("expected 2 layers, found {layers}")));
        }
        let mut dims = [0usize; 5];
        for d in dims.iter_mut() {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let [input, hidden, output, k_h, k_w] = dims;
        if dims.contains(&0) || input > 1 << 24 || hidden > 1 << 16 || output > 1 << 16 {
            return Err(bad(format!("implausible dimensions {dims:?}")));
        }
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut buf)
                .map_err(|e| bad(format!("truncated parameters: {e}")))?;
            Ok(buf.into_iter().map(f64::from).collect())
        };
        let net = Self {
            input,
            hidden,
            output,
            w1: take(hidden * input)?,
            b1: take(hidden)?,
            w2: take(output * hidden)?,
            b2: take(output)?,
        };
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(bad("trailing bytes after parameters".into()));
        }
        if net.parameters().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        Ok((net, PoolGrid { k_h, k_w }))
    }
}

/// IoU head over precise-RoI-pooled features. The network output is a
/// normalized IoU; [`IouPredictor::value`] reports it denormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpIouPredictor {
    pub net: Mlp,
    pub grid: PoolGrid,
}

impl MlpIouPredictor {
    pub fn new(net: Mlp, grid: PoolGrid) -> Result<Self> {
        grid.validate()?;
        if net.output != 1 {
            return Err(Error::InvalidArgument(format!(
                "IoU head must have one output, got {}",
                net.output
            )));
        }
        if !net.input.is_multiple_of(grid.cells()) {
            return Err(Error::InvalidArgument(format!(
                "input width {} is not a multiple of the {}x{} pool grid",
                net.input, grid.k_h, grid.k_w
            )));
        }
        Ok(Self { net, grid })
    }

    /// Freshly initialised head for maps with `channels` channels.
    pub fn init<R: Rng + ?Sized>(grid: PoolGrid, channels: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Self::new(Mlp::random(grid.cells() * channels, hidden, 1, rng)?, grid)
    }

    /// Raw network output (normalized IoU).
    pub fn predict_normalized(&self, fmap: &FeatureMap, bbox: &BoundingBox) -> Result<f64> {
        let pooled = prpool_roi(fmap, bbox, self.grid)?;
        Ok(self.net.forward(&pooled.values)?[0])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.net.write_prwt(w, self.grid))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let (net, grid) = Mlp::read_prwt(BufReader::new(f))?;
        Self::new(net, grid)
    }
}

impl IouPredictor for MlpIouPredictor {
    fn value(&self, fmap: &FeatureMap, bbox: &BoundingBox, _class_id: u32) -> Result<f64> {
        Ok(denormalize_iou(self.predict_normalized(fmap, bbox)?))
    }

    fn grad_coords(&self, fmap: &FeatureMap, bbox: &BoundingBox, _class_id: u32) -> Result<BoxGrad> {
        let pooled = prpool_roi(fmap, bbox, self.grid)?;
        // d denormalize / d output = 1/4
        let dx = self.net.input_grad(&pooled.values, &[0.25])?;
        prpool_roi_backward(fmap, bbox, self.grid, &dx)
    }
}
