use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Matrix, Tensor5};
use super::{NetError, CHANNELS, FEATURE_DIM, FLAT_WIDTH, HIDDEN_WIDTH, KERNEL};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NET3";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One convolution + batch-norm stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernels: Tensor5<f32>,
    pub bias: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(out, in)`.
    pub weights: Matrix<f32>,
    pub bias: Vec<f32>,
}

/// Every weight and batch-norm statistic of the fixed network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub conv: [ConvBlock; 3],
    pub fc1: Dense,
    pub fc2: Dense,
    /// True only while a training call is updating the parameters.
    pub training: bool,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound) as f32).collect()
}

impl ConvBlock {
    fn init(rng: &mut ChaCha8Rng, in_ch: usize) -> Self {
        let k3 = KERNEL * KERNEL * KERNEL;
        let shape = [CHANNELS, in_ch, KERNEL, KERNEL, KERNEL];
        Self {
            kernels: Tensor5::from_vec(shape, uniform(rng, CHANNELS * in_ch * k3, in_ch * k3)).unwrap(),
            bias: vec![0.0; CHANNELS],
            gamma: vec![1.0; CHANNELS],
            beta: vec![0.0; CHANNELS],
            running_mean: vec![0.0; CHANNELS],
            running_var: vec![1.0; CHANNELS],
        }
    }
}

impl Dense {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::from_vec(fan_out, fan_in, uniform(rng, fan_in * fan_out, fan_in)).unwrap(),
            bias: vec![0.0; fan_out],
        }
    }
}

/// Fan-in scaled uniform weights in `±sqrt(1 / fan_in)`, zero biases, identity batch-norm.
pub fn init_params(seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = [
        ConvBlock::init(&mut rng, 1),
        ConvBlock::init(&mut rng, CHANNELS),
        ConvBlock::init(&mut rng, CHANNELS),
    ];
    let fc1 = Dense::init(&mut rng, FLAT_WIDTH, HIDDEN_WIDTH);
    let fc2 = Dense::init(&mut rng, HIDDEN_WIDTH, FEATURE_DIM);
    NetParams { conv, fc1, fc2, training: false }
}

impl NetParams {
    /// Trainable tensors in a fixed order shared with [`super::NetGrads`].
    pub fn trainable_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::with_capacity(16);
        for block in &mut self.conv {
            out.push(block.kernels.data_mut());
            out.push(&mut block.bias);
            out.push(&mut block.gamma);
            out.push(&mut block.beta);
        }
        out.push(self.fc1.weights.data_mut());
        out.push(&mut self.fc1.bias);
        out.push(self.fc2.weights.data_mut());
        out.push(&mut self.fc2.bias);
        out
    }

    pub fn trainable_lens(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(16);
        for block in &self.conv {
            out.extend([block.kernels.data().len(), block.bias.len(), block.gamma.len(), block.beta.len()]);
        }
        out.extend([
            self.fc1.weights.data().len(),
            self.fc1.bias.len(),
            self.fc2.weights.data().len(),
            self.fc2.bias.len(),
        ]);
        out
    }

    /// All persisted tensors as `(name, dims, values)`.
    fn named(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out = Vec::new();
        for (i, b) in self.conv.iter().enumerate() {
            let n = i + 1;
            out.push((format!("conv{n}.weight"), b.kernels.shape().to_vec(), b.kernels.data()));
            out.push((format!("conv{n}.bias"), vec![CHANNELS], &b.bias[..]));
            out.push((format!("bn{n}.gamma"), vec![CHANNELS], &b.gamma[..]));
            out.push((format!("bn{n}.beta"), vec![CHANNELS], &b.beta[..]));
            out.push((format!("bn{n}.running_mean"), vec![CHANNELS], &b.running_mean[..]));
            out.push((format!("bn{n}.running_var"), vec![CHANNELS], &b.running_var[..]));
        }
        for (name, d) in [("fc1", &self.fc1), ("fc2", &self.fc2)] {
            out.push((format!("{name}.weight"), vec![d.weights.rows(), d.weights.cols()], d.weights.data()));
            out.push((format!("{name}.bias"), vec![d.bias.len()], &d.bias[..]));
        }
        out
    }

    fn named_mut(&mut self) -> Vec<(String, &mut [f32])> {
        let mut out: Vec<(String, &mut [f32])> = Vec::new();
        for (i, b) in self.conv.iter_mut().enumerate() {
            let n = i + 1;
            out.push((format!("conv{n}.weight"), b.kernels.data_mut()));
            out.push((format!("conv{n}.bias"), &mut b.bias));
            out.push((format!("bn{n}.gamma"), &mut b.gamma));
            out.push((format!("bn{n}.beta"), &mut b.beta));
            out.push((format!("bn{n}.running_mean"), &mut b.running_mean));
            out.push((format!("bn{n}.running_var"), &mut b.running_var));
        }
        out.push(("fc1.weight".into(), self.fc1.weights.data_mut()));
        out.push(("fc1.bias".into(), &mut self.fc1.bias));
        out.push(("fc2.weight".into(), self.fc2.weights.data_mut()));
        out.push(("fc2.bias".into(), &mut self.fc2.bias));
        out
    }

    /// Serializes to the NET3 checkpoint layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.named();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, dims, values) in named {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(NetError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!("unsupported version {version}")));
        }
        let mut params = init_params(0);
        let expected: Vec<(String, Vec<usize>)> =
            params.named().into_iter().map(|(n, d, _)| (n, d)).collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(NetError::Checkpoint(format!("{count} tensors, expected {}", expected.len())));
        }
        let mut slots = params.named_mut();
        for ((want_name, want_dims), (_, slot)) in expected.iter().zip(slots.iter_mut()) {
            let len = r.u32()? as usize;
            let name = String::from_utf8_lossy(r.take(len)?).into_owned();
            if &name != want_name {
                return Err(NetError::Checkpoint(format!("found tensor {name:?}, expected {want_name:?}")));
            }
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if &dims != want_dims {
                return Err(NetError::Checkpoint(format!("{name}: dims {dims:?}, expected {want_dims:?}")));
            }
            for v in slot.iter_mut() {
                *v = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            }
        }
        drop(slots);
        if r.pos != bytes.len() {
            return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(NetError::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
