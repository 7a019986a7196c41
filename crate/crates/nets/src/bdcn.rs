//! Bidirectional cascade edge network: five incremental-detection blocks with
//! scale-enhancement modules, supervised at every side output.

use agsp_tensor::optim::{sgd_step, SgdConfig};
use agsp_tensor::{ConvGeom, ParamStore, Scalar, Session, Tape, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::data::{epoch_batches, stack, EdgeSample};
use crate::layers::{add_all, concat_all, upsample, Conv2d};
use crate::{NetError, Result};

pub const BLOCKS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemConfig {
    pub r0: usize,
    pub k: usize,
    pub channels: usize,
}

impl Default for SemConfig {
    fn default() -> Self {
        Self { r0: 1, k: 3, channels: 8 }
    }
}

impl SemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r0 == 0 || self.k == 0 || self.channels == 0 {
            return Err(NetError::Config(format!("SEM needs r0, K and channels >= 1, got {self:?}")));
        }
        Ok(())
    }

    /// Branch dilation rates `r0·k`, `k = 1..=K`.
    pub fn rates(&self) -> Vec<usize> {
        (1..=self.k).map(|k| self.r0 * k).collect()
    }
}

/// Parallel dilated 3×3 branches, each with ReLU, summed and mixed by a 1×1
/// convolution.
#[derive(Clone, Debug)]
pub struct Sem {
    pub branches: Vec<Conv2d>,
    pub mix: Conv2d,
}

impl Sem {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cfg: SemConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::with_rates(store, name, cin, cfg.channels, &cfg.rates(), seed))
    }

    pub fn with_rates<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        channels: usize,
        rates: &[usize],
        seed: u64,
    ) -> Self {
        let branches = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| Conv2d::same3(store, &format!("{name}.branch{i}"), cin, channels, r, true, seed))
            .collect();
        Self {
            branches,
            mix: Conv2d::pointwise(store, &format!("{name}.mix"), channels, channels, seed),
        }
    }

    /// Sum of the rectified branch outputs, before mixing.
    pub fn branch_sum<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let y = b.forward(s, x)?;
            outs.push(s.tape.relu(y)?);
        }
        add_all(s, &outs)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let sum = self.branch_sum(s, x)?;
        self.mix.forward(s, sum)
    }
}

#[derive(Clone, Debug)]
pub struct IdBlock {
    pub convs: Vec<Conv2d>,
    pub sems: Vec<Sem>,
    pub head_s2d: Conv2d,
    pub head_d2s: Conv2d,
}

pub struct BlockOutput {
    pub features: Var,
    pub s2d: Var,
    pub d2s: Var,
}

impl IdBlock {
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<BlockOutput> {
        let mut h = x;
        let mut enhanced = Vec::with_capacity(self.convs.len());
        for (conv, sem) in self.convs.iter().zip(&self.sems) {
            let y = conv.forward(s, h)?;
            h = s.tape.relu(y)?;
            enhanced.push(sem.forward(s, h)?);
        }
        let sum = add_all(s, &enhanced)?;
        Ok(BlockOutput {
            features: h,
            s2d: self.head_s2d.forward(s, sum)?,
            d2s: self.head_d2s.forward(s, sum)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BdcnConfig {
    pub channels: [usize; BLOCKS],
    pub convs_per_block: usize,
    pub sem: SemConfig,
}

impl Default for BdcnConfig {
    fn default() -> Self {
        Self {
            channels: [8, 16, 32, 32, 32],
            convs_per_block: 2,
            sem: SemConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bdcn {
    pub config: BdcnConfig,
    pub blocks: Vec<IdBlock>,
    pub fuse: Conv2d,
}

/// Full-resolution logits: cascaded side outputs per block and the fusion.
pub struct BdcnOutputs {
    pub s2d: Vec<Var>,
    pub d2s: Vec<Var>,
    pub fused: Var,
}

impl BdcnOutputs {
    /// All eleven maps, side outputs first.
    pub fn all(&self) -> Vec<Var> {
        self.s2d.iter().chain(&self.d2s).copied().chain([self.fused]).collect()
    }
}

impl Bdcn {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: BdcnConfig, seed: u64) -> Result<Self> {
        config.sem.validate()?;
        if config.convs_per_block == 0 || config.channels.contains(&0) {
            return Err(NetError::Config("BDCN blocks need at least one conv and one channel".into()));
        }
        let mut cin = 3;
        let mut blocks = Vec::with_capacity(BLOCKS);
        for (b, &c) in config.channels.iter().enumerate() {
            let mut convs = Vec::new();
            let mut sems = Vec::new();
            for j in 0..config.convs_per_block {
                let name = format!("bdcn.block{b}.conv{j}");
                convs.push(Conv2d::same3(store, &name, cin, c, 1, true, seed));
                sems.push(Sem::new(store, &format!("bdcn.block{b}.sem{j}"), c, config.sem, seed)?);
                cin = c;
            }
            let m = config.sem.channels;
            blocks.push(IdBlock {
                convs,
                sems,
                head_s2d: Conv2d::pointwise(store, &format!("bdcn.block{b}.s2d"), m, 1, seed),
                head_d2s: Conv2d::pointwise(store, &format!("bdcn.block{b}.d2s"), m, 1, seed),
            });
        }
        let fuse = Conv2d::new(store, "bdcn.fuse", 2 * BLOCKS, 1, 1, ConvGeom::new(1, 0, 1), true, seed);
        Ok(Self { config, blocks, fuse })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, image: Var) -> Result<BdcnOutputs> {
        let shape = s.tape.shape(image);
        let div = 1 << (BLOCKS - 1);
        if shape.len() != 4 || shape[1] != 3 || shape[2] % div != 0 || shape[3] % div != 0 || shape[2] == 0 || shape[3] == 0 {
            return Err(NetError::Data(format!("BDCN input must be N×3×H×W with H, W divisible by {div}, got {shape:?}")));
        }
        let mut x = image;
        let mut raw_s2d = Vec::with_capacity(BLOCKS);
        let mut raw_d2s = Vec::with_capacity(BLOCKS);
        for (b, block) in self.blocks.iter().enumerate() {
            if b > 0 {
                x = s.tape.maxpool2d(x, 2, 2)?;
            }
            let out = block.forward(s, x)?;
            x = out.features;
            raw_s2d.push(upsample(s, out.s2d, 1 << b)?);
            raw_d2s.push(upsample(s, out.d2s, 1 << b)?);
        }
        // shallow-to-deep accumulates from block 0, deep-to-shallow from block 4
        let mut s2d = Vec::with_capacity(BLOCKS);
        for b in 0..BLOCKS {
            s2d.push(if b == 0 { raw_s2d[0] } else { s.tape.add(s2d[b - 1], raw_s2d[b])? });
        }
        let mut d2s = vec![raw_d2s[BLOCKS - 1]; BLOCKS];
        for b in (0..BLOCKS - 1).rev() {
            d2s[b] = s.tape.add(d2s[b + 1], raw_d2s[b])?;
        }
        let stacked = concat_all(s, &[raw_s2d, raw_d2s].concat())?;
        let fused = self.fuse.forward(s, stacked)?;
        Ok(BdcnOutputs { s2d, d2s, fused })
    }
}

/// Positive pixels weighted by the negative share and vice versa, balanced
/// per map of the `N×1×H×W` batch.
pub fn class_balanced_bce<T: Scalar>(tape: &Tape<T>, logits: Var, target: &[T]) -> Result<Var> {
    let shape = tape.shape(logits);
    let per: usize = shape[1..].iter().product();
    if target.len() != shape.iter().product::<usize>() || per == 0 {
        return Err(NetError::Data(format!("{} targets for logits {shape:?}", target.len())));
    }
    let mut weights = Vec::with_capacity(target.len());
    for map in target.chunks(per) {
        let pos = map.iter().filter(|&&y| y > T::zero()).count() as f64;
        let (w_pos, w_neg) = ((per as f64 - pos) / per as f64, pos / per as f64);
        weights.extend(map.iter().map(|&y| T::from_f64(if y > T::zero() { w_pos } else { w_neg })));
    }
    Ok(tape.bce_with_logits(logits, target, &weights)?)
}

/// Sum of the class-balanced loss over all eleven outputs.
pub fn bdcn_loss<T: Scalar>(tape: &Tape<T>, out: &BdcnOutputs, target: &[T]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for v in out.all() {
        let l = class_balanced_bce(tape, v, target)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("eleven outputs"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for EdgeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 4,
            sgd: SgdConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeTrainLog {
    pub steps: Vec<StepLoss>,
    /// Mean step loss per epoch.
    pub epochs: Vec<f64>,
}

pub(crate) fn diverged(epoch: usize, step: usize, e: NetError) -> NetError {
    match e {
        NetError::Tensor(TensorError::NonFinite { op }) => NetError::Diverged {
            epoch,
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// One SGD step on a batch; returns the loss before the update.
pub fn bdcn_step(net: &Bdcn, store: &mut ParamStore<f32>, batch: &[&EdgeSample], sgd: &SgdConfig) -> Result<f64> {
    let tape = Tape::new();
    let mut s = Session::new(&tape, store, true);
    let x = tape.constant(stack(batch.iter().map(|e| e.image.clone()))?);
    let target: Vec<f32> = batch.iter().flat_map(|e| e.edges.iter().copied()).collect();
    let out = net.forward(&mut s, x)?;
    let loss = bdcn_loss(&tape, &out, &target)?;
    let value = tape.scalar_value(loss) as f64;
    let grads = tape.backward(loss)?;
    s.accumulate(&grads);
    sgd_step(store, sgd)?;
    Ok(value)
}

pub fn bdcn_train(net: &Bdcn, store: &mut ParamStore<f32>, data: &[EdgeSample], cfg: &EdgeTrainConfig) -> Result<EdgeTrainLog> {
    if data.is_empty() {
        return Err(NetError::Data("no edge training samples".into()));
    }
    let mut log = EdgeTrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(data.len(), cfg.batch, cfg.seed, epoch);
        for idx in &batches {
            let batch: Vec<&EdgeSample> = idx.iter().map(|&i| &data[i]).collect();
            let loss = bdcn_step(net, store, &batch, &cfg.sgd).map_err(|e| diverged(epoch, step, e))?;
            if !loss.is_finite() {
                return Err(NetError::Diverged { epoch, step, detail: format!("loss {loss}") });
            }
            log.steps.push(StepLoss { epoch, step, loss });
            sum += loss;
            step += 1;
        }
        log.epochs.push(sum / batches.len() as f64);
    }
    Ok(log)
}

/// Edge probabilities `sigmoid(fused)` for a `1×3×H×W` image, row-major.
pub fn bdcn_predict(net: &Bdcn, store: &mut ParamStore<f32>, image: &Tensor<f32>) -> Result<Vec<f32>> {
    let tape = Tape::new();
    let mut s = Session::new(&tape, store, false);
    let x = tape.constant(image.clone());
    let out = net.forward(&mut s, x)?;
    let p = tape.sigmoid(out.fused)?;
    let v = tape.value(p).data().to_vec();
    Ok(v)
}
