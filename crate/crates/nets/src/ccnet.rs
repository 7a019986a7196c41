//! Pseudo-Siamese semantic change network: one residual backbone and one
//! recurrent criss-cross attention module per epoch, per-epoch segmentation
//! heads and an absolute-difference change head.

use agsp_tensor::optim::{sgd_step, SgdConfig};
use agsp_tensor::{ConvGeom, ParamStore, Scalar, Session, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::bdcn::diverged;
use crate::data::{argmax_channels, epoch_batches, stack, ScdSample};
use crate::layers::{BatchNorm2d, Conv2d, ConvBnRelu};
use crate::{NetError, Result};

/// Output stride of the backbone.
pub const STRIDE: usize = 4;
/// Weight of the binary change term in the total loss.
pub const BCD_WEIGHT: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl ResBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, dilation: usize, seed: u64) -> Self {
        let shortcut = (cin != cout).then(|| {
            (
                Conv2d::new(store, &format!("{name}.down"), cin, cout, 1, ConvGeom::new(1, 0, 1), false, seed),
                BatchNorm2d::new(store, &format!("{name}.down_bn"), cout),
            )
        });
        Self {
            conv1: Conv2d::same3(store, &format!("{name}.conv1"), cin, cout, dilation, false, seed),
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout),
            conv2: Conv2d::same3(store, &format!("{name}.conv2"), cout, cout, dilation, false, seed),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout),
            shortcut,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(s, x)?;
        let y = self.bn1.forward(s, y)?;
        let y = s.tape.relu(y)?;
        let y = self.conv2.forward(s, y)?;
        let y = self.bn2.forward(s, y)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let z = conv.forward(s, x)?;
                bn.forward(s, z)?
            }
            None => x,
        };
        let y = s.tape.add(y, skip)?;
        Ok(s.tape.relu(y)?)
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub stem: Conv2d,
    pub stem_bn: BatchNorm2d,
    pub blocks: Vec<ResBlock>,
}

impl Backbone {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, cfg: &ScdConfig, seed: u64) -> Self {
        let stem = Conv2d::new(store, &format!("{name}.stem"), 3, cfg.stem, 7, ConvGeom::new(2, 3, 1), false, seed);
        let stem_bn = BatchNorm2d::new(store, &format!("{name}.stem_bn"), cfg.stem);
        let mut cin = cfg.stem;
        let last = cfg.blocks.len() - 1;
        let blocks = cfg
            .blocks
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let dilation = if i == last { cfg.last_dilation } else { 1 };
                let b = ResBlock::new(store, &format!("{name}.layer{i}"), cin, c, dilation, seed);
                cin = c;
                b
            })
            .collect();
        Self { stem, stem_bn, blocks }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, image: Var) -> Result<Var> {
        let y = self.stem.forward(s, image)?;
        let y = self.stem_bn.forward(s, y)?;
        let y = s.tape.relu(y)?;
        let mut y = s.tape.maxpool2d(y, 2, 2)?;
        for b in &self.blocks {
            y = b.forward(s, y)?;
        }
        Ok(y)
    }
}

/// Query, key and value projections of one criss-cross attention module.
#[derive(Clone, Debug)]
pub struct Ccam {
    pub query: Conv2d,
    pub key: Conv2d,
    pub value: Conv2d,
}

impl Ccam {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, seed: u64) -> Self {
        let reduced = (c / 8).max(1);
        Self {
            query: Conv2d::pointwise(store, &format!("{name}.query"), c, reduced, seed),
            key: Conv2d::pointwise(store, &format!("{name}.key"), c, reduced, seed),
            value: Conv2d::pointwise(store, &format!("{name}.value"), c, c, seed),
        }
    }

    /// Softmax-normalised affinities, `N×(H+W−1)×H×W`.
    pub fn attention<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let q = self.query.forward(s, x)?;
        let k = self.key.forward(s, x)?;
        let e = s.tape.cc_affinity(q, k)?;
        Ok(s.tape.softmax(e, 1)?)
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let a = self.attention(s, x)?;
        let v = self.value.forward(s, x)?;
        let ctx = s.tape.cc_aggregate(a, v)?;
        Ok(s.tape.add(ctx, x)?)
    }
}

/// `r` passes of one shared `Ccam`.
pub fn rcca<T: Scalar>(s: &mut Session<T>, ccam: &Ccam, x: Var, r: usize) -> Result<Var> {
    if r == 0 {
        return Err(NetError::Config("RCCA needs at least one pass".into()));
    }
    let mut y = x;
    for _ in 0..r {
        y = ccam.forward(s, y)?;
    }
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct SegHead {
    pub fuse: ConvBnRelu,
    pub classifier: Conv2d,
}

impl SegHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, classes: usize, seed: u64) -> Self {
        Self {
            fuse: ConvBnRelu::new(store, &format!("{name}.fuse"), 2 * c, c, 1, seed),
            classifier: Conv2d::pointwise(store, &format!("{name}.classifier"), c, classes, seed),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, f: Var, context: Var) -> Result<Var> {
        let x = s.tape.concat_channels(f, context)?;
        let x = self.fuse.forward(s, x)?;
        let x = self.classifier.forward(s, x)?;
        Ok(s.tape.upsample_bilinear(x, STRIDE)?)
    }
}

/// Two conv-BN-ReLU layers on `|F1 − F2|` and a one-logit classifier
/// (positive means change).
#[derive(Clone, Debug)]
pub struct ChangeHead {
    pub layers: [ConvBnRelu; 2],
    pub classifier: Conv2d,
}

impl ChangeHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, seed: u64) -> Self {
        Self {
            layers: [
                ConvBnRelu::new(store, &format!("{name}.layer0"), c, c, 1, seed),
                ConvBnRelu::new(store, &format!("{name}.layer1"), c, c, 1, seed),
            ],
            classifier: Conv2d::pointwise(store, &format!("{name}.classifier"), c, 1, seed),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, f1: Var, f2: Var) -> Result<Var> {
        let d = s.tape.sub(f1, f2)?;
        let mut x = s.tape.abs(d)?;
        for l in &self.layers {
            x = l.forward(s, x)?;
        }
        let x = self.classifier.forward(s, x)?;
        Ok(s.tape.upsample_bilinear(x, STRIDE)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScdConfig {
    pub stem: usize,
    pub blocks: Vec<usize>,
    pub last_dilation: usize,
    pub recurrence: usize,
    pub t1_classes: usize,
    pub t2_classes: usize,
}

impl Default for ScdConfig {
    fn default() -> Self {
        Self {
            stem: 16,
            blocks: vec![16, 32, 32, 32],
            last_dilation: 2,
            recurrence: 2,
            t1_classes: 5,
            t2_classes: 5,
        }
    }
}

impl ScdConfig {
    pub fn channels(&self) -> usize {
        *self.blocks.last().unwrap_or(&self.stem)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.contains(&0) || self.stem == 0 {
            return Err(NetError::Config("backbone needs at least one non-empty block".into()));
        }
        if self.recurrence == 0 || self.last_dilation == 0 {
            return Err(NetError::Config("recurrence and dilation must be >= 1".into()));
        }
        if self.t1_classes < 2 || self.t2_classes < 2 {
            return Err(NetError::Config("each epoch needs at least two classes".into()));
        }
        Ok(())
    }
}

/// One branch per epoch; branches share no parameters.
#[derive(Clone, Debug)]
pub struct Branch {
    pub backbone: Backbone,
    pub ccam: Ccam,
    pub seg: SegHead,
}

#[derive(Clone, Debug)]
pub struct ScdModel {
    pub config: ScdConfig,
    pub t1: Branch,
    pub t2: Branch,
    pub change: ChangeHead,
}

pub struct ScdOutputs {
    pub seg_t1: Var,
    pub seg_t2: Var,
    pub change: Var,
    pub features_t1: Var,
    pub features_t2: Var,
}

impl ScdModel {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: ScdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels();
        let mut branch = |tag: &str, classes: usize| Branch {
            backbone: Backbone::new(store, &format!("{tag}.backbone"), &config, seed),
            ccam: Ccam::new(store, &format!("{tag}.rcca"), c, seed),
            seg: SegHead::new(store, &format!("{tag}.seg"), c, classes, seed),
        };
        let t1 = branch("t1", config.t1_classes);
        let t2 = branch("t2", config.t2_classes);
        let change = ChangeHead::new(store, "change", c, seed);
        Ok(Self { config, t1, t2, change })
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x1: Var, x2: Var) -> Result<ScdOutputs> {
        for x in [x1, x2] {
            let shape = s.tape.shape(x);
            if shape.len() != 4 || shape[1] != 3 || shape[2] % STRIDE != 0 || shape[3] % STRIDE != 0 || shape[2] == 0 || shape[3] == 0 {
                return Err(NetError::Data(format!("inputs must be N×3×H×W with H, W divisible by {STRIDE}, got {shape:?}")));
            }
        }
        if s.tape.shape(x1) != s.tape.shape(x2) {
            return Err(NetError::Data("epoch inputs differ in shape".into()));
        }
        let mut branch = |b: &Branch, x: Var| -> Result<(Var, Var)> {
            let f = b.backbone.forward(s, x)?;
            let ctx = rcca(s, &b.ccam, f, self.config.recurrence)?;
            Ok((f, b.seg.forward(s, f, ctx)?))
        };
        let (f1, seg_t1) = branch(&self.t1, x1)?;
        let (f2, seg_t2) = branch(&self.t2, x2)?;
        let change = self.change.forward(s, f1, f2)?;
        Ok(ScdOutputs {
            seg_t1,
            seg_t2,
            change,
            features_t1: f1,
            features_t2: f2,
        })
    }
}

pub struct ScdLoss {
    pub total: Var,
    pub cce_t1: Var,
    pub cce_t2: Var,
    pub bce: Var,
}

/// `CCE(t1) + CCE(t2) + 2·BCE(change)`, each a per-pixel mean.
pub fn total_loss<T: Scalar>(
    tape: &Tape<T>,
    out: &ScdOutputs,
    y1: &[usize],
    y2: &[usize],
    change: &[T],
) -> Result<ScdLoss> {
    let cce_t1 = tape.cross_entropy(out.seg_t1, y1)?;
    let cce_t2 = tape.cross_entropy(out.seg_t2, y2)?;
    let bce = tape.bce_with_logits(out.change, change, &vec![T::one(); change.len()])?;
    let seg = tape.add(cce_t1, cce_t2)?;
    let weighted = tape.scale(bce, T::from_f64(BCD_WEIGHT))?;
    let total = tape.add(seg, weighted)?;
    Ok(ScdLoss { total, cce_t1, cce_t2, bce })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScdTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for ScdTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 4,
            sgd: SgdConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub cce_t1: f64,
    pub cce_t2: f64,
    pub bce: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScdStep {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossTerms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScdEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<ValMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub loss: f64,
    pub acc_t1: f64,
    pub acc_t2: f64,
    pub acc_change: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScdTrainLog {
    pub steps: Vec<ScdStep>,
    pub epochs: Vec<ScdEpoch>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

fn terms<T: Scalar>(tape: &Tape<T>, l: &ScdLoss) -> LossTerms {
    LossTerms {
        total: tape.scalar_value(l.total).as_f64(),
        cce_t1: tape.scalar_value(l.cce_t1).as_f64(),
        cce_t2: tape.scalar_value(l.cce_t2).as_f64(),
        bce: tape.scalar_value(l.bce).as_f64(),
    }
}

fn batch_inputs(batch: &[&ScdSample]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>, Vec<usize>, Vec<f32>)> {
    Ok((
        stack(batch.iter().map(|b| b.t1.clone()))?,
        stack(batch.iter().map(|b| b.t2.clone()))?,
        batch.iter().flat_map(|b| b.y1.iter().copied()).collect(),
        batch.iter().flat_map(|b| b.y2.iter().copied()).collect(),
        batch.iter().flat_map(|b| b.change.iter().copied()).collect(),
    ))
}

/// One SGD step; returns the loss terms before the update.
pub fn scd_step(model: &ScdModel, store: &mut ParamStore<f32>, batch: &[&ScdSample], sgd: &SgdConfig) -> Result<LossTerms> {
    let (a, b, y1, y2, ch) = batch_inputs(batch)?;
    let tape = Tape::new();
    let mut s = Session::new(&tape, store, true);
    let (x1, x2) = (tape.constant(a), tape.constant(b));
    let out = model.forward(&mut s, x1, x2)?;
    let loss = total_loss(&tape, &out, &y1, &y2, &ch)?;
    let t = terms(&tape, &loss);
    let grads = tape.backward(loss.total)?;
    s.accumulate(&grads);
    sgd_step(store, sgd)?;
    Ok(t)
}

/// Loss and pixel accuracies in eval mode.
pub fn scd_validate(model: &ScdModel, store: &mut ParamStore<f32>, data: &[ScdSample], batch: usize) -> Result<ValMetrics> {
    let (mut loss, mut n) = (0.0, 0usize);
    let (mut hit1, mut hit2, mut hitc, mut px) = (0usize, 0usize, 0usize, 0usize);
    for chunk in data.chunks(batch.max(1)) {
        let refs: Vec<&ScdSample> = chunk.iter().collect();
        let (a, b, y1, y2, ch) = batch_inputs(&refs)?;
        let tape = Tape::new();
        let mut s = Session::new(&tape, store, false);
        let (x1, x2) = (tape.constant(a), tape.constant(b));
        let out = model.forward(&mut s, x1, x2)?;
        loss += terms(&tape, &total_loss(&tape, &out, &y1, &y2, &ch)?).total * chunk.len() as f64;
        n += chunk.len();
        let p = predictions(&tape, &out)?;
        hit1 += p.seg_t1.iter().zip(&y1).filter(|(&p, &y)| p as usize == y).count();
        hit2 += p.seg_t2.iter().zip(&y2).filter(|(&p, &y)| p as usize == y).count();
        hitc += p.change.iter().zip(&ch).filter(|(&p, &y)| p as f32 == y).count();
        px += y1.len();
    }
    let px = px.max(1) as f64;
    Ok(ValMetrics {
        loss: loss / n.max(1) as f64,
        acc_t1: hit1 as f64 / px,
        acc_t2: hit2 as f64 / px,
        acc_change: hitc as f64 / px,
    })
}

/// Train with shuffled mini-batches, keeping the parameters of the epoch with
/// the lowest validation loss (the last epoch when there is no validation set).
pub fn scd_train(
    model: &ScdModel,
    store: &mut ParamStore<f32>,
    train: &[ScdSample],
    val: &[ScdSample],
    cfg: &ScdTrainConfig,
    mut on_epoch: impl FnMut(&ScdEpoch),
) -> Result<ScdTrainLog> {
    if train.is_empty() {
        return Err(NetError::Data("no change-detection training samples".into()));
    }
    let mut log = ScdTrainLog::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(train.len(), cfg.batch, cfg.seed, epoch);
        let mut sum = 0.0;
        for idx in &batches {
            let batch: Vec<&ScdSample> = idx.iter().map(|&i| &train[i]).collect();
            let loss = scd_step(model, store, &batch, &cfg.sgd).map_err(|e| diverged(epoch, step, e))?;
            if !loss.total.is_finite() {
                return Err(NetError::Diverged {
                    epoch,
                    step,
                    detail: format!("loss {}", loss.total),
                });
            }
            sum += loss.total;
            log.steps.push(ScdStep { epoch, step, loss });
            step += 1;
        }
        let val_metrics = if val.is_empty() {
            None
        } else {
            Some(scd_validate(model, store, val, cfg.batch).map_err(|e| diverged(epoch, step, e))?)
        };
        if let Some(v) = &val_metrics {
            if best.as_ref().is_none_or(|(b, _)| v.loss < *b) {
                best = Some((v.loss, store.clone()));
                log.best_epoch = Some(epoch);
            }
        }
        let e = ScdEpoch {
            epoch,
            train_loss: sum / batches.len() as f64,
            val: val_metrics,
        };
        on_epoch(&e);
        log.epochs.push(e);
    }
    match best {
        Some((_, kept)) => *store = kept,
        None => log.best_epoch = cfg.epochs.checked_sub(1),
    }
    Ok(log)
}

/// Per-pixel labels, row-major over the batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScdPrediction {
    pub seg_t1: Vec<u16>,
    pub seg_t2: Vec<u16>,
    pub change: Vec<u16>,
}

fn predictions<T: Scalar>(tape: &Tape<T>, out: &ScdOutputs) -> Result<ScdPrediction> {
    let labels = |v: Var| -> Result<Vec<u16>> {
        let t = tape.value(v);
        Ok(argmax_channels(t.data(), t.dims4()?).into_iter().map(|k| k as u16).collect())
    };
    let change = tape.value(out.change).data().iter().map(|&z| u16::from(z > T::zero())).collect();
    Ok(ScdPrediction {
        seg_t1: labels(out.seg_t1)?,
        seg_t2: labels(out.seg_t2)?,
        change,
    })
}

/// Eval-mode labels for `N×3×H×W` epoch images. Segmentation ties go to the
/// lowest class id; a zero change logit counts as no change.
pub fn scd_infer(model: &ScdModel, store: &mut ParamStore<f32>, t1: &Tensor<f32>, t2: &Tensor<f32>) -> Result<ScdPrediction> {
    let tape = Tape::new();
    let mut s = Session::new(&tape, store, false);
    let (x1, x2) = (tape.constant(t1.clone()), tape.constant(t2.clone()));
    let out = model.forward(&mut s, x1, x2)?;
    predictions(&tape, &out)
}
