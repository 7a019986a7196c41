//! Training samples and batching.

use agsp_tensor::init::substream;
use agsp_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;

use crate::{NetError, Result};

/// RGB pixels (row-major) to a `1×3×H×W` tensor scaled to [-1, 1].
pub fn image_tensor<T: Scalar>(pixels: &[[u8; 3]], h: usize, w: usize) -> Result<Tensor<T>> {
    if pixels.len() != h * w {
        return Err(NetError::Data(format!("{} pixels for {h}×{w}", pixels.len())));
    }
    let hw = h * w;
    let mut data = vec![T::zero(); 3 * hw];
    for (i, px) in pixels.iter().enumerate() {
        for ch in 0..3 {
            data[ch * hw + i] = T::from_f64(px[ch] as f64 / 127.5 - 1.0);
        }
    }
    Ok(Tensor::new(&[1, 3, h, w], data)?)
}

fn check_image(t: &Tensor<f32>) -> Result<(usize, usize)> {
    match t.dims4() {
        Ok((1, 3, h, w)) => Ok((h, w)),
        _ => Err(NetError::Data(format!("expected a 1×3×H×W image, got {:?}", t.shape()))),
    }
}

#[derive(Clone, Debug)]
pub struct EdgeSample {
    pub image: Tensor<f32>,
    /// `H·W` values in {0, 1}.
    pub edges: Vec<f32>,
}

impl EdgeSample {
    pub fn new(image: Tensor<f32>, edges: Vec<f32>) -> Result<Self> {
        let (h, w) = check_image(&image)?;
        if edges.len() != h * w || edges.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(NetError::Data("edge target must be a binary H·W map".into()));
        }
        Ok(Self { image, edges })
    }
}

#[derive(Clone, Debug)]
pub struct ScdSample {
    pub t1: Tensor<f32>,
    pub t2: Tensor<f32>,
    pub y1: Vec<usize>,
    pub y2: Vec<usize>,
    /// `H·W` values in {0, 1}.
    pub change: Vec<f32>,
}

impl ScdSample {
    pub fn new(t1: Tensor<f32>, t2: Tensor<f32>, y1: Vec<usize>, y2: Vec<usize>, change: Vec<f32>) -> Result<Self> {
        let (h, w) = check_image(&t1)?;
        if check_image(&t2)? != (h, w) {
            return Err(NetError::Data("epoch images differ in size".into()));
        }
        let n = h * w;
        if y1.len() != n || y2.len() != n || change.len() != n {
            return Err(NetError::Data("label maps must cover every pixel".into()));
        }
        if change.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(NetError::Data("change target must be binary".into()));
        }
        Ok(Self { t1, t2, y1, y2, change })
    }
}

/// Sample indices for one epoch, shuffled from the epoch's own sub-stream.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, &format!("shuffle/{epoch}")));
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

pub(crate) fn stack<T: Scalar>(items: impl Iterator<Item = Tensor<f32>>) -> Result<Tensor<T>> {
    let items: Vec<Tensor<T>> = items.map(|t| t.cast()).collect();
    Ok(Tensor::stack(&items)?)
}

/// Lowest index of the maximum along the channel axis of `N×C×H×W` data.
pub fn argmax_channels<T: Scalar>(data: &[T], (n, c, h, w): (usize, usize, usize, usize)) -> Vec<usize> {
    let hw = h * w;
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        for i in 0..hw {
            let mut best = 0;
            for k in 1..c {
                if data[(b * c + k) * hw + i] > data[(b * c + best) * hw + i] {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    out
}
