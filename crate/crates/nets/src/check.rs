//! Finite-difference gradient checks of every tape operation and of both
//! networks end to end, in 64-bit.

use agsp_tensor::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use agsp_tensor::init::{substream, uniform, Rng64};
use agsp_tensor::{BnMode, ConvGeom, ParamId, ParamStore, Session, Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::Serialize;

use crate::bdcn::{bdcn_loss, Bdcn, BdcnConfig, Sem, SemConfig};
use crate::ccnet::{total_loss, Ccam, ScdConfig, ScdModel};
use crate::{NetError, Result};

pub const OP_TOL: f64 = 1e-4;
pub const NETWORK_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct NamedReport {
    pub name: String,
    pub report: GradcheckReport,
}

fn to_tensor_err(e: NetError) -> TensorError {
    match e {
        NetError::Tensor(t) => t,
        other => TensorError::Invalid {
            op: "network",
            detail: other.to_string(),
        },
    }
}

fn rand_t(shape: &[usize], rng: &mut Rng64) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng)
}

/// Away from zero so that ReLU and |·| kinks are not straddled.
fn rand_off_zero(shape: &[usize], rng: &mut Rng64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

fn op_opts(seed: u64) -> GradcheckOptions {
    GradcheckOptions {
        tol: OP_TOL,
        seed,
        ..Default::default()
    }
}

type OpFn = Box<dyn Fn(&Tape<f64>, &[Var]) -> agsp_tensor::Result<Var>>;

/// Every differentiable operation on three shapes each.
pub fn op_suite(seed: u64) -> Result<Vec<NamedReport>> {
    let mut rng = substream(seed, "gradcheck/ops");
    let shapes = [(1, 2, 4, 5), (2, 3, 3, 3), (1, 1, 6, 4)];
    let mut out = Vec::new();
    let mut run = |name: String, inputs: Vec<Tensor<f64>>, f: OpFn| -> Result<()> {
        let report = gradcheck(&inputs, f, &op_opts(seed))?;
        out.push(NamedReport { name, report });
        Ok(())
    };
    for (i, &(n, c, h, w)) in shapes.iter().enumerate() {
        let s4 = [n, c, h, w];
        let x = rand_t(&s4, &mut rng);
        for (geom, k) in [(ConvGeom::new(1, 1, 1), 3), (ConvGeom::new(2, 1, 1), 3), (ConvGeom::new(1, 2, 2), 3)] {
            let wt = rand_t(&[3, c, k, k], &mut rng);
            let b = rand_t(&[3], &mut rng);
            run(
                format!("conv2d[{i}] s{} p{} d{}", geom.stride, geom.padding, geom.dilation),
                vec![x.clone(), wt, b],
                Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom)),
            )?;
        }
        let xo = rand_off_zero(&s4, &mut rng);
        run(format!("relu[{i}]"), vec![xo.clone()], Box::new(|t, v| t.relu(v[0])))?;
        run(format!("abs[{i}]"), vec![xo], Box::new(|t, v| t.abs(v[0])))?;
        run(format!("sigmoid[{i}]"), vec![x.clone()], Box::new(|t, v| t.sigmoid(v[0])))?;
        run(format!("scale[{i}]"), vec![x.clone()], Box::new(|t, v| t.scale(v[0], -1.7)))?;
        let y = rand_t(&s4, &mut rng);
        run(format!("add[{i}]"), vec![x.clone(), y.clone()], Box::new(|t, v| t.add(v[0], v[1])))?;
        run(format!("sub[{i}]"), vec![x.clone(), y.clone()], Box::new(|t, v| t.sub(v[0], v[1])))?;
        run(format!("concat[{i}]"), vec![x.clone(), y], Box::new(|t, v| t.concat_channels(v[0], v[1])))?;
        for axis in [1, 3] {
            run(format!("softmax[{i}] axis {axis}"), vec![x.clone()], Box::new(move |t, v| t.softmax(v[0], axis)))?;
        }
        if h >= 2 && w >= 2 {
            run(format!("maxpool2d[{i}]"), vec![x.clone()], Box::new(|t, v| t.maxpool2d(v[0], 2, 2)))?;
        }
        run(format!("upsample[{i}]"), vec![x.clone()], Box::new(|t, v| t.upsample_bilinear(v[0], 2)))?;
        let (g, b) = (rand_t(&[c], &mut rng), rand_t(&[c], &mut rng));
        run(
            format!("batchnorm2d train[{i}]"),
            vec![x.clone(), g.clone(), b.clone()],
            Box::new(|t, v| Ok(t.batchnorm2d(v[0], v[1], v[2], BnMode::Train { eps: 1e-5 })?.0)),
        )?;
        let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        run(
            format!("batchnorm2d eval[{i}]"),
            vec![x.clone(), g, b],
            Box::new(move |t, v| {
                let mode = BnMode::Eval { mean: &mean, var: &var, eps: 1e-5 };
                Ok(t.batchnorm2d(v[0], v[1], v[2], mode)?.0)
            }),
        )?;
        let (q, k) = (rand_t(&[n, 2, h, w], &mut rng), rand_t(&[n, 2, h, w], &mut rng));
        run(format!("cc_affinity[{i}]"), vec![q, k], Box::new(|t, v| t.cc_affinity(v[0], v[1])))?;
        let attn = rand_t(&[n, h + w - 1, h, w], &mut rng);
        run(format!("cc_aggregate[{i}]"), vec![attn, x.clone()], Box::new(|t, v| t.cc_aggregate(v[0], v[1])))?;
        let target: Vec<f64> = (0..x.len()).map(|_| f64::from(rng.gen::<bool>())).collect();
        let weights: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        run(
            format!("bce_with_logits[{i}]"),
            vec![x.clone()],
            Box::new(move |t, v| t.bce_with_logits(v[0], &target, &weights)),
        )?;
        let classes: Vec<usize> = (0..n * h * w).map(|_| rng.gen_range(0..c)).collect();
        run(
            format!("cross_entropy[{i}]"),
            vec![x.clone()],
            Box::new(move |t, v| t.cross_entropy(v[0], &classes)),
        )?;
        let ws: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        run(format!("weighted_sum[{i}]"), vec![x], Box::new(move |t, v| t.weighted_sum(v[0], ws.clone())))?;
    }
    Ok(out)
}

/// Check `loss(store)` against finite differences in the input tensors and
/// a sample of every parameter.
fn check_with_params<F>(
    store: &ParamStore<f64>,
    inputs: Vec<Tensor<f64>>,
    loss: F,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Session<f64>, &[Var]) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().collect();
    let n_in = inputs.len();
    let mut all = inputs;
    all.extend(store.params().iter().map(|p| p.value.clone()));
    Ok(gradcheck(
        &all,
        |tape, vars| {
            let mut st = store.clone();
            let mut s = Session::new(tape, &mut st, true);
            for (&id, &v) in ids.iter().zip(&vars[n_in..]) {
                s.bind(id, v);
            }
            loss(&mut s, &vars[..n_in]).map_err(to_tensor_err)
        },
        opts,
    )?)
}

pub fn network_opts(seed: u64, max_coords: usize) -> GradcheckOptions {
    GradcheckOptions {
        tol: NETWORK_TOL,
        max_coords: Some(max_coords),
        seed,
        ..Default::default()
    }
}

/// The SEM and a single criss-cross module on their own.
pub fn module_suite(seed: u64) -> Result<Vec<NamedReport>> {
    let mut rng = substream(seed, "gradcheck/modules");
    let mut out = Vec::new();
    let mut store = ParamStore::<f64>::new();
    let sem = Sem::new(&mut store, "sem", 3, SemConfig { r0: 2, k: 3, channels: 4 }, seed)?;
    let x = rand_t(&[1, 3, 8, 8], &mut rng);
    let report = check_with_params(&store, vec![x], |s, v| sem.forward(s, v[0]), &op_opts(seed))?;
    out.push(NamedReport { name: "sem".into(), report });
    let mut store = ParamStore::<f64>::new();
    let ccam = Ccam::new(&mut store, "ccam", 4, seed);
    let x = rand_t(&[1, 4, 5, 6], &mut rng);
    let report = check_with_params(&store, vec![x], |s, v| ccam.forward(s, v[0]), &op_opts(seed))?;
    out.push(NamedReport { name: "ccam".into(), report });
    Ok(out)
}

pub fn bdcn_check(seed: u64, size: usize, max_coords: usize) -> Result<GradcheckReport> {
    let mut store = ParamStore::<f64>::new();
    let net = Bdcn::new(&mut store, BdcnConfig::default(), seed)?;
    let mut rng = substream(seed, "gradcheck/bdcn");
    let image = rand_t(&[1, 3, size, size], &mut rng);
    let target: Vec<f64> = (0..size * size).map(|_| f64::from(rng.gen_bool(0.3))).collect();
    check_with_params(
        &store,
        vec![image],
        |s, v| {
            let out = net.forward(s, v[0])?;
            bdcn_loss(s.tape, &out, &target)
        },
        &network_opts(seed, max_coords),
    )
}

pub fn scd_check(seed: u64, size: usize, max_coords: usize) -> Result<GradcheckReport> {
    let mut store = ParamStore::<f64>::new();
    let cfg = ScdConfig::default();
    let model = ScdModel::new(&mut store, cfg.clone(), seed)?;
    let mut rng = substream(seed, "gradcheck/scd");
    let (a, b) = (rand_t(&[1, 3, size, size], &mut rng), rand_t(&[1, 3, size, size], &mut rng));
    let n = size * size;
    let y1: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.t1_classes)).collect();
    let y2: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.t2_classes)).collect();
    let ch: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
    check_with_params(
        &store,
        vec![a, b],
        |s, v| {
            let out = model.forward(s, v[0], v[1])?;
            Ok(total_loss(s.tape, &out, &y1, &y2, &ch)?.total)
        },
        &network_opts(seed, max_coords),
    )
}
