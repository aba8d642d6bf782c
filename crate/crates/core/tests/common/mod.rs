//! Shared oracles for the integration tests.
#![allow(dead_code)]

use qsim_core::bkd::{Activation, Block, LayerGrads, LayerSpec, Linear, QBlock, QuantSetup};
use qsim_core::quant::quant_trace;
use qsim_core::rng::{rng_normal, RngStream};
use qsim_core::scaling::wd_plan;
use qsim_core::tensor::{div_cols, Tensor};
use qsim_core::{CalibMethod, TimestepIndex};

pub fn normal(seed: u64, stream: u64, shape: &[usize], std: f32) -> Tensor {
    rng_normal(RngStream::new(seed, stream), shape, 0.0, std).unwrap()
}

/// Reference matmul: plain triple loop in f64.
pub fn matmul_loop(x: &Tensor, w: &Tensor) -> Vec<f64> {
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += x.data()[i * k + p] as f64 * w.data()[p * m + j] as f64;
            }
            out[i * m + j] = acc;
        }
    }
    out
}

/// A small two-layer block, calibrated with dilation plans on random
/// per-timestep data, with non-integer activation zero-points.
pub struct GradCase {
    pub fp: Block,
    pub q: QBlock,
    pub x: Tensor,
    pub idx: TimestepIndex,
    pub target: Tensor,
}

pub fn grad_case(seed: u64, bits: u32, timesteps: usize) -> GradCase {
    grad_case_with(seed, bits, timesteps, 1.6)
}

/// As [`grad_case`], with the batch drawn at standard deviation `batch_std`
/// (calibration data has 1 at the first timestep and grows from there).
pub fn grad_case_with(seed: u64, bits: u32, timesteps: usize, batch_std: f32) -> GradCase {
    let specs = vec![
        LayerSpec { in_dim: 6, out_dim: 5, bias: true, act: Activation::Relu },
        LayerSpec { in_dim: 5, out_dim: 4, bias: true, act: Activation::None },
    ];
    let weights: Vec<Linear> = specs
        .iter()
        .enumerate()
        .map(|(j, l)| Linear {
            w: normal(seed, 10 + j as u64, &[l.in_dim, l.out_dim], 0.5),
            b: Some(normal(seed, 20 + j as u64, &[l.out_dim], 0.1).into_data()),
        })
        .collect();
    let fp = Block { layers: specs, weights };

    let steps: Vec<Tensor> = (0..timesteps)
        .map(|t| normal(seed, 30 + t as u64, &[16, 6], 1.0 + t as f32 * 0.5))
        .collect();
    let mut inputs: Vec<Vec<Tensor>> = vec![Vec::new(), Vec::new()];
    for x in &steps {
        let (ins, _) = qsim_core::bkd::block_layer_inputs(&fp, x).unwrap();
        inputs[0].push(ins[0].clone());
        inputs[1].push(ins[1].clone());
    }
    let plans: Vec<_> = fp.weights.iter().map(|l| wd_plan(&l.w).unwrap()).collect();
    let setup = QuantSetup {
        bits_w: bits,
        bits_a: bits,
        act_method: CalibMethod::Mse,
        weight_method: CalibMethod::MaxMin,
        grid_points: 20,
    };
    let mut q = QBlock::calibrate(&fp, &plans, &inputs, &setup).unwrap();
    for l in &mut q.layers {
        for z in &mut l.act_q.zero_point {
            *z += 0.3;
        }
    }

    // The default batch is a little wider than calibration so some values
    // clip; rows are then nudged so that no first-layer input sits near a
    // rounding tie.
    let rows = 12;
    let idx = TimestepIndex::new((0..rows).map(|r| r % timesteps + 1).collect(), timesteps).unwrap();
    let mut x = normal(seed, 40, &[rows, 6], batch_std).into_data();
    let l0 = &q.layers[0];
    for r in 0..rows {
        let lane = idx.lane(r);
        let d = l0.act_q.delta[lane];
        for c in 0..6 {
            let s = l0.in_scale[c];
            let u = ((x[r * 6 + c] / s) as f64) / d as f64;
            if ((u - u.floor()) - 0.5).abs() <= 0.05 {
                x[r * 6 + c] += 0.15 * d * s;
            }
        }
    }
    let x = Tensor::new(vec![rows, 6], x).unwrap();
    let target = normal(seed, 50, &[rows, 4], 1.0);
    GradCase { fp, q, x, idx, target }
}

/// Trainable values of one layer, widened to f64.
#[derive(Clone)]
pub struct Params {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub w_delta: Vec<f64>,
    pub act_delta: Vec<f64>,
    pub act_zero: Vec<f64>,
}

pub fn params_of(q: &QBlock) -> Vec<Params> {
    let f = |v: &[f32]| v.iter().map(|&a| a as f64).collect::<Vec<_>>();
    q.layers
        .iter()
        .map(|l| Params {
            w: f(l.w.data()),
            b: l.b.as_deref().map(f).unwrap_or_default(),
            w_delta: f(&l.w_delta),
            act_delta: f(&l.act_q.delta),
            act_zero: f(&l.act_q.zero_point),
        })
        .collect()
}

/// Per element: `Ok(ρ)` with `ρ = round(u) − u` for values inside the clip
/// range, `Err(level)` for clipped ones.
type Frozen = Vec<Result<f64, f64>>;

/// Straight-through surrogate of the quantized block, frozen at the base
/// point. Inside the range `Q(v) = v + Δ·ρ`, clipped `Q(v) = Δ·(level − z)`;
/// both agree with the real quantizer at the base point and their exact
/// derivatives are the straight-through rules.
pub struct Surrogate<'a> {
    q: &'a QBlock,
    x: &'a Tensor,
    idx: &'a TimestepIndex,
    target: &'a Tensor,
    act: Vec<Frozen>,
    wts: Vec<Frozen>,
    /// Sign pattern of every ReLU pre-activation at the base point.
    relu_on: Vec<Vec<bool>>,
}

fn freeze(v: f32, d: f32, z: f32, bits: u32) -> Result<f64, f64> {
    let t = quant_trace(v, d, z, ((1u64 << bits) - 1) as f64);
    if t.clipped {
        Err(t.level)
    } else {
        Ok(t.rounded - t.scaled)
    }
}

impl<'a> Surrogate<'a> {
    pub fn new(q: &'a QBlock, x: &'a Tensor, idx: &'a TimestepIndex, target: &'a Tensor) -> Self {
        let mut act = Vec::new();
        let mut wts = Vec::new();
        let mut a = x.clone();
        for l in &q.layers {
            let xs = div_cols(&a, &l.in_scale).unwrap();
            let ci = l.spec.in_dim;
            act.push(
                xs.data()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let lane = idx.lane(k / ci);
                        freeze(v, l.act_q.delta[lane], l.act_q.zero_point[lane], l.act_q.bits)
                    })
                    .collect(),
            );
            let co = l.spec.out_dim;
            wts.push(
                l.w.data()
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| freeze(v, l.w_delta[k % co], l.w_zero[k % co], l.w_bits))
                    .collect(),
            );
            a = l.forward(&a, idx).unwrap();
        }
        let mut sur = Self { q, x, idx, target, act, wts, relu_on: Vec::new() };
        sur.relu_on = sur.eval(&params_of(q)).1;
        sur
    }

    /// Clipped activation elements at the base point, over all layers.
    pub fn clipped_activations(&self) -> usize {
        self.act.iter().flatten().filter(|e| e.is_err()).count()
    }

    pub fn loss(&self, p: &[Params]) -> f64 {
        self.eval(p).0
    }

    /// Loss at `p`, or `None` when some ReLU switched side relative to the
    /// base point (the surrogate is not smooth across that kink).
    pub fn loss_same_side(&self, p: &[Params]) -> Option<f64> {
        let (l, on) = self.eval(p);
        (on == self.relu_on).then_some(l)
    }

    fn eval(&self, p: &[Params]) -> (f64, Vec<Vec<bool>>) {
        let mut relu_on = Vec::new();
        let n = self.x.shape()[0];
        let mut a: Vec<f64> = self.x.data().iter().map(|&v| v as f64).collect();
        for (li, l) in self.q.layers.iter().enumerate() {
            let (ci, co) = (l.spec.in_dim, l.spec.out_dim);
            let pl = &p[li];
            let xq: Vec<f64> = (0..n * ci)
                .map(|k| {
                    let lane = self.idx.lane(k / ci);
                    let d = pl.act_delta[lane];
                    let v = a[k] / l.in_scale[k % ci] as f64;
                    match self.act[li][k] {
                        Ok(rho) => v + d * rho,
                        Err(level) => d * (level - pl.act_zero[lane]),
                    }
                })
                .collect();
            let wq: Vec<f64> = (0..ci * co)
                .map(|k| {
                    let d = pl.w_delta[k % co];
                    match self.wts[li][k] {
                        Ok(rho) => pl.w[k] + d * rho,
                        Err(level) => d * (level - l.w_zero[k % co] as f64),
                    }
                })
                .collect();
            let mut out = vec![0.0; n * co];
            for r in 0..n {
                for j in 0..co {
                    let mut acc = pl.b.get(j).copied().unwrap_or(0.0);
                    for i in 0..ci {
                        acc += xq[r * ci + i] * wq[i * co + j];
                    }
                    out[r * co + j] = acc;
                }
            }
            if l.spec.act == Activation::Relu {
                relu_on.push(out.iter().map(|&v| v > 0.0).collect());
            }
            a = out.into_iter().map(|v| act64(l.spec.act, v)).collect();
        }
        let t = self.target.data();
        let loss = a
            .iter()
            .zip(t)
            .map(|(&o, &t)| (o - t as f64).powi(2))
            .sum::<f64>()
            / a.len() as f64;
        (loss, relu_on)
    }
}

pub fn act64(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Relu => v.max(0.0),
        Activation::Silu => v / (1.0 + (-v).exp()),
        Activation::None => v,
    }
}

/// Which trainable a finite-difference probe targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    W,
    B,
    WDelta,
    ActDelta,
    ActZero,
}

fn slot(p: &mut Params, g: Group) -> &mut Vec<f64> {
    match g {
        Group::W => &mut p.w,
        Group::B => &mut p.b,
        Group::WDelta => &mut p.w_delta,
        Group::ActDelta => &mut p.act_delta,
        Group::ActZero => &mut p.act_zero,
    }
}

fn grad_slot(g: &LayerGrads, grp: Group) -> Vec<f64> {
    match grp {
        Group::W => g.w.clone(),
        Group::B => g.b.clone().unwrap_or_default(),
        Group::WDelta => g.w_delta.clone(),
        Group::ActDelta => g.act_delta.clone(),
        Group::ActZero => g.act_zero.clone(),
    }
}

/// Finite-difference comparison of one trainable group.
#[derive(Debug, Clone, Copy)]
pub struct FdResult {
    pub group: Group,
    /// Worst `|fd − g| / max(|fd|, |g|, floor)`, `floor` being 1e-3 of the
    /// group's largest gradient so lanes zero in both routes agree.
    pub worst_rel: f64,
    pub probes: usize,
    /// Probes dropped because a ReLU changed side within the step.
    pub kink_skipped: usize,
}

/// Reverse-mode gradients against central differences (step `h`) of the
/// surrogate, per trainable group.
pub fn fd_check(case: &GradCase, h: f64) -> Vec<FdResult> {
    let (_, grads) = case.q.loss_and_grads(&case.x, &case.idx, &case.target).unwrap();
    let sur = Surrogate::new(&case.q, &case.x, &case.idx, &case.target);
    let base = params_of(&case.q);
    let groups = [Group::W, Group::B, Group::WDelta, Group::ActDelta, Group::ActZero];
    let mut out = Vec::new();
    for group in groups {
        let mut r = FdResult { group, worst_rel: 0.0, probes: 0, kink_skipped: 0 };
        for (li, lg) in grads.iter().enumerate() {
            let g = grad_slot(lg, group);
            let floor = 1e-3 * g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            #[allow(clippy::needless_range_loop)]
            for k in 0..g.len() {
                let mut plus = base.clone();
                slot(&mut plus[li], group)[k] += h;
                let mut minus = base.clone();
                slot(&mut minus[li], group)[k] -= h;
                let (Some(lp), Some(lm)) = (sur.loss_same_side(&plus), sur.loss_same_side(&minus))
                else {
                    r.kink_skipped += 1;
                    continue;
                };
                let fd = (lp - lm) / (2.0 * h);
                let scale = fd.abs().max(g[k].abs()).max(floor).max(1e-12);
                r.worst_rel = r.worst_rel.max((fd - g[k]).abs() / scale);
                r.probes += 1;
            }
        }
        out.push(r);
    }
    out
}

/// Column-wise (min, max) of `w` by direct scan.
pub fn col_extremes(w: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let (ci, co) = (w.shape()[0], w.shape()[1]);
    let mut lo = vec![f32::INFINITY; co];
    let mut hi = vec![f32::NEG_INFINITY; co];
    for i in 0..ci {
        for j in 0..co {
            let v = w.data()[i * co + j];
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (lo, hi)
}

/// Rows holding some column's max or min, ties included.
pub fn saturated_rows(w: &Tensor) -> Vec<bool> {
    let (lo, hi) = col_extremes(w);
    let co = w.shape()[1];
    (0..w.shape()[0])
        .map(|i| (0..co).any(|j| {
            let v = w.data()[i * co + j];
            v == lo[j] || v == hi[j]
        }))
        .collect()
}

/// Whether row `i` scaled by `s` (f64 arithmetic) stays inside every column
/// range of the original `w`.
pub fn row_fits(w: &Tensor, i: usize, s: f64) -> bool {
    let (lo, hi) = col_extremes(w);
    let co = w.shape()[1];
    (0..co).all(|j| {
        let v = s * w.data()[i * co + j] as f64;
        v >= lo[j] as f64 && v <= hi[j] as f64
    })
}

/// Largest `1 + k·step` keeping row `i` contained, searched over the grid
/// up to `cap`. The feasible scales form an interval containing 1, so the
/// grid is bisected rather than walked.
pub fn grid_max_scale(w: &Tensor, i: usize, step: f64, cap: f64) -> f64 {
    let at = |k: u64| 1.0 + k as f64 * step;
    let kmax = ((cap - 1.0) / step) as u64;
    if row_fits(w, i, at(kmax)) {
        return cap;
    }
    let (mut ok, mut bad) = (0u64, kmax);
    while bad - ok > 1 {
        let mid = ok + (bad - ok) / 2;
        if row_fits(w, i, at(mid)) {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    at(ok)
}

/// Random matrix of the given shape: standard normal, or Student-t with 3
/// degrees of freedom when `heavy`.
pub fn random_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize, heavy: bool) -> Tensor {
    use rand_distr::{Distribution, StandardNormal, StudentT};
    let t = StudentT::new(3.0f64).unwrap();
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = if heavy { t.sample(rng) } else { StandardNormal.sample(rng) };
            v as f32
        })
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// `‖a − b‖_F / ‖a‖_F` in f64.
pub fn rel_frob(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    (num / den.max(1e-300)).sqrt()
}

/// Plain per-element quantizer in f64 with its own rounding, used as an
/// independent reference for `Q(x)`.
pub fn quant_ref(x: f32, d: f32, z: f32, bits: u32) -> f32 {
    let (d, z) = (d as f64, z as f64);
    let qm = ((1u64 << bits) - 1) as f64;
    let u = x as f64 / d;
    let mut r = u.floor();
    let frac = u - r;
    if frac > 0.5 || (frac == 0.5 && r % 2.0 != 0.0) {
        r += 1.0;
    }
    (d * ((r + z).clamp(0.0, qm) - z)) as f32
}
