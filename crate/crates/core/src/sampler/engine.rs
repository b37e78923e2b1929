use std::collections::BTreeMap;

use nalgebra::allocator::Allocator;
use nalgebra::{DMatrix, DVector, DefaultAllocator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ChainOutput, LatentDraw, LatentMode, SamplerConfig};
use crate::error::{Error, Result};
use crate::linalg::LatentDim;
use crate::model::ModelConfig;
use crate::params::{Block, ParamLayout, ParameterVector, Transform};
use crate::prior::log_prior;
use crate::stats::LN_2PI;
use crate::statespace::{HazardEval, Kernel, SubjectPlan, SubjectState};

struct Subject<D: LatentDim>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    state: Option<SubjectState<D>>,
    z: Vec<f64>,
    eta: Vec<f64>,
    haz: f64,
}

struct Current<D: LatentDim>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    u: Vec<f64>,
    pv: ParameterVector,
    prior: f64,
    hz: Option<HazardEval>,
    subjects: Vec<Subject<D>>,
    ly: f64,
    lh: f64,
}

impl<D: LatentDim> Current<D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    fn target(&self) -> f64 {
        self.prior + self.ly + self.lh
    }
}

/// Parameter-side proposal outcome.
struct Candidate<D: LatentDim>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    u: Vec<f64>,
    pv: ParameterVector,
    prior: f64,
    hz: Option<HazardEval>,
    /// New states and paths; `None` when only hazard coefficients moved.
    latent: Option<Vec<(SubjectState<D>, Vec<f64>)>>,
    haz: Vec<f64>,
    ly: f64,
    lh: f64,
}

struct BlockState {
    name: String,
    idx: Vec<usize>,
    full: bool,
    chol: DMatrix<f64>,
    log_step: f64,
    n_prop: usize,
    post_prop: usize,
    post_acc: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    n_seen: usize,
    adapted: bool,
}

impl BlockState {
    fn observe(&mut self, u: &[f64]) {
        let x = DVector::from_iterator(self.idx.len(), self.idx.iter().map(|&i| u[i]));
        self.n_seen += 1;
        let delta = &x - &self.mean;
        self.mean += &delta / self.n_seen as f64;
        let delta2 = &x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn refresh_cov(&mut self) {
        let d = self.idx.len();
        if self.n_seen < 2 * d + 10 {
            return;
        }
        let mut cov = &self.m2 / (self.n_seen as f64 - 1.0);
        let scale = (0..d).map(|i| cov[(i, i)]).fold(0.0f64, f64::max).max(1e-12);
        for i in 0..d {
            cov[(i, i)] += 1e-8 * scale;
        }
        if let Some(c) = cov.cholesky() {
            self.chol = c.unpack();
            if !self.adapted {
                self.log_step = (2.38 / (d as f64).sqrt()).ln();
                self.adapted = true;
            }
        }
    }
}

fn diag(sd: &DVector<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(sd.len(), sd.len());
    for (i, v) in sd.iter().enumerate() {
        m[(i, i)] = *v;
    }
    m
}

fn block_name(b: Block) -> &'static str {
    match b {
        Block::Structural => "structural",
        Block::Loadings => "loadings",
        Block::Scales => "scales",
        Block::Hazard => "hazard",
        Block::Tau => "tau",
    }
}

struct Engine<'a, D: LatentDim>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    d: D,
    model: &'a ModelConfig,
    layout: &'a ParamLayout,
    plans: &'a [SubjectPlan],
    known: bool,
    p: usize,
}

impl<D: LatentDim> Engine<'_, D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    fn prior_at(&self, u: &[f64]) -> Option<(ParameterVector, f64)> {
        let x = self.layout.to_constrained(u);
        let pv = self.layout.from_flat(&x).ok()?;
        let lp = log_prior(&pv);
        if !lp.is_finite() {
            return None;
        }
        let total = lp + self.layout.log_jacobian(u);
        total.is_finite().then_some((pv, total))
    }

    fn hazard_sum(&self, hz: &Option<HazardEval>, etas: &mut dyn Iterator<Item = &[f64]>, out: &mut Vec<f64>) -> f64 {
        out.clear();
        let mut total = 0.0;
        for (plan, eta) in self.plans.iter().zip(etas) {
            let h = hz.as_ref().map_or(0.0, |hz| hz.loglik(plan, eta, self.p));
            out.push(h);
            total += h;
        }
        total
    }

    fn candidate(&self, u: Vec<f64>, full: bool, cur: &Current<D>) -> Option<Candidate<D>> {
        let (pv, prior) = self.prior_at(&u)?;
        let hz = HazardEval::new(&pv);
        let mut haz = Vec::with_capacity(self.plans.len());
        if full {
            let kernel = Kernel::new(self.model, &pv, self.d).ok()?;
            let mut latent = Vec::with_capacity(self.plans.len());
            let mut ly = 0.0;
            for (plan, s) in self.plans.iter().zip(&cur.subjects) {
                let st = kernel.state(plan).ok()?;
                let mut eta = vec![0.0; s.z.len()];
                st.eta_from_z(&s.z, &mut eta);
                ly += st.loglik_y;
                latent.push((st, eta));
            }
            let lh = self.hazard_sum(&hz, &mut latent.iter().map(|(_, e)| e.as_slice()), &mut haz);
            Some(Candidate { u, pv, prior, hz, latent: Some(latent), haz, ly, lh })
        } else {
            let lh = self.hazard_sum(&hz, &mut cur.subjects.iter().map(|s| s.eta.as_slice()), &mut haz);
            Some(Candidate { u, pv, prior, hz, latent: None, haz, ly: cur.ly, lh })
        }
    }

    fn accept(&self, cur: &mut Current<D>, cand: Candidate<D>) {
        cur.u = cand.u;
        cur.pv = cand.pv;
        cur.prior = cand.prior;
        cur.hz = cand.hz;
        cur.ly = cand.ly;
        cur.lh = cand.lh;
        if let Some(latent) = cand.latent {
            for (s, (st, eta)) in cur.subjects.iter_mut().zip(latent) {
                s.state = Some(st);
                s.eta = eta;
            }
        }
        for (s, h) in cur.subjects.iter_mut().zip(cand.haz) {
            s.haz = h;
        }
    }

    /// Elliptical slice update of one subject's whitened path.
    fn slice_latent(&self, cur: &mut Current<D>, i: usize, rng: &mut ChaCha8Rng) {
        let Some(hz) = cur.hz.as_ref() else { return };
        let plan = &self.plans[i];
        let s = &mut cur.subjects[i];
        let st = s.state.as_ref().expect("sampled latent state");
        let nu: Vec<f64> = (0..s.z.len()).map(|_| rng.sample(StandardNormal)).collect();
        let threshold = s.haz + rng.random::<f64>().ln();
        let mut angle = rng.random_range(0.0..std::f64::consts::TAU);
        let (mut lo, mut hi) = (angle - std::f64::consts::TAU, angle);
        let mut z = vec![0.0; s.z.len()];
        let mut eta = vec![0.0; s.eta.len()];
        for _ in 0..200 {
            let (sn, cs) = angle.sin_cos();
            for ((zn, zc), v) in z.iter_mut().zip(&s.z).zip(&nu) {
                *zn = zc * cs + v * sn;
            }
            st.eta_from_z(&z, &mut eta);
            let h = hz.loglik(plan, &eta, self.p);
            if h > threshold {
                cur.lh += h - s.haz;
                s.haz = h;
                std::mem::swap(&mut s.z, &mut z);
                std::mem::swap(&mut s.eta, &mut eta);
                return;
            }
            if angle < 0.0 {
                lo = angle;
            } else {
                hi = angle;
            }
            angle = rng.random_range(lo..hi);
        }
    }

    /// Exact Gibbs draw of the whitened path when no event term is present.
    fn fresh_latent(&self, cur: &mut Current<D>, i: usize, rng: &mut ChaCha8Rng) {
        let s = &mut cur.subjects[i];
        s.z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        if let Some(st) = &s.state {
            st.eta_from_z(&s.z, &mut s.eta);
        }
    }

    fn log_posterior(&self, cur: &Current<D>) -> f64 {
        let mut lp = log_prior(&cur.pv) + cur.lh;
        for s in &cur.subjects {
            if let Some(st) = &s.state {
                let zz: f64 = s.z.iter().map(|v| v * v).sum();
                lp += st.loglik_y - 0.5 * zz - 0.5 * s.z.len() as f64 * LN_2PI - st.logdet_a;
            }
        }
        lp
    }
}

pub(super) fn run_chain<D: LatentDim>(
    d: D,
    model: &ModelConfig,
    layout: &ParamLayout,
    plans: &[SubjectPlan],
    cfg: &SamplerConfig,
    initial: &ParameterVector,
    chain: usize,
) -> Result<ChainOutput>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64 + 1);
    let known = cfg.known_latent.as_ref();
    let p = model.p;
    let eng = Engine { d, model, layout, plans, known: known.is_some(), p };

    let mut free = vec![true; layout.len()];
    for name in &cfg.fixed {
        if let Some(i) = layout.index_of(name) {
            free[i] = false;
        }
    }
    if eng.known {
        for (f, c) in free.iter_mut().zip(&layout.coords) {
            if c.block != Block::Hazard {
                *f = false;
            }
        }
    }

    let x0 = initial.to_flat();
    let u0 = layout.to_unconstrained(&x0);
    let mut blocks = Vec::new();
    for kind in [Block::Structural, Block::Loadings, Block::Scales, Block::Tau, Block::Hazard] {
        let idx: Vec<usize> = (0..layout.len()).filter(|&i| free[i] && layout.coords[i].block == kind).collect();
        if idx.is_empty() {
            continue;
        }
        let sd = DVector::<f64>::from_iterator(
            idx.len(),
            idx.iter().map(|&i| match layout.coords[i].transform {
                Transform::Identity => 0.05 * x0[i].abs().max(1.0),
                _ => 0.05,
            }),
        );
        let dim = idx.len();
        blocks.push(BlockState {
            name: block_name(kind).to_string(),
            full: kind != Block::Hazard,
            chol: diag(&sd),
            log_step: 0.0,
            n_prop: 0,
            post_prop: 0,
            post_acc: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
            n_seen: 0,
            adapted: false,
            idx,
        });
    }

    let init_err = |msg: &str| Error::Initialization(format!("chain {chain}: {msg}"));
    let (pv0, prior0) = eng.prior_at(&u0).ok_or_else(|| init_err("initial values are infeasible"))?;
    let hz0 = HazardEval::new(&pv0);
    let mut subjects = Vec::with_capacity(plans.len());
    let mut ly = 0.0;
    if let Some(grids) = known {
        for g in grids {
            subjects.push(Subject { state: None, z: Vec::new(), eta: g.values.clone(), haz: 0.0 });
        }
    } else {
        let kernel = Kernel::new(model, &pv0, d).map_err(|e| init_err(&e.to_string()))?;
        for plan in plans {
            let st = kernel.state(plan).map_err(|e| init_err(&e.to_string()))?;
            let z = vec![0.0; plan.len() * p];
            let mut eta = vec![0.0; z.len()];
            st.eta_from_z(&z, &mut eta);
            ly += st.loglik_y;
            subjects.push(Subject { state: Some(st), z, eta, haz: 0.0 });
        }
    }
    let mut lh = 0.0;
    for (s, plan) in subjects.iter_mut().zip(plans) {
        s.haz = hz0.as_ref().map_or(0.0, |hz| hz.loglik(plan, &s.eta, p));
        lh += s.haz;
    }
    let mut cur = Current { u: u0, pv: pv0, prior: prior0, hz: hz0, subjects, ly, lh };
    if !cur.target().is_finite() {
        return Err(init_err("log posterior is not finite at the initial values"));
    }

    let burn = cfg.burn_in;
    let keep = cfg.iterations - burn;
    let mut out = ChainOutput {
        chain,
        iterations: Vec::with_capacity(keep),
        draws: Vec::with_capacity(keep),
        log_posterior: Vec::with_capacity(keep),
        acceptance: BTreeMap::new(),
        latent: Vec::new(),
    };
    let slice = !eng.known && cfg.latent == LatentMode::Sampled;
    let refresh_at = burn / 2;

    for it in 0..cfg.iterations {
        let in_burn = it < burn;
        for b in blocks.iter_mut() {
            let dim = b.idx.len();
            let xi = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let step = &b.chol * xi * b.log_step.exp();
            let mut u = cur.u.clone();
            for (k, &i) in b.idx.iter().enumerate() {
                u[i] += step[k];
            }
            let old = cur.target();
            let cand = eng.candidate(u, b.full && !eng.known, &cur);
            let log_alpha = cand
                .as_ref()
                .map(|c| c.prior + c.ly + c.lh - old)
                .filter(|v| !v.is_nan())
                .unwrap_or(f64::NEG_INFINITY);
            let accepted = rng.random::<f64>().ln() < log_alpha;
            if accepted {
                eng.accept(&mut cur, cand.unwrap());
            }
            if in_burn {
                b.n_prop += 1;
                let a = log_alpha.min(0.0).exp();
                b.log_step += (a - cfg.target_accept) * (b.n_prop as f64).powf(-0.6);
                b.log_step = b.log_step.clamp(-15.0, 5.0);
                if it >= burn / 4 {
                    b.observe(&cur.u);
                }
                if it + 1 == refresh_at || (it + 1 > refresh_at && (it + 1 - refresh_at) % 100 == 0) {
                    b.refresh_cov();
                }
            } else {
                b.post_prop += 1;
                b.post_acc += accepted as usize;
            }
        }
        if slice {
            for i in 0..cur.subjects.len() {
                if cur.hz.is_some() {
                    eng.slice_latent(&mut cur, i, &mut rng);
                } else {
                    eng.fresh_latent(&mut cur, i, &mut rng);
                }
            }
        }
        if !in_burn {
            out.iterations.push(it);
            out.draws.push(layout.to_constrained(&cur.u));
            out.log_posterior.push(eng.log_posterior(&cur));
            if cfg.store_latent && !eng.known && (cfg.iterations - 1 - it) % cfg.latent_thin == 0 {
                out.latent.push(LatentDraw {
                    iteration: it,
                    values: cur.subjects.iter().map(|s| s.eta.clone()).collect(),
                });
            }
        }
    }
    for b in &blocks {
        let rate = if b.post_prop > 0 { b.post_acc as f64 / b.post_prop as f64 } else { f64::NAN };
        out.acceptance.insert(b.name.clone(), rate);
    }
    Ok(out)
}
