//! Linear-Gaussian state-space kernels over a subject's latent grid.
//!
//! Given ψ, the longitudinal data turn the latent path into a Gaussian
//! chain. The forward pass gives the exact marginal likelihood of the
//! observations; the backward pass gives the affine map
//! η_j = b_j + J_j η_{j+1} + L_j z_j that draws the path from p(η | Y, ψ)
//! when z is standard normal.

use nalgebra::allocator::Allocator;
use nalgebra::{DefaultAllocator, Dim, U1};

use crate::data::SubjectData;
use crate::error::{Error, Result};
use crate::hazard::{g_logistic, nearest_index, MIN_GAP, TIME_TOL};
use crate::latent::{grid_times, hazard_cells};
use crate::linalg::{self, chol_jitter, ln_det_chol, LatentDim, Mat, Vect};
use crate::model::{Mechanism, ModelConfig};
use crate::ou::{self};
use crate::params::{BaselineParams, ParameterVector};
use crate::stats::{std_normal_logcdf, LN_2PI};
use crate::treatment::{drift_from_segments, drift_segments, drift_weights, tent_sum, DriftSegment};

#[derive(Debug, Clone)]
pub(crate) struct StepGeom {
    pub dt: f64,
    pub segs: Vec<DriftSegment>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct HazardPoint {
    pub idx: usize,
    /// Cell width for midpoints, 0 for event times.
    pub weight: f64,
    pub is_event: bool,
    pub ln_gap: f64,
    /// g(time since previous event), 0 before the first event.
    pub g: f64,
    pub tent_b: f64,
    pub post: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct SubjectPlan {
    pub times: Vec<f64>,
    /// Observed (item, value) pairs per grid index.
    pub obs: Vec<Vec<(usize, f64)>>,
    pub steps: Vec<StepGeom>,
    pub tent_a: Vec<f64>,
    pub hazard: Vec<HazardPoint>,
    pub covariates: Vec<f64>,
}

fn lookup(times: &[f64], t: f64) -> Result<usize> {
    let i = nearest_index(times, t).ok_or(Error::IncompletePath(t))?;
    if (times[i] - t).abs() <= TIME_TOL {
        Ok(i)
    } else {
        Err(Error::IncompletePath(t))
    }
}

impl SubjectPlan {
    pub fn build(model: &ModelConfig, subject: &SubjectData) -> Result<SubjectPlan> {
        SubjectPlan::on_times(model, subject, grid_times(model, subject))
    }

    /// Plan over caller-supplied grid times, which must contain every evaluation point.
    pub fn on_times(model: &ModelConfig, subject: &SubjectData, times: Vec<f64>) -> Result<SubjectPlan> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Ordering("latent grid must be strictly increasing".into()));
        }
        let n = times.len();
        let mut obs = vec![Vec::new(); n];
        for o in &subject.observations {
            let i = lookup(&times, o.time)?;
            for (item, y) in o.y.iter().enumerate() {
                if let Some(y) = y {
                    obs[i].push((item, *y));
                }
            }
        }
        let steps = (1..n)
            .map(|j| StepGeom {
                dt: times[j] - times[j - 1],
                segs: match model.mechanism {
                    Mechanism::Drift => drift_segments(&subject.treatments, model.delta_a, times[j - 1], times[j]),
                    Mechanism::Additive => Vec::new(),
                },
            })
            .collect();
        let tent_a = times.iter().map(|&t| tent_sum(&subject.treatments, model.delta_a, t)).collect();
        let mut hazard = Vec::new();
        if let Some(hc) = &model.hazard {
            let quit = hc.quit_time.unwrap_or(f64::INFINITY);
            let mk = |t: f64, start: f64, prev: Option<f64>, weight: f64, is_event: bool| -> Result<HazardPoint> {
                Ok(HazardPoint {
                    idx: lookup(&times, t)?,
                    weight,
                    is_event,
                    ln_gap: (t - start).max(MIN_GAP).ln(),
                    g: match (hc.event_history, prev) {
                        (Some(g), Some(p)) => g_logistic(g, t - p),
                        _ => 0.0,
                    },
                    tent_b: tent_sum(&subject.treatments, model.delta_b, t),
                    post: t >= quit,
                })
            };
            let starts: Vec<f64> =
                std::iter::once(subject.at_risk_from).chain(subject.events.iter().copied()).collect();
            let prev = |r: usize| if r == 0 { None } else { Some(starts[r]) };
            for (r, &te) in subject.events.iter().enumerate() {
                hazard.push(mk(te, starts[r], prev(r), 0.0, true)?);
            }
            for (lo, hi, r) in hazard_cells(subject, model.grid_width) {
                hazard.push(mk(0.5 * (lo + hi), starts[r], prev(r), hi - lo, false)?);
            }
        }
        Ok(SubjectPlan { times, obs, steps, tent_a, hazard, covariates: subject.covariates.clone() })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }
}

#[derive(Debug, Clone)]
enum BaseEval {
    Constant(f64),
    LogNormal { mu: [f64; 2], sd: [f64; 2] },
}

/// Hazard coefficients unpacked for fast evaluation.
#[derive(Debug, Clone)]
pub(crate) struct HazardEval {
    base: BaseEval,
    beta: Vec<f64>,
    beta3: f64,
    tt: [f64; 2],
    gamma: Vec<f64>,
}

impl HazardEval {
    pub fn new(pv: &ParameterVector) -> Option<HazardEval> {
        let h = pv.hazard.as_ref()?;
        let base = match h.baseline {
            BaselineParams::Constant { beta0 } => BaseEval::Constant(beta0),
            BaselineParams::LogNormalPrePost { mu0_pre, sigma0_pre, mu0_post, sigma0_post } => {
                BaseEval::LogNormal { mu: [mu0_pre, mu0_post], sd: [sigma0_pre, sigma0_post] }
            }
        };
        Some(HazardEval {
            base,
            beta: h.beta_latent.clone(),
            beta3: h.beta3.unwrap_or(0.0),
            tt: [h.tau_tilde_pre, h.tau_tilde_post.unwrap_or(h.tau_tilde_pre)],
            gamma: h.gamma.clone(),
        })
    }

    #[inline]
    pub fn log_h(&self, pt: &HazardPoint, eta: &[f64], gx: f64) -> f64 {
        let period = pt.post as usize;
        let base = match &self.base {
            BaseEval::Constant(b) => *b,
            BaseEval::LogNormal { mu, sd } => {
                let (m, s) = (mu[period], sd[period]);
                let z = (pt.ln_gap - m) / s;
                -0.5 * LN_2PI - s.ln() - 0.5 * z * z - pt.ln_gap - std_normal_logcdf(-z)
            }
        };
        let lin: f64 = self.beta.iter().zip(eta).map(|(b, e)| b * e).sum();
        base + lin + self.beta3 * pt.g + self.tt[period] * pt.tent_b + gx
    }

    pub fn gamma_x(&self, x: &[f64]) -> f64 {
        self.gamma.iter().zip(x).map(|(g, v)| g * v).sum()
    }

    /// Σ_events log h − Σ_cells h·w for one subject; `eta` is the row-major grid.
    pub fn loglik(&self, plan: &SubjectPlan, eta: &[f64], p: usize) -> f64 {
        let gx = self.gamma_x(&plan.covariates);
        let mut acc = 0.0;
        for pt in &plan.hazard {
            let lh = self.log_h(pt, &eta[pt.idx * p..(pt.idx + 1) * p], gx);
            if pt.is_event {
                acc += lh;
            } else {
                acc -= lh.exp() * pt.weight;
            }
        }
        acc
    }
}

/// ψ-dependent quantities shared by every subject.
pub(crate) struct Kernel<D: LatentDim>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    pub d: D,
    pub p: usize,
    mech: Mechanism,
    theta: Mat<D>,
    v: Mat<D>,
    tau: Vect<D>,
    w1: Vect<D>,
    w2: Vect<D>,
    lam: Vec<Vect<D>>,
    r: Vec<f64>,
    ln_r: Vec<f64>,
}

/// Filtered moments and the backward sampling map for one subject.
pub(crate) struct SubjectState<D: LatentDim>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    pub loglik_y: f64,
    pub logdet_a: f64,
    b: Vec<Vect<D>>,
    j: Vec<Mat<D>>,
    l: Vec<Mat<D>>,
}

impl<D: LatentDim> Kernel<D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    pub fn new(model: &ModelConfig, pv: &ParameterVector, d: D) -> Result<Kernel<D>> {
        let ou = pv.ou()?;
        if !ou::sigma_feasible(&ou) {
            return Err(Error::ConstraintViolation("implied volatility is not PSD".into()));
        }
        let p = model.p;
        let theta = linalg::to_static(ou.theta(), d);
        let v = linalg::to_static(ou.v(), d);
        let tau = linalg::vec_to_static(&pv.tau, d);
        let (w1, w2) = match model.mechanism {
            Mechanism::Drift => drift_weights(&theta, &tau, model.delta_a)?,
            Mechanism::Additive => (Vect::<D>::zeros_generic(d, U1), Vect::<D>::zeros_generic(d, U1)),
        };
        let lmat = pv.loadings_spec(model)?.matrix();
        let lam = (0..model.k)
            .map(|r| Vect::<D>::from_fn_generic(d, U1, |c, _| lmat[(r, c)]))
            .collect();
        let r: Vec<f64> = pv.noise().total();
        if r.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidParameter("non-positive measurement variance".into()));
        }
        let ln_r = r.iter().map(|x| x.ln()).collect();
        Ok(Kernel { d, p, mech: model.mechanism, theta, v, tau, w1, w2, lam, r, ln_r })
    }

    fn init_mean(&self, plan: &SubjectPlan) -> Vect<D> {
        match self.mech {
            Mechanism::Additive => &self.tau * plan.tent_a[0],
            Mechanism::Drift => Vect::<D>::zeros_generic(self.d, U1),
        }
    }

    /// (F, Q, c) for the step into grid index j ≥ 1.
    fn transition(&self, plan: &SubjectPlan, j: usize) -> (Mat<D>, Mat<D>, Vect<D>) {
        let step = &plan.steps[j - 1];
        let f = linalg::expm(&(&self.theta * -step.dt));
        let mut q = &self.v - &f * &self.v * f.transpose();
        linalg::symmetrize(&mut q);
        let c = match self.mech {
            Mechanism::Additive => &self.tau * plan.tent_a[j] - &f * (&self.tau * plan.tent_a[j - 1]),
            Mechanism::Drift => {
                let mut c = Vect::<D>::zeros_generic(self.d, U1);
                if !step.segs.is_empty() {
                    drift_from_segments(&self.theta, &self.w1, &self.w2, &step.segs, &mut c);
                }
                c
            }
        };
        (f, q, c)
    }

    /// Forward filter plus backward map.
    pub fn state(&self, plan: &SubjectPlan) -> Result<SubjectState<D>> {
        let n = plan.len();
        let d = self.d;
        let mut m: Vec<Vect<D>> = Vec::with_capacity(n);
        let mut pc: Vec<Mat<D>> = Vec::with_capacity(n);
        let mut m_pred: Vec<Vect<D>> = Vec::with_capacity(n);
        let mut p_pred: Vec<Mat<D>> = Vec::with_capacity(n);
        let mut fs: Vec<Mat<D>> = Vec::with_capacity(n);
        let mut loglik = 0.0;
        for j in 0..n {
            let (mp, pp) = if j == 0 {
                fs.push(Mat::<D>::identity_generic(d, d));
                (self.init_mean(plan), self.v.clone())
            } else {
                let (f, q, c) = self.transition(plan, j);
                let mp = &f * &m[j - 1] + c;
                let mut pp = &f * &pc[j - 1] * f.transpose() + q;
                linalg::symmetrize(&mut pp);
                fs.push(f);
                (mp, pp)
            };
            if plan.obs[j].is_empty() {
                m.push(mp.clone());
                pc.push(pp.clone());
            } else {
                let (mm, pm, ll) = self.update(&mp, &pp, &plan.obs[j])?;
                loglik += ll;
                m.push(mm);
                pc.push(pm);
            }
            m_pred.push(mp);
            p_pred.push(pp);
        }
        let mut b = vec![Vect::<D>::zeros_generic(d, U1); n];
        let mut jm = vec![Mat::<D>::zeros_generic(d, d); n];
        let mut l = vec![Mat::<D>::zeros_generic(d, d); n];
        let last = chol_jitter(&pc[n - 1])?;
        let mut logdet = 0.5 * ln_det_chol(&last);
        l[n - 1] = last.unpack();
        b[n - 1] = m[n - 1].clone();
        for j in (0..n - 1).rev() {
            let cp = chol_jitter(&p_pred[j + 1])?;
            let fp = &fs[j + 1] * &pc[j];
            let jt = cp.solve(&fp);
            let gain = jt.transpose();
            let mut cov = &pc[j] - &gain * &fp;
            linalg::symmetrize(&mut cov);
            let cc = chol_jitter(&cov)?;
            logdet += 0.5 * ln_det_chol(&cc);
            b[j] = &m[j] - &gain * &m_pred[j + 1];
            l[j] = cc.unpack();
            jm[j] = gain;
        }
        Ok(SubjectState { loglik_y: loglik, logdet_a: logdet, b, j: jm, l })
    }

    /// Information-form measurement update with diagonal noise.
    fn update(&self, mp: &Vect<D>, pp: &Mat<D>, items: &[(usize, f64)]) -> Result<(Vect<D>, Mat<D>, f64)> {
        let cp = chol_jitter(pp)?;
        let pinv = cp.inverse();
        let mut hmat = Mat::<D>::zeros_generic(self.d, self.d);
        let mut h = Vect::<D>::zeros_generic(self.d, U1);
        let (mut yry, mut logr) = (0.0, 0.0);
        for &(item, y) in items {
            let lam = &self.lam[item];
            let r = self.r[item];
            hmat.ger(1.0 / r, lam, lam, 1.0);
            h += lam * (y / r);
            yry += y * y / r;
            logr += self.ln_r[item];
        }
        let omega = &pinv + &hmat;
        let co = chol_jitter(&omega)?;
        let post = co.inverse();
        let g = &h - &hmat * mp;
        let quad = yry - 2.0 * mp.dot(&h) + mp.dot(&(&hmat * mp)) - g.dot(&(&post * &g));
        let ll = -0.5 * (items.len() as f64 * LN_2PI + logr + ln_det_chol(&cp) + ln_det_chol(&co) + quad);
        let mm = &post * (&pinv * mp + h);
        Ok((mm, post, ll))
    }

    /// log p(η | ψ) for a row-major path on the plan's grid.
    pub fn path_log_density(&self, plan: &SubjectPlan, eta: &[f64]) -> Result<f64> {
        let p = self.p;
        let at = |j: usize| Vect::<D>::from_fn_generic(self.d, U1, |i, _| eta[j * p + i]);
        let mut prev = at(0);
        let mut acc = gauss_logpdf(&prev, &self.init_mean(plan), &self.v)?;
        for j in 1..plan.len() {
            let (f, q, c) = self.transition(plan, j);
            let cur = at(j);
            let mean = &f * &prev + c;
            acc += gauss_logpdf(&cur, &mean, &q)?;
            prev = cur;
        }
        Ok(acc)
    }

    /// Σ_j Σ_items log N(y; λᵀη_j, σ²_u + σ²_ε).
    pub fn obs_loglik(&self, plan: &SubjectPlan, eta: &[f64]) -> f64 {
        let p = self.p;
        let mut acc = 0.0;
        for (j, items) in plan.obs.iter().enumerate() {
            let e = &eta[j * p..(j + 1) * p];
            for &(item, y) in items {
                let mean: f64 = self.lam[item].iter().zip(e).map(|(a, b)| a * b).sum();
                let dlt = y - mean;
                acc += -0.5 * (LN_2PI + self.ln_r[item] + dlt * dlt / self.r[item]);
            }
        }
        acc
    }
}

fn gauss_logpdf<D: Dim>(x: &Vect<D>, mean: &Vect<D>, cov: &Mat<D>) -> Result<f64>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    let c = chol_jitter(cov)?;
    let r = x - mean;
    let w = c.solve(&r);
    Ok(-0.5 * (r.len() as f64 * LN_2PI + ln_det_chol(&c) + r.dot(&w)))
}

impl<D: LatentDim> SubjectState<D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D>,
{
    pub fn len(&self) -> usize {
        self.b.len()
    }

    /// η = m + A z, written row-major into `out`.
    pub fn eta_from_z(&self, z: &[f64], out: &mut [f64]) {
        let n = self.len();
        let p = z.len() / n;
        let d = self.b[0].shape_generic().0;
        let zj = |j: usize| Vect::<D>::from_fn_generic(d, U1, |i, _| z[j * p + i]);
        let mut next = &self.b[n - 1] + &self.l[n - 1] * zj(n - 1);
        out[(n - 1) * p..n * p].copy_from_slice(next.as_slice());
        for j in (0..n - 1).rev() {
            let cur = &self.b[j] + &self.j[j] * &next + &self.l[j] * zj(j);
            out[j * p..(j + 1) * p].copy_from_slice(cur.as_slice());
            next = cur;
        }
    }

    /// Inverse of [`eta_from_z`].
    #[cfg(test)]
    pub fn z_from_eta(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        let p = eta.len() / n;
        let d = self.b[0].shape_generic().0;
        let ej = |j: usize| Vect::<D>::from_fn_generic(d, U1, |i, _| eta[j * p + i]);
        let mut z = vec![0.0; n * p];
        for j in 0..n {
            let mut r = ej(j) - &self.b[j];
            if j + 1 < n {
                r -= &self.j[j] * ej(j + 1);
            }
            let zz = self.l[j]
                .solve_lower_triangular(&r)
                .ok_or_else(|| Error::Numerical("singular backward factor".into()))?;
            z[j * p..(j + 1) * p].copy_from_slice(zz.as_slice());
        }
        Ok(z)
    }
}
