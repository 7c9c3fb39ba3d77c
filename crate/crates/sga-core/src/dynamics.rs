//! Latent dynamics: learned vector fields integrated forward from the last
//! observed relationship representation. One annotated frame spans one unit
//! of latent time; the solver takes `round(1/h)` substeps per unit.
//!
//! ODE side: explicit Euler or 4th-order Adams-Bashforth (RK4 bootstrap).
//! SDE side: Euler-Maruyama under the Ito reading (left-endpoint drift and
//! diffusion) or the reversible Heun scheme under Stratonovich, whose reverse
//! pass retraces the forward trajectory exactly up to rounding.
//!
//! Every substep is recorded on the tape, so backprop differentiates through
//! the unrolled solver rather than an adjoint system.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{SgaError, SgaResult};
use crate::model::{add_linear, linear, Ctx, LinearIds, ParamRegistry};
use crate::scalar::{s, Scalar};
use crate::tape::Var;

/// Adams-Bashforth order-4 weights, newest sample first.
pub const AB4_COEFFS: [f64; 4] = [55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0];

/// One explicit AB4 update increment from the last four field samples,
/// oldest first. Shared by the tape solver and the exactness oracle so both
/// agree on the weights.
pub fn ab4_combine(h: f64, hist: [f64; 4]) -> f64 {
    h * (AB4_COEFFS[0] * hist[3]
        + AB4_COEFFS[1] * hist[2]
        + AB4_COEFFS[2] * hist[1]
        + AB4_COEFFS[3] * hist[0])
}

/// Three-layer field MLP (two tanh hidden layers, linear output).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FieldMlpIds {
    pub l1: LinearIds,
    pub l2: LinearIds,
    pub l3: LinearIds,
}

pub fn add_field_mlp<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    dim: usize,
    hidden: usize,
) -> FieldMlpIds {
    FieldMlpIds {
        l1: add_linear(reg, rng, &format!("{name}.l1"), dim, hidden),
        l2: add_linear(reg, rng, &format!("{name}.l2"), hidden, hidden),
        l3: add_linear(reg, rng, &format!("{name}.l3"), hidden, dim),
    }
}

pub fn field_mlp<S: Scalar>(ctx: &mut Ctx<S>, ids: FieldMlpIds, z: Var) -> SgaResult<Var> {
    let h = linear(ctx, ids.l1, z)?;
    let h = ctx.tape.tanh(h)?;
    let h = linear(ctx, ids.l2, h)?;
    let h = ctx.tape.tanh(h)?;
    linear(ctx, ids.l3, h)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VectorFieldIds {
    pub f: FieldMlpIds,
    pub dim: usize,
}

pub fn add_vector_field<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    dim: usize,
    hidden: usize,
) -> VectorFieldIds {
    VectorFieldIds { f: add_field_mlp(reg, rng, name, dim, hidden), dim }
}

/// Drift plus diagonal diffusion, both field MLPs over R^dim.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SdeFieldIds {
    pub drift: FieldMlpIds,
    pub diffusion: FieldMlpIds,
    pub dim: usize,
}

/// `zero_diffusion_out` zeroes the diffusion MLP's output layer so training
/// starts from deterministic dynamics; gradients still reach the layer
/// through the noise coupling, so it does not stay zero.
pub fn add_sde_field<S: Scalar>(
    reg: &mut ParamRegistry<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    dim: usize,
    hidden: usize,
    zero_diffusion_out: bool,
) -> SdeFieldIds {
    let drift = add_field_mlp(reg, rng, &format!("{name}.drift"), dim, hidden);
    let diffusion = add_field_mlp(reg, rng, &format!("{name}.diffusion"), dim, hidden);
    if zero_diffusion_out {
        let w = reg.get_mut(diffusion.l3.w);
        for x in w.data_mut() {
            *x = S::zero();
        }
    }
    SdeFieldIds { drift, diffusion, dim }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Euler,
    AdamsBashforth4,
    EulerMaruyamaIto,
    ReversibleHeunStratonovich,
}

impl SolverMethod {
    pub fn is_stochastic(self) -> bool {
        matches!(self, SolverMethod::EulerMaruyamaIto | SolverMethod::ReversibleHeunStratonovich)
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Euler => "euler",
            SolverMethod::AdamsBashforth4 => "adams_bashforth4",
            SolverMethod::EulerMaruyamaIto => "euler_maruyama_ito",
            SolverMethod::ReversibleHeunStratonovich => "reversible_heun_stratonovich",
        }
    }

    /// Accepts hyphen and underscore spellings plus common short forms.
    pub fn from_name(name: &str) -> SgaResult<Self> {
        match name.replace('-', "_").as_str() {
            "euler" => Ok(SolverMethod::Euler),
            "ab4" | "adams_bashforth4" => Ok(SolverMethod::AdamsBashforth4),
            "em" | "euler_maruyama" | "euler_maruyama_ito" => Ok(SolverMethod::EulerMaruyamaIto),
            "reversible_heun" | "reversible_heun_stratonovich" => {
                Ok(SolverMethod::ReversibleHeunStratonovich)
            }
            _ => Err(SgaError::Config(format!("unknown solver method {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub method: SolverMethod,
    pub h: f64,
}

impl Default for SolverSpec {
    /// Euler at 25 substeps per frame, the reference step size.
    fn default() -> Self {
        SolverSpec { method: SolverMethod::Euler, h: 0.04 }
    }
}

impl SolverSpec {
    /// Substeps per unit frame interval. `h` must divide the interval.
    pub fn steps_per_frame(&self) -> SgaResult<usize> {
        if !(self.h > 0.0) {
            return Err(SgaError::Config(format!("step size must be positive, got {}", self.h)));
        }
        let k = (1.0 / self.h).round();
        if k < 1.0 || (k * self.h - 1.0).abs() > 1e-9 {
            return Err(SgaError::Config(format!(
                "step size {} does not divide the unit frame interval",
                self.h
            )));
        }
        Ok(k as usize)
    }

    pub fn validate_ode(&self) -> SgaResult<()> {
        let k = self.steps_per_frame()?;
        match self.method {
            SolverMethod::Euler => Ok(()),
            SolverMethod::AdamsBashforth4 => {
                if k < 2 {
                    Err(SgaError::Config(
                        "adams_bashforth4 needs h < 1 frame to fit its bootstrap".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            m => Err(SgaError::Config(format!("{m:?} is a stochastic method, field is an ODE"))),
        }
    }

    pub fn validate_sde(&self) -> SgaResult<()> {
        self.steps_per_frame()?;
        if self.method.is_stochastic() {
            Ok(())
        } else {
            Err(SgaError::Config(format!(
                "{:?} is a deterministic method, field is an SDE",
                self.method
            )))
        }
    }
}

/// Lazily generated Wiener increments, N(0, h) per step and dimension.
/// Draws are sequential in f64 from a seeded stream, so any access pattern
/// sees the same path for the same seed.
#[derive(Debug, Clone)]
pub struct BrownianPath {
    pub seed: u64,
    pub h: f64,
    pub dim: usize,
    rng: ChaCha8Rng,
    cache: Vec<Vec<f64>>,
}

impl BrownianPath {
    pub fn new(seed: u64, h: f64, dim: usize) -> SgaResult<Self> {
        if !(h > 0.0) {
            return Err(SgaError::Config(format!("Brownian step must be positive, got {h}")));
        }
        if dim == 0 {
            return Err(SgaError::Config("Brownian path needs at least one dimension".into()));
        }
        Ok(BrownianPath { seed, h, dim, rng: ChaCha8Rng::seed_from_u64(seed), cache: Vec::new() })
    }

    /// Increment vector for `step`, generated on first touch.
    pub fn increment(&mut self, step: usize) -> &[f64] {
        let sd = self.h.sqrt();
        while self.cache.len() <= step {
            let draw: Vec<f64> = (0..self.dim)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng) * sd)
                .collect();
            self.cache.push(draw);
        }
        &self.cache[step]
    }
}

fn increment_var<S: Scalar>(
    ctx: &mut Ctx<S>,
    path: &mut BrownianPath,
    step: usize,
    dim: usize,
    negate: bool,
) -> SgaResult<Var> {
    if path.dim != dim {
        return Err(SgaError::contract(
            "sde_solve",
            format!("diffusion dim {dim} vs Brownian path dim {}", path.dim),
        ));
    }
    let sign = if negate { -1.0 } else { 1.0 };
    let data: Vec<S> = path.increment(step).iter().map(|&x| s(sign * x)).collect();
    ctx.tape.constant(vec![1, dim], data)
}

fn check_z0<S: Scalar>(ctx: &Ctx<S>, z0: Var, op: &'static str) -> SgaResult<usize> {
    let shape = ctx.tape.shape(z0).to_vec();
    if shape.len() != 2 || shape[0] != 1 {
        return Err(SgaError::contract(op, format!("z0 must be a [1, d] row, got {shape:?}")));
    }
    Ok(shape[1])
}

/// One classical RK4 step of size h.
fn rk4_step<S: Scalar, F>(ctx: &mut Ctx<S>, f: &mut F, z: Var, h: f64) -> SgaResult<Var>
where
    F: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
{
    let k1 = f(ctx, z)?;
    let half = ctx.tape.scale(k1, s::<S>(h / 2.0))?;
    let z2 = ctx.tape.add(z, half)?;
    let k2 = f(ctx, z2)?;
    let half = ctx.tape.scale(k2, s::<S>(h / 2.0))?;
    let z3 = ctx.tape.add(z, half)?;
    let k3 = f(ctx, z3)?;
    let full = ctx.tape.scale(k3, s::<S>(h))?;
    let z4 = ctx.tape.add(z, full)?;
    let k4 = f(ctx, z4)?;
    let k2_2 = ctx.tape.scale(k2, s::<S>(2.0))?;
    let k3_2 = ctx.tape.scale(k3, s::<S>(2.0))?;
    let acc = ctx.tape.add(k1, k2_2)?;
    let acc = ctx.tape.add(acc, k3_2)?;
    let acc = ctx.tape.add(acc, k4)?;
    let inc = ctx.tape.scale(acc, s::<S>(h / 6.0))?;
    ctx.tape.add(z, inc)
}

/// Integrates `dz = f(z) dt` for `horizon` unit frames, sampling at every
/// frame boundary. The field closure lets tests supply analytic fields.
pub fn ode_solve_with<S: Scalar, F>(
    ctx: &mut Ctx<S>,
    mut f: F,
    z0: Var,
    horizon: usize,
    spec: &SolverSpec,
) -> SgaResult<Vec<Var>>
where
    F: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
{
    spec.validate_ode()?;
    if horizon == 0 {
        return Err(SgaError::contract("ode_solve", "horizon must be at least 1"));
    }
    check_z0(ctx, z0, "ode_solve")?;
    let k = spec.steps_per_frame()?;
    let h = spec.h;
    let mut z = z0;
    let mut out = Vec::with_capacity(horizon);
    match spec.method {
        SolverMethod::Euler => {
            for _ in 0..horizon {
                for _ in 0..k {
                    let fz = f(ctx, z)?;
                    let inc = ctx.tape.scale(fz, s::<S>(h))?;
                    z = ctx.tape.add(z, inc)?;
                }
                out.push(z);
            }
        }
        SolverMethod::AdamsBashforth4 => {
            // Oldest-first history of field samples at the last 4 grid points.
            let mut hist: Vec<Var> = vec![f(ctx, z)?];
            let mut substep = 0usize;
            for _ in 0..horizon {
                for _ in 0..k {
                    if substep < 3 {
                        z = rk4_step(ctx, &mut f, z, h)?;
                        hist.push(f(ctx, z)?);
                    } else {
                        let mut inc: Option<Var> = None;
                        for (j, &c) in AB4_COEFFS.iter().enumerate() {
                            let fj = hist[hist.len() - 1 - j];
                            let term = ctx.tape.scale(fj, s::<S>(h * c))?;
                            inc = Some(match inc {
                                None => term,
                                Some(acc) => ctx.tape.add(acc, term)?,
                            });
                        }
                        z = ctx.tape.add(z, inc.expect("ab4 weights"))?;
                        hist.push(f(ctx, z)?);
                        hist.remove(0);
                    }
                    substep += 1;
                }
                out.push(z);
            }
        }
        _ => unreachable!("validated above"),
    }
    Ok(out)
}

pub fn ode_solve<S: Scalar>(
    ctx: &mut Ctx<S>,
    field: &VectorFieldIds,
    z0: Var,
    horizon: usize,
    spec: &SolverSpec,
) -> SgaResult<Vec<Var>> {
    let ids = field.f;
    ode_solve_with(ctx, move |c, z| field_mlp(c, ids, z), z0, horizon, spec)
}

/// Integrates `dz = f(z) dt + g(z) dW` with diagonal diffusion, sampling at
/// frame boundaries. Euler-Maruyama reads the equation as Ito (left-endpoint
/// evaluation); reversible Heun reads it as Stratonovich.
pub fn sde_solve_with<S: Scalar, F, G>(
    ctx: &mut Ctx<S>,
    mut f: F,
    mut g: G,
    z0: Var,
    horizon: usize,
    spec: &SolverSpec,
    path: &mut BrownianPath,
) -> SgaResult<Vec<Var>>
where
    F: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
    G: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
{
    spec.validate_sde()?;
    if horizon == 0 {
        return Err(SgaError::contract("sde_solve", "horizon must be at least 1"));
    }
    if (path.h - spec.h).abs() > 1e-12 {
        return Err(SgaError::contract(
            "sde_solve",
            format!("path step {} != solver step {}", path.h, spec.h),
        ));
    }
    let dim = check_z0(ctx, z0, "sde_solve")?;
    let k = spec.steps_per_frame()?;
    let h = spec.h;
    let mut out = Vec::with_capacity(horizon);
    match spec.method {
        SolverMethod::EulerMaruyamaIto => {
            let mut z = z0;
            let mut step = 0usize;
            for _ in 0..horizon {
                for _ in 0..k {
                    let dw = increment_var(ctx, path, step, dim, false)?;
                    let fz = f(ctx, z)?;
                    let drift = ctx.tape.scale(fz, s::<S>(h))?;
                    let gz = g(ctx, z)?;
                    let noise = ctx.tape.mul(gz, dw)?;
                    let zd = ctx.tape.add(z, drift)?;
                    z = ctx.tape.add(zd, noise)?;
                    step += 1;
                }
                out.push(z);
            }
        }
        SolverMethod::ReversibleHeunStratonovich => {
            let mut state = ReversibleHeun::start(ctx, &mut f, &mut g, z0)?;
            let mut step = 0usize;
            for _ in 0..horizon {
                for _ in 0..k {
                    let dw = increment_var(ctx, path, step, dim, false)?;
                    state = state.step(ctx, &mut f, &mut g, h, dw)?;
                    step += 1;
                }
                out.push(state.z());
            }
        }
        _ => unreachable!("validated above"),
    }
    Ok(out)
}

pub fn sde_solve<S: Scalar>(
    ctx: &mut Ctx<S>,
    field: &SdeFieldIds,
    z0: Var,
    horizon: usize,
    spec: &SolverSpec,
    path: &mut BrownianPath,
) -> SgaResult<Vec<Var>> {
    let drift = field.drift;
    let diff = field.diffusion;
    sde_solve_with(
        ctx,
        move |c, z| field_mlp(c, drift, z),
        move |c, z| field_mlp(c, diff, z),
        z0,
        horizon,
        spec,
        path,
    )
}

/// Reversible Heun pair state (z_n, zhat_n) with the field values at zhat_n
/// cached so every step costs one drift and one diffusion evaluation.
/// Stepping with (-h, -dW) from the successor state restores this one, which
/// is what the reverse pass and its tests rely on.
pub struct ReversibleHeun {
    z: Var,
    zhat: Var,
    f_zhat: Var,
    g_zhat: Var,
}

impl ReversibleHeun {
    pub fn start<S: Scalar, F, G>(
        ctx: &mut Ctx<S>,
        f: &mut F,
        g: &mut G,
        z0: Var,
    ) -> SgaResult<Self>
    where
        F: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
        G: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
    {
        let f0 = f(ctx, z0)?;
        let g0 = g(ctx, z0)?;
        Ok(ReversibleHeun { z: z0, zhat: z0, f_zhat: f0, g_zhat: g0 })
    }

    pub fn z(&self) -> Var {
        self.z
    }

    /// zhat' = 2 z - zhat + f(zhat) h + g(zhat) dW
    /// z'    = z + (f(zhat) + f(zhat')) h/2 + (g(zhat) + g(zhat')) dW/2
    ///
    /// Running the same update with (-h, -dW) from (z', zhat') restores
    /// (z, zhat) exactly: zhat cancels algebraically and the averaged terms
    /// are symmetric in (zhat, zhat').
    pub fn step<S: Scalar, F, G>(
        self,
        ctx: &mut Ctx<S>,
        f: &mut F,
        g: &mut G,
        h: f64,
        dw: Var,
    ) -> SgaResult<Self>
    where
        F: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
        G: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
    {
        let two_z = ctx.tape.scale(self.z, s::<S>(2.0))?;
        let base = ctx.tape.sub(two_z, self.zhat)?;
        let drift = ctx.tape.scale(self.f_zhat, s::<S>(h))?;
        let noise = ctx.tape.mul(self.g_zhat, dw)?;
        let with_drift = ctx.tape.add(base, drift)?;
        let zhat_next = ctx.tape.add(with_drift, noise)?;

        let f_next = f(ctx, zhat_next)?;
        let g_next = g(ctx, zhat_next)?;
        let f_sum = ctx.tape.add(self.f_zhat, f_next)?;
        let g_sum = ctx.tape.add(self.g_zhat, g_next)?;
        let drift_avg = ctx.tape.scale(f_sum, s::<S>(h / 2.0))?;
        let g_dw = ctx.tape.mul(g_sum, dw)?;
        let noise_avg = ctx.tape.scale(g_dw, s::<S>(0.5))?;
        let with_drift = ctx.tape.add(self.z, drift_avg)?;
        let z_next = ctx.tape.add(with_drift, noise_avg)?;

        Ok(ReversibleHeun { z: z_next, zhat: zhat_next, f_zhat: f_next, g_zhat: g_next })
    }
}

/// Integrates forward for `horizon` frames, then back along the same path
/// with negated step and increments. Returns the reconstructed z0.
pub fn reverse_heun_roundtrip<S: Scalar, F, G>(
    ctx: &mut Ctx<S>,
    mut f: F,
    mut g: G,
    z0: Var,
    horizon: usize,
    spec: &SolverSpec,
    path: &mut BrownianPath,
) -> SgaResult<Var>
where
    F: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
    G: FnMut(&mut Ctx<S>, Var) -> SgaResult<Var>,
{
    if spec.method != SolverMethod::ReversibleHeunStratonovich {
        return Err(SgaError::Config("roundtrip is defined for reversible Heun only".into()));
    }
    spec.validate_sde()?;
    let dim = check_z0(ctx, z0, "reverse_heun_roundtrip")?;
    let k = spec.steps_per_frame()?;
    let total = k * horizon;
    let h = spec.h;

    let mut state = ReversibleHeun::start(ctx, &mut f, &mut g, z0)?;
    for step in 0..total {
        let dw = increment_var(ctx, path, step, dim, false)?;
        state = state.step(ctx, &mut f, &mut g, h, dw)?;
    }
    for step in (0..total).rev() {
        let dw = increment_var(ctx, path, step, dim, true)?;
        state = state.step(ctx, &mut f, &mut g, -h, dw)?;
    }
    Ok(state.z())
}

/// Latent dynamics of one model: a deterministic or stochastic field.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum DynamicsIds {
    Ode(VectorFieldIds),
    Sde(SdeFieldIds),
}

impl DynamicsIds {
    pub fn dim(&self) -> usize {
        match self {
            DynamicsIds::Ode(f) => f.dim,
            DynamicsIds::Sde(f) => f.dim,
        }
    }

    pub fn validate_spec(&self, spec: &SolverSpec) -> SgaResult<()> {
        match self {
            DynamicsIds::Ode(_) => spec.validate_ode(),
            DynamicsIds::Sde(_) => spec.validate_sde(),
        }
    }
}

/// splitmix64 mix; derives per-pair (and per-context) Brownian seeds.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut x = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Rolls each pair's last observed representation forward `horizon` frames.
/// Pairs integrate independently; pair `i` draws noise from seed
/// `mix_seed(seed, i)` so trajectories never couple.
pub fn anticipate_latent<S: Scalar>(
    ctx: &mut Ctx<S>,
    dynamics: &DynamicsIds,
    z0s: &[Var],
    horizon: usize,
    spec: &SolverSpec,
    seed: u64,
) -> SgaResult<Vec<Vec<Var>>> {
    let mut out = Vec::with_capacity(z0s.len());
    for (i, &z0) in z0s.iter().enumerate() {
        let traj = match dynamics {
            DynamicsIds::Ode(field) => ode_solve(ctx, field, z0, horizon, spec)?,
            DynamicsIds::Sde(field) => {
                let mut path = BrownianPath::new(mix_seed(seed, i as u64), spec.h, field.dim)?;
                sde_solve(ctx, field, z0, horizon, spec, &mut path)?
            }
        };
        out.push(traj);
    }
    Ok(out)
}
