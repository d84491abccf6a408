//! Finite-difference integrator for the Barkley excitable-medium model and
//! the epsilon-perturbed variant used as the knowledge-based model (KBM).
//!
//! The system couples an activator U and inhibitor V:
//!   dU/dt = D lap(U) + (1/eps) U (1 - U) (U - (V + b)/a)
//!   dV/dt = U^3 - V
//! integrated with first-order explicit Euler and a 5-point Laplacian under
//! no-flux boundaries (clamped-index mirror).

use crate::error::{CoreError, Result};
use crate::field::{Field, FieldPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// PDE coefficients and discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarkleyParams {
    pub d: f64,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub dt: f64,
    pub dx: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for BarkleyParams {
    fn default() -> Self {
        BarkleyParams {
            d: 0.02,
            a: 0.75,
            b: 0.06,
            eps: 0.08,
            dt: 0.01,
            dx: 0.1,
            nx: 80,
            ny: 80,
        }
    }
}

impl BarkleyParams {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(CoreError::InvalidParam(format!("dt = {} must be > 0", self.dt)));
        }
        if self.dx <= 0.0 {
            return Err(CoreError::InvalidParam(format!("dx = {} must be > 0", self.dx)));
        }
        if self.eps <= 0.0 {
            return Err(CoreError::InvalidParam(format!("eps = {} must be > 0", self.eps)));
        }
        if self.a == 0.0 {
            return Err(CoreError::InvalidParam("a must be nonzero".into()));
        }
        if self.nx < 3 || self.ny < 3 {
            return Err(CoreError::GridTooSmall {
                nx: self.nx,
                ny: self.ny,
            });
        }
        Ok(())
    }
}

/// Multiplicative perturbation applied to eps; e = -1 is the degenerate case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelError(f64);

impl ModelError {
    pub fn new(e: f64) -> Result<Self> {
        if e == -1.0 {
            return Err(CoreError::DegenerateModelError);
        }
        Ok(ModelError(e))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// 5-point discrete Laplacian with no-flux boundaries via clamped indices.
pub fn laplacian_no_flux(field: &Field, dx: f64) -> Result<Field> {
    if field.nx() < 3 || field.ny() < 3 {
        return Err(CoreError::GridTooSmall {
            nx: field.nx(),
            ny: field.ny(),
        });
    }
    if dx <= 0.0 {
        return Err(CoreError::InvalidParam(format!("dx = {dx} must be > 0")));
    }
    let inv_dx2 = 1.0 / (dx * dx);
    let out = Field::from_fn(field.nx(), field.ny(), |i, j| {
        let (ii, jj) = (i as isize, j as isize);
        let c = field.get(i, j);
        (field.get_clamped(ii - 1, jj)
            + field.get_clamped(ii + 1, jj)
            + field.get_clamped(ii, jj - 1)
            + field.get_clamped(ii, jj + 1)
            - 4.0 * c)
            * inv_dx2
    });
    Ok(out)
}

fn step_inner(state: &FieldPair, p: &BarkleyParams, with_reaction: bool) -> Result<FieldPair> {
    if state.nx() != p.nx || state.ny() != p.ny {
        return Err(CoreError::DimMismatch {
            expected: p.nx * p.ny,
            got: state.nx() * state.ny(),
            context: "state vs params",
        });
    }
    let lap_u = laplacian_no_flux(&state.u, p.dx)?;
    let inv_eps = 1.0 / p.eps;
    let inv_a = 1.0 / p.a;
    let mut finite = true;
    let u_next = Field::from_fn(p.nx, p.ny, |i, j| {
        let u = state.u.get(i, j);
        let reaction = if with_reaction {
            let thresh = (state.v.get(i, j) + p.b) * inv_a;
            inv_eps * u * (1.0 - u) * (u - thresh)
        } else {
            0.0
        };
        let next = u + p.dt * (p.d * lap_u.get(i, j) + reaction);
        finite &= next.is_finite();
        next
    });
    let v_next = Field::from_fn(p.nx, p.ny, |i, j| {
        let u = state.u.get(i, j);
        let v = state.v.get(i, j);
        let next = if with_reaction { v + p.dt * (u * u * u - v) } else { v };
        finite &= next.is_finite();
        next
    });
    if !finite {
        return Err(CoreError::BlowUp { step: 0 });
    }
    Ok(FieldPair {
        u: u_next,
        v: v_next,
    })
}

/// One explicit Euler update of the full model.
pub fn barkley_step(state: &FieldPair, p: &BarkleyParams) -> Result<FieldPair> {
    step_inner(state, p, true)
}

/// Diffusion-only update (reaction terms forced to zero). Test hook for the
/// mass-conservation invariant of the no-flux stencil.
pub fn barkley_step_diffusion_only(state: &FieldPair, p: &BarkleyParams) -> Result<FieldPair> {
    step_inner(state, p, false)
}

/// Integrates `n_steps` updates; returns `n_steps + 1` states including `init`.
pub fn simulate(p: &BarkleyParams, init: &FieldPair, n_steps: usize) -> Result<Vec<FieldPair>> {
    p.validate()?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(init.clone());
    for step in 0..n_steps {
        let next = barkley_step(out.last().unwrap(), p).map_err(|e| match e {
            CoreError::BlowUp { .. } => CoreError::BlowUp { step },
            other => other,
        })?;
        out.push(next);
    }
    Ok(out)
}

/// Replaces eps by eps * (1 + e); the resulting params define the KBM
/// one-step predictor K(u) = barkley_step(u) under the perturbed coefficients.
pub fn make_epsilon_model(p: &BarkleyParams, err: ModelError) -> BarkleyParams {
    let mut q = *p;
    q.eps = p.eps * (1.0 + err.value());
    q
}

/// Crossed half-plane blocks plus small seeded uniform noise; reliably develops
/// spiral-wave chaos after the transient.
pub fn default_initial_condition(nx: usize, ny: usize, seed: u64) -> Result<FieldPair> {
    if nx < 3 || ny < 3 {
        return Err(CoreError::GridTooSmall { nx, ny });
    }
    let a = BarkleyParams::default().a;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Noise points into [0, 1]: the cubic reaction term approaches the
    // excited state u = 1 monotonically from below, but values above 1 grow
    // without bound once the recovery threshold (v + b)/a exceeds u, so the
    // excited block must not start above 1.
    let u = Field::from_fn(nx, ny, |i, _| {
        let noise = rng.gen::<f64>() * 0.01;
        if i < nx / 2 {
            1.0 - noise
        } else {
            noise
        }
    });
    let v = Field::from_fn(nx, ny, |_, j| {
        let base = if j < ny / 2 { a / 2.0 } else { 0.0 };
        base + rng.gen::<f64>() * 0.01
    });
    FieldPair::new(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_pair(nx: usize, ny: usize, u: f64, v: f64) -> FieldPair {
        FieldPair {
            u: Field::from_fn(nx, ny, |_, _| u),
            v: Field::from_fn(nx, ny, |_, _| v),
        }
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = Field::from_fn(6, 5, |_, _| 3.7);
        let lap = laplacian_no_flux(&f, 0.1).unwrap();
        assert!(lap.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_unit_spike() {
        let mut f = Field::zeros(5, 5);
        f.set(2, 2, 1.0);
        let lap = laplacian_no_flux(&f, 1.0).unwrap();
        assert_eq!(lap.get(2, 2), -4.0);
        assert_eq!(lap.get(1, 2), 1.0);
        assert_eq!(lap.get(3, 2), 1.0);
        assert_eq!(lap.get(2, 1), 1.0);
        assert_eq!(lap.get(2, 3), 1.0);
        assert_eq!(lap.get(0, 0), 0.0);
        assert_eq!(lap.get(1, 1), 0.0);
    }

    #[test]
    fn laplacian_linear_ramp_matches_hand_oracle() {
        // f(i, j) = i on a 5x5 grid, dx = 1. Hand stencil evaluation with the
        // clamp rule: interior rows are zero, row 0 gets +1, row 4 gets -1.
        let f = Field::from_fn(5, 5, |i, _| i as f64);
        let lap = laplacian_no_flux(&f, 1.0).unwrap();
        for j in 0..5 {
            assert_eq!(lap.get(0, j), 1.0);
            assert_eq!(lap.get(1, j), 0.0);
            assert_eq!(lap.get(2, j), 0.0);
            assert_eq!(lap.get(3, j), 0.0);
            assert_eq!(lap.get(4, j), -1.0);
        }
    }

    #[test]
    fn laplacian_rejects_tiny_grid() {
        let f = Field::zeros(2, 5);
        assert!(matches!(
            laplacian_no_flux(&f, 1.0),
            Err(CoreError::GridTooSmall { .. })
        ));
    }

    #[test]
    fn fixed_points_preserved() {
        let p = BarkleyParams::default();
        for (u, v) in [(0.0, 0.0), (1.0, 1.0)] {
            let s = const_pair(p.nx, p.ny, u, v);
            let next = barkley_step(&s, &p).unwrap();
            assert_eq!(next, s);
        }
    }

    #[test]
    fn homogeneous_half_state_hand_value() {
        let p = BarkleyParams::default();
        let s = const_pair(p.nx, p.ny, 0.5, 0.0);
        let next = barkley_step(&s, &p).unwrap();
        assert!((next.u.get(40, 40) - 0.513125).abs() < 1e-15);
        assert!((next.v.get(40, 40) - 0.00125).abs() < 1e-15);
    }

    #[test]
    fn simulate_zero_fixed_point() {
        let p = BarkleyParams {
            nx: 8,
            ny: 8,
            ..Default::default()
        };
        let traj = simulate(&p, &FieldPair::zeros(8, 8), 100).unwrap();
        assert_eq!(traj.len(), 101);
        assert!(traj
            .iter()
            .all(|s| s.u.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn simulate_single_step_matches_step() {
        let p = BarkleyParams {
            nx: 6,
            ny: 6,
            ..Default::default()
        };
        let init = default_initial_condition(6, 6, 7).unwrap();
        let traj = simulate(&p, &init, 1).unwrap();
        assert_eq!(traj.len(), 2);
        assert_eq!(traj[1], barkley_step(&init, &p).unwrap());
    }

    #[test]
    fn epsilon_model_arithmetic() {
        let p = BarkleyParams::default();
        let same = make_epsilon_model(&p, ModelError::new(0.0).unwrap());
        assert_eq!(same, p);
        let q = make_epsilon_model(&p, ModelError::new(0.1).unwrap());
        assert!((q.eps - 0.088).abs() < 1e-15);
        let r = make_epsilon_model(&p, ModelError::new(100.0).unwrap());
        assert!((r.eps - 8.08).abs() < 1e-12);
        assert_eq!(q.a, p.a);
        assert_eq!(q.dt, p.dt);
    }

    #[test]
    fn model_error_rejects_minus_one() {
        assert!(ModelError::new(-1.0).is_err());
        assert!(ModelError::new(-0.999).is_ok());
    }

    #[test]
    fn initial_condition_deterministic_and_bounded() {
        let a = default_initial_condition(4, 4, 42).unwrap();
        let b = default_initial_condition(4, 4, 42).unwrap();
        assert_eq!(a, b);
        let c = default_initial_condition(4, 4, 43).unwrap();
        assert_ne!(a, c);
        for &x in a.u.as_slice().iter().chain(a.v.as_slice()) {
            assert!((0.0..=1.01).contains(&x));
        }
    }

    #[test]
    fn pure_diffusion_conserves_mass() {
        let p = BarkleyParams {
            nx: 12,
            ny: 9,
            ..Default::default()
        };
        let mut s = default_initial_condition(12, 9, 3).unwrap();
        let total0 = s.u.sum();
        for _ in 0..200 {
            s = barkley_step_diffusion_only(&s, &p).unwrap();
        }
        assert!((s.u.sum() - total0).abs() <= 1e-12 * total0.abs());
    }

    #[test]
    fn simulate_deterministic() {
        let p = BarkleyParams {
            nx: 10,
            ny: 10,
            ..Default::default()
        };
        let init = default_initial_condition(10, 10, 5).unwrap();
        let a = simulate(&p, &init, 50).unwrap();
        let b = simulate(&p, &init, 50).unwrap();
        assert_eq!(a, b);
    }
}
