//! The cutting-plane main loop.
//!
//! Each round bounds the current region, searches for a better local
//! minimizer from the relaxation point, and, while the gap is open, removes
//! a slab around the local minimizer with a valid cut whose removed-region
//! bound is recorded separately.

use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bound::{dnn_lower_bound, project_to_region, BoundResult, BoundSettings};
use crate::conic::WarmStart;
use crate::cut::{beta_policy, dnn_cut, Cut};
use crate::instance::ReducedInstance;
use crate::localsearch::{finite_gmc, KktPoint, Tolerances};
use crate::lp;

#[derive(Debug, Clone, Copy)]
pub struct DriverSettings {
    pub eps: f64,
    pub eta: f64,
    pub bound: BoundSettings,
    pub search: Tolerances,
    pub time_limit: Duration,
    pub max_cuts: usize,
    /// Iteration cap of the quick relaxation solve that seeds each local search.
    pub probe_iters: usize,
}

impl Default for DriverSettings {
    fn default() -> Self {
        DriverSettings {
            eps: 1e-4,
            eta: 9e-5,
            bound: BoundSettings::default(),
            search: Tolerances::default(),
            time_limit: Duration::from_secs(3600),
            max_cuts: 200,
            probe_iters: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    TimeLimit,
    MaxCuts,
    CutFailed,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Solved => "solved",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::MaxCuts => "max_cuts",
            SolveStatus::CutFailed => "cut_failed",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row of the per-iteration trace. Times are in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub upper_bound: f64,
    pub region_bound: f64,
    pub removed_bound: f64,
    pub gap: f64,
    pub cut_time: f64,
    pub bound_time: f64,
    pub search_time: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    /// Reduced instance with every cut appended.
    pub region: ReducedInstance,
    pub upper_bound: f64,
    pub best_x: Option<DVector<f64>>,
    pub region_bound: f64,
    pub removed_bound: f64,
    pub cuts: Vec<Cut>,
    pub iter: usize,
    pub started: Instant,
}

impl SolverState {
    pub fn lower_bound(&self) -> f64 {
        self.region_bound.min(self.removed_bound)
    }
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub name: String,
    pub n: usize,
    /// Rows of the reduced system before any cut.
    pub m: usize,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub num_cuts: usize,
    pub status: SolveStatus,
    pub best_x: Option<DVector<f64>>,
    pub cuts: Vec<Cut>,
    pub trace: Vec<TraceRecord>,
    pub elapsed: Duration,
}

/// `(v̄ − v̲) / max(|v̄|, ε)`, clamped at zero.
pub fn relative_gap(upper: f64, lower: f64, eps: f64) -> f64 {
    if upper == f64::INFINITY {
        return f64::INFINITY;
    }
    if lower == f64::INFINITY {
        return 0.0;
    }
    ((upper - lower) / upper.abs().max(eps)).max(0.0)
}

fn with_deadline(settings: &BoundSettings, deadline: Instant) -> BoundSettings {
    let mut s = *settings;
    s.conic.deadline = Some(s.conic.deadline.map_or(deadline, |d| d.min(deadline)));
    s
}

/// Region bound with a quick probe to seed the local search, then a
/// warm-started solve stopped once the bound closes the gap.
struct Round {
    bound: Option<BoundResult>,
    kkt: Option<KktPoint>,
    bound_time: f64,
    search_time: f64,
}

fn search_from(region: &ReducedInstance, z: &DVector<f64>, settings: &DriverSettings, salt: u64) -> Option<KktPoint> {
    // Start from an exactly feasible point so every upper bound is attained in F.
    let z = &project_to_region(region, z, 0.0);
    match finite_gmc(region, z, &settings.search) {
        Ok(k) if k.certified => Some(k),
        first => {
            // One restart from a small perturbation of the start.
            let mut rng = ChaCha8Rng::seed_from_u64(salt);
            let jitter = DVector::from_fn(z.len(), |_, _| 1e-6 * (2.0 * rng.random::<f64>() - 1.0));
            let z2 = project_to_region(region, &(z + jitter), settings.search.delta_act);
            match (first, finite_gmc(region, &z2, &settings.search)) {
                (_, Ok(k)) if k.certified => Some(k),
                (Ok(a), Ok(b)) => Some(if b.objective < a.objective { b } else { a }),
                (Ok(a), Err(_)) => Some(a),
                (Err(_), Ok(b)) => Some(b),
                (Err(_), Err(_)) => None,
            }
        }
    }
}

fn run_round(
    region: &ReducedInstance,
    settings: &DriverSettings,
    deadline: Instant,
    warm: Option<&WarmStart>,
    upper: f64,
    iter: usize,
) -> Round {
    let t = Instant::now();
    let mut probe_settings = with_deadline(&settings.bound, deadline);
    probe_settings.conic.max_iters = settings.probe_iters.min(settings.bound.conic.max_iters);
    let probe = dnn_lower_bound(region, &probe_settings, warm).ok();
    let mut bound_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let start = probe.as_ref().map(|p| p.z.clone());
    let kkt = start.and_then(|z| search_from(region, &z, settings, iter as u64));
    let mut search_time = t.elapsed().as_secs_f64();

    let best_upper = kkt.as_ref().map_or(upper, |k| upper.min(k.objective));
    let t = Instant::now();
    let scale = best_upper.abs().max(settings.eps);
    let mut full = with_deadline(&settings.bound, deadline);
    if best_upper.is_finite() {
        full.stop_at = Some(best_upper - 0.95 * settings.eps * scale);
        full.give_up_below = Some(best_upper - 2.0 * settings.eps * scale);
        // Keep iterating past the nominal tolerance while the bound is short of
        // the target; the monitor ends the solve either way.
        full.conic.tol *= 1e-2;
    }
    let seed = probe.as_ref().map(|p| p.warm.clone());
    let bound = match (dnn_lower_bound(region, &full, seed.as_ref().or(warm)), probe) {
        (Ok(b), Some(p)) => Some(if b.safe_bound >= p.safe_bound { b } else { p }),
        (Ok(b), None) => Some(b),
        (Err(_), p) => p,
    };
    bound_time += t.elapsed().as_secs_f64();

    // A second search from the refined relaxation point when it moved.
    let t = Instant::now();
    let mut kkt = kkt;
    if let Some(b) = &bound {
        let again = kkt
            .as_ref()
            .is_none_or(|k| (&k.x - &b.z).amax() > 1e-6);
        if again {
            if let Some(k2) = search_from(region, &b.z, settings, iter as u64 + 1) {
                if kkt.as_ref().is_none_or(|k| k2.objective < k.objective) {
                    kkt = Some(k2);
                }
            }
        }
    }
    search_time += t.elapsed().as_secs_f64();
    Round {
        bound,
        kkt,
        bound_time,
        search_time,
    }
}

/// Runs the cutting-plane loop on a reduced instance.
pub fn dcqp(inst: &ReducedInstance, settings: &DriverSettings) -> SolverReport {
    assert!(settings.eta > 0.0 && settings.eta <= settings.eps, "need 0 < eta <= eps");
    let started = Instant::now();
    let deadline = started + settings.time_limit;
    let eps = settings.eps;
    let mut state = SolverState {
        region: inst.clone(),
        upper_bound: f64::INFINITY,
        best_x: None,
        region_bound: f64::NEG_INFINITY,
        removed_bound: f64::INFINITY,
        cuts: Vec::new(),
        iter: 0,
        started,
    };
    let mut trace = Vec::new();

    let mut round = run_round(&state.region, settings, deadline, None, f64::INFINITY, 0);
    let mut warm = None;
    let mut zbar = None;
    if let Some(b) = &round.bound {
        state.region_bound = b.safe_bound;
        warm = Some(b.warm.clone());
        zbar = Some(b.z.clone());
    }
    let mut anchor = round.kkt.take();
    if let Some(k) = &anchor {
        state.upper_bound = k.objective;
        state.best_x = Some(k.x.clone());
    }
    let initial_gap = relative_gap(state.upper_bound, state.lower_bound(), eps);
    trace.push(TraceRecord {
        iter: 0,
        upper_bound: state.upper_bound,
        region_bound: state.region_bound,
        removed_bound: state.removed_bound,
        gap: initial_gap,
        cut_time: 0.0,
        bound_time: round.bound_time,
        search_time: round.search_time,
    });

    let status = loop {
        if relative_gap(state.upper_bound, state.lower_bound(), eps) <= eps {
            break SolveStatus::Solved;
        }
        if Instant::now() >= deadline {
            break SolveStatus::TimeLimit;
        }
        if state.cuts.len() >= settings.max_cuts {
            break SolveStatus::MaxCuts;
        }
        let (Some(kkt), Some(z)) = (anchor.as_ref(), zbar.as_ref()) else {
            break SolveStatus::CutFailed;
        };
        state.iter += 1;
        let v = state.upper_bound;
        let scale = v.abs().max(eps);
        let nu_r = v - settings.eta * scale;
        let nu = v - eps * scale;
        let phi = kkt.objective;

        let t = Instant::now();
        let cut_settings = with_deadline(&settings.bound, deadline);
        let beta = beta_policy(phi, nu_r, eps);
        let mut result = dnn_cut(&state.region, &kkt.x, z, nu_r, nu, beta, &cut_settings);
        if result.as_ref().map_or(true, |(c, _)| c.removed_bound < nu) {
            let cap = phi - nu_r;
            let beta2 = if cap > 0.0 { (2.0 * beta).min(cap) } else { 2.0 * beta };
            let retry = dnn_cut(&state.region, &kkt.x, z, nu_r, nu, beta2, &cut_settings);
            let better = match (&result, &retry) {
                (Err(_), Ok(_)) => true,
                (Ok((a, _)), Ok((b, _))) => b.removed_bound > a.removed_bound,
                _ => false,
            };
            if better {
                result = retry;
            }
        }
        let cut_time = t.elapsed().as_secs_f64();
        let Ok((cut, _)) = result else {
            break SolveStatus::CutFailed;
        };
        let cut_ok = cut.removed_bound >= nu;
        state.region = cut.apply(&state.region, state.cuts.len());
        state.removed_bound = state.removed_bound.min(cut.removed_bound);
        state.cuts.push(cut);

        let (mut bound_time, mut search_time) = (0.0, 0.0);
        if !lp::is_feasible(&state.region.a, &state.region.b) {
            state.region_bound = f64::INFINITY;
            anchor = None;
            zbar = None;
        } else {
            let r = run_round(&state.region, settings, deadline, warm.as_ref(), state.upper_bound, state.iter);
            bound_time = r.bound_time;
            search_time = r.search_time;
            match r.bound {
                Some(b) => {
                    state.region_bound = b.safe_bound;
                    warm = Some(b.warm.clone());
                    zbar = Some(b.z);
                }
                None => {
                    state.region_bound = f64::NEG_INFINITY;
                    zbar = None;
                }
            }
            if let Some(k) = &r.kkt {
                if k.objective < state.upper_bound {
                    state.upper_bound = k.objective;
                    state.best_x = Some(k.x.clone());
                }
            }
            anchor = r.kkt;
        }
        let gap = relative_gap(state.upper_bound, state.lower_bound(), eps);
        trace.push(TraceRecord {
            iter: state.iter,
            upper_bound: state.upper_bound,
            region_bound: state.region_bound,
            removed_bound: state.removed_bound,
            gap,
            cut_time,
            bound_time,
            search_time,
        });
        if !cut_ok && gap > eps {
            break SolveStatus::CutFailed;
        }
    };

    let lower = state.lower_bound();
    SolverReport {
        name: inst.name.clone(),
        n: inst.n,
        m: inst.m(),
        upper_bound: state.upper_bound,
        lower_bound: lower,
        initial_gap,
        final_gap: relative_gap(state.upper_bound, lower, eps),
        num_cuts: state.cuts.len(),
        status,
        best_x: state.best_x,
        cuts: state.cuts,
        trace,
        elapsed: started.elapsed(),
    }
}
