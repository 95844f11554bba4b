//! Adam on the per-frame variables with a cosine step schedule.
//!
//! Samples are evaluated in parallel and reduced in index order, so traces
//! are bit-identical across runs and thread counts.

use std::io::Write;

use rayon::prelude::*;

use sspose::Pose;

use crate::error::{HarnessError, Result};
use crate::refine::{decode_pose, total_loss, LossBreakdown, PreparedSample, RefineConfig, TrainableState};
use crate::scene::SampleKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSpec {
    pub iterations: usize,
    /// Step size at the first iteration.
    pub step_size: f64,
    /// Step size reached by the cosine schedule at the last iteration.
    pub final_step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// With both kinds present, synthetic frames step once every this many
    /// iterations and real frames on the others; 2 alternates 1:1.
    pub synthetic_period: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self { iterations: 300, step_size: 0.003, final_step_size: 1e-5, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, synthetic_period: 2 }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size.is_finite()
            && self.step_size >= 0.0
            && self.final_step_size >= 0.0
            && self.final_step_size <= self.step_size
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.synthetic_period >= 2;
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Config(format!("invalid optimizer settings: {self:?}")))
        }
    }

    fn step_at(&self, it: usize) -> f64 {
        if self.iterations <= 1 {
            return self.step_size;
        }
        let c = 0.5 * (1.0 + (std::f64::consts::PI * it as f64 / (self.iterations - 1) as f64).cos());
        self.final_step_size + (self.step_size - self.final_step_size) * c
    }
}

/// Mean objective over all samples before a given iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    /// Running minimum of `loss`.
    pub loss_min: f64,
    pub self_xy: f64,
    pub self_z: f64,
    pub self_r: f64,
    pub self_m: f64,
    pub pseudo: f64,
    pub syn: f64,
}

pub const TRACE_HEADER: &str = "iteration,loss,loss_min,self_xy,self_z,self_r,self_m,pseudo,syn";

impl TraceRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.iteration, self.loss, self.loss_min, self.self_xy, self.self_z, self.self_r, self.self_m, self.pseudo, self.syn
        )
    }
}

pub fn write_trace_csv(trace: &[TraceRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for row in trace {
        writeln!(w, "{}", row.to_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OptimizeOutput {
    pub poses: Vec<Pose>,
    pub states: Vec<TrainableState>,
    /// One row per iteration plus the final evaluation.
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn summarize(iteration: usize, parts: &[LossBreakdown], prev_min: f64) -> TraceRow {
    let n = parts.len().max(1) as f64;
    let mut row =
        TraceRow { iteration, loss: 0.0, loss_min: 0.0, self_xy: 0.0, self_z: 0.0, self_r: 0.0, self_m: 0.0, pseudo: 0.0, syn: 0.0 };
    for p in parts {
        row.loss += p.total / n;
        row.self_xy += p.self_xy / n;
        row.self_z += p.self_z / n;
        row.self_r += p.self_r / n;
        row.self_m += p.self_m / n;
        row.pseudo += p.pseudo / n;
        row.syn += p.syn / n;
    }
    row.loss_min = prev_min.min(row.loss);
    row
}

/// Refines `states` against the objective of their samples and decodes
/// the resulting poses from the anchor views.
pub fn optimize(
    samples: &[PreparedSample],
    states: Vec<TrainableState>,
    cfg: &RefineConfig,
    spec: &OptimizerSpec,
) -> Result<OptimizeOutput> {
    spec.validate()?;
    if samples.len() != states.len() {
        return Err(HarnessError::Config(format!("{} samples but {} states", samples.len(), states.len())));
    }
    let mixed = samples.iter().any(|s| s.kind == SampleKind::Real) && samples.iter().any(|s| s.kind == SampleKind::Synthetic);
    let mut states = states;
    let mut moments: Vec<Moments> =
        states.iter().map(|s| Moments { m: vec![0.0; s.params.len()], v: vec![0.0; s.params.len()], t: 0 }).collect();
    let mut trace = Vec::with_capacity(spec.iterations + 1);
    let mut best = f64::INFINITY;

    for it in 0..=spec.iterations {
        let stepping = it < spec.iterations;
        let evals: Vec<(LossBreakdown, Option<Vec<f64>>)> =
            samples.par_iter().zip(states.par_iter()).map(|(p, s)| total_loss(p, s, cfg, stepping)).collect::<Result<_>>()?;
        let parts: Vec<LossBreakdown> = evals.iter().map(|e| e.0).collect();
        let row = summarize(it, &parts, best);
        best = row.loss_min;
        trace.push(row);
        if !row.loss.is_finite() {
            return Err(HarnessError::Diverged { iteration: it, trace });
        }
        if !stepping {
            break;
        }
        let synthetic_turn = it % spec.synthetic_period == spec.synthetic_period - 1;
        let lr = spec.step_at(it);
        for (((sample, state), mom), (_, grad)) in samples.iter().zip(states.iter_mut()).zip(moments.iter_mut()).zip(evals) {
            if mixed && (sample.kind == SampleKind::Synthetic) != synthetic_turn {
                continue;
            }
            let grad = grad.expect("gradient requested");
            mom.t += 1;
            let c1 = 1.0 - spec.beta1.powi(mom.t);
            let c2 = 1.0 - spec.beta2.powi(mom.t);
            for (((x, g), m), v) in state.params.iter_mut().zip(&grad).zip(mom.m.iter_mut()).zip(mom.v.iter_mut()) {
                *m = spec.beta1 * *m + (1.0 - spec.beta1) * g;
                *v = spec.beta2 * *v + (1.0 - spec.beta2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + spec.epsilon);
            }
        }
    }

    let poses = samples.iter().zip(&states).map(|(p, s)| decode_pose(p, s, cfg)).collect::<Result<Vec<_>>>()?;
    Ok(OptimizeOutput { poses, states, trace })
}
