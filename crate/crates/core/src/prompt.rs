//! Learnable spatio-temporal prompts and their fusion with the raw input.
//!
//! Five channel groups are concatenated per `(step, node)`: the projected
//! input, the spatial prompt, the transitional prompt (a Tucker-factorised
//! per-timestamp node mixture), and the time-of-day / day-of-week prompts.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::dataset::{DOW_SLOTS, TOD_SLOTS};
use crate::params::{uniform, Bound, Linear, ParamId, ParamStore};

/// Core `d×d×d`, temporal factor `N_t×d`, spatial factor `N×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub core: Tensor,
    pub temporal: Tensor,
    pub spatial: Tensor,
}

impl TuckerFactors {
    /// `N_t×N×d` transitional prompt, softmax-normalised over nodes.
    pub fn transitional_prompt(&self) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let core = tape.constant(self.core.clone());
        let temporal = tape.constant(self.temporal.clone());
        let spatial = tape.constant(self.spatial.clone());
        let out = transitional_prompt(&mut tape, core, temporal, spatial)?;
        Ok(tape.value(out).clone())
    }
}

/// `E'[t,n,r] = Σ_p Σ_q core[p,q,r]·temporal[t,p]·spatial[n,q]`, then softmax
/// over `n` for every `(t, r)`.
pub fn transitional_prompt(tape: &mut Tape, core: Var, temporal: Var, spatial: Var) -> Result<Var, TensorError> {
    let (sc, st, ss) = (tape.shape(core).to_vec(), tape.shape(temporal).to_vec(), tape.shape(spatial).to_vec());
    let d = st.get(1).copied().unwrap_or(0);
    let consistent = st.len() == 2 && ss.len() == 2 && ss[1] == d && sc == [d, d, d];
    if !consistent {
        return Err(TensorError::Shape {
            op: "transitional_prompt",
            lhs: sc,
            rhs: [st, ss].concat(),
        });
    }
    let (steps, nodes) = (st[0], ss[0]);
    let core_flat = tape.reshape(core, &[d, d * d])?;
    // (t, q, r)
    let by_time = tape.matmul(temporal, core_flat)?;
    let by_time = tape.reshape(by_time, &[steps, d, d])?;
    let q_major = tape.permute(by_time, &[1, 0, 2])?;
    let q_major = tape.reshape(q_major, &[d, steps * d])?;
    // (n, t, r)
    let mixed = tape.matmul(spatial, q_major)?;
    let mixed = tape.reshape(mixed, &[nodes, steps, d])?;
    let logits = tape.permute(mixed, &[1, 0, 2])?;
    tape.softmax(logits, 1)
}

/// Which prompt groups feed the fusion. A disabled group contributes a zero
/// block of the same width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSwitches {
    pub spatial: bool,
    pub temporal: bool,
    pub transitional: bool,
}

impl Default for PromptSwitches {
    fn default() -> Self {
        PromptSwitches {
            spatial: true,
            temporal: true,
            transitional: true,
        }
    }
}

impl PromptSwitches {
    pub fn none() -> Self {
        PromptSwitches {
            spatial: false,
            temporal: false,
            transitional: false,
        }
    }
}

/// Prompt tables and the five fusion projections.
#[derive(Debug, Clone)]
pub struct PromptBank {
    pub spatial: ParamId,
    pub tod: ParamId,
    pub dow: ParamId,
    pub tucker_core: ParamId,
    pub tucker_temporal: ParamId,
    pub tucker_spatial: ParamId,
    /// Input, spatial, transitional, time-of-day, day-of-week projections.
    pub fc: [Linear; 5],
    pub nodes: usize,
    pub steps_per_day: usize,
    pub in_features: usize,
    pub dim: usize,
}

/// Calendar lookups for a batch of `B` windows of `T` steps, flattened
/// window-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalendarIndex {
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
    /// Within-day step for the transitional prompt, `(start + offset) mod N_t`.
    pub day_step: Vec<usize>,
}

impl CalendarIndex {
    pub fn push_window(&mut self, tod: &[usize], dow: &[usize], window_start: usize, steps_per_day: usize) {
        self.tod.extend_from_slice(tod);
        self.dow.extend_from_slice(dow);
        self.day_step
            .extend((0..tod.len()).map(|o| (window_start + o) % steps_per_day));
    }
}

/// Parameter-only prompt outputs, reusable across batches while parameters
/// are fixed.
#[derive(Debug, Clone, Copy)]
pub struct PromptCache {
    /// Number of nodes the cached tables cover.
    pub nodes: usize,
    /// `N×d` projected spatial prompt.
    pub spatial: Option<Var>,
    /// `N_t×N×d` projected transitional prompt.
    pub transitional: Option<Var>,
}

/// Detached values of a [`PromptCache`], for inference with fixed parameters.
#[derive(Debug, Clone)]
pub struct PromptTables {
    pub spatial: Option<Tensor>,
    pub transitional: Option<Tensor>,
}

impl PromptTables {
    pub fn compute(bank: &PromptBank, store: &ParamStore, switches: PromptSwitches) -> Result<Self, TensorError> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let cache = bank.cache(&mut tape, &bound, switches)?;
        Ok(PromptTables {
            spatial: cache.spatial.map(|v| tape.value(v).clone()),
            transitional: cache.transitional.map(|v| tape.value(v).clone()),
        })
    }

    /// Places the tables for `nodes` on `tape` as constants, keeping only the
    /// transitional rows `calendar` refers to. Returns the calendar re-indexed
    /// into those rows.
    pub fn bind(
        &self,
        tape: &mut Tape,
        calendar: &CalendarIndex,
        nodes: Range<usize>,
    ) -> Result<(PromptCache, CalendarIndex), TensorError> {
        let spatial = match &self.spatial {
            Some(t) => Some(tape.constant(t.narrow(0, nodes.start, nodes.len())?)),
            None => None,
        };
        let mut calendar = calendar.clone();
        let transitional = match &self.transitional {
            None => None,
            Some(table) => {
                let mut rows: Vec<usize> = calendar.day_step.clone();
                rows.sort_unstable();
                rows.dedup();
                let steps = table.shape()[0];
                if let Some(&bad) = rows.iter().find(|&&r| r >= steps) {
                    return Err(TensorError::Index {
                        op: "prompt_tables",
                        index: bad,
                        len: steps,
                    });
                }
                let per = table.numel() / steps.max(1);
                let width = per / table.shape()[1].max(1);
                let (lo, hi) = (nodes.start * width, nodes.end * width);
                if hi > per {
                    return Err(TensorError::Index {
                        op: "prompt_tables",
                        index: nodes.end,
                        len: table.shape()[1],
                    });
                }
                let mut data = Vec::with_capacity(rows.len() * (hi - lo));
                for &r in &rows {
                    data.extend_from_slice(&table.data()[r * per + lo..r * per + hi]);
                }
                let mut shape = table.shape().to_vec();
                shape[0] = rows.len();
                shape[1] = nodes.len();
                for s in calendar.day_step.iter_mut() {
                    *s = rows.binary_search(s).expect("row kept");
                }
                let kept = Tensor::new(shape, data)?;
                Some(tape.constant(kept))
            }
        };
        let cache = PromptCache {
            nodes: nodes.len(),
            spatial,
            transitional,
        };
        Ok((cache, calendar))
    }
}

impl PromptBank {
    pub fn new(
        store: &mut ParamStore,
        nodes: usize,
        steps_per_day: usize,
        in_features: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let b = 1.0 / (dim as f64).sqrt();
        let spatial = store.add("prompt.spatial", uniform(rng, &[nodes, dim], b));
        let tod = store.add("prompt.tod", uniform(rng, &[TOD_SLOTS, dim], b));
        let dow = store.add("prompt.dow", uniform(rng, &[DOW_SLOTS, dim], b));
        let tucker_core = store.add("prompt.tucker.core", uniform(rng, &[dim, dim, dim], b));
        let tucker_temporal = store.add("prompt.tucker.temporal", uniform(rng, &[steps_per_day, dim], b));
        let tucker_spatial = store.add("prompt.tucker.spatial", uniform(rng, &[nodes, dim], b));
        let fc = [
            Linear::new(store, "fuse.input", in_features, dim, rng),
            Linear::new(store, "fuse.spatial", dim, dim, rng),
            Linear::new(store, "fuse.transitional", dim, dim, rng),
            Linear::new(store, "fuse.tod", dim, dim, rng),
            Linear::new(store, "fuse.dow", dim, dim, rng),
        ];
        PromptBank {
            spatial,
            tod,
            dow,
            tucker_core,
            tucker_temporal,
            tucker_spatial,
            fc,
            nodes,
            steps_per_day,
            in_features,
            dim,
        }
    }

    pub fn fused_width(&self) -> usize {
        5 * self.dim
    }

    /// Parameters belonging to each switchable group.
    pub fn group_ids(&self, group: PromptGroup) -> Vec<ParamId> {
        match group {
            PromptGroup::Spatial => vec![self.spatial, self.fc[1].weight, self.fc[1].bias],
            PromptGroup::Transitional => vec![
                self.tucker_core,
                self.tucker_temporal,
                self.tucker_spatial,
                self.fc[2].weight,
                self.fc[2].bias,
            ],
            PromptGroup::Temporal => vec![
                self.tod,
                self.dow,
                self.fc[3].weight,
                self.fc[3].bias,
                self.fc[4].weight,
                self.fc[4].bias,
            ],
        }
    }

    pub fn tucker_factors(&self, store: &ParamStore) -> TuckerFactors {
        TuckerFactors {
            core: store.get(self.tucker_core).clone(),
            temporal: store.get(self.tucker_temporal).clone(),
            spatial: store.get(self.tucker_spatial).clone(),
        }
    }

    /// Computes the parameter-only projections once.
    pub fn cache(&self, tape: &mut Tape, bound: &Bound, switches: PromptSwitches) -> Result<PromptCache, TensorError> {
        let spatial = if switches.spatial {
            Some(self.fc[1].forward(tape, bound, bound.var(self.spatial))?)
        } else {
            None
        };
        let transitional = if switches.transitional {
            let beta = transitional_prompt(
                tape,
                bound.var(self.tucker_core),
                bound.var(self.tucker_temporal),
                bound.var(self.tucker_spatial),
            )?;
            Some(self.fc[2].forward(tape, bound, beta)?)
        } else {
            None
        };
        Ok(PromptCache {
            nodes: self.nodes,
            spatial,
            transitional,
        })
    }

    /// Fuses a batch `x: B×T×N×F` into `B×T×N×5d`.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        calendar: &CalendarIndex,
        switches: PromptSwitches,
        cache: Option<&PromptCache>,
    ) -> Result<Var, TensorError> {
        let sx = tape.shape(x).to_vec();
        let nodes = cache.map_or(self.nodes, |c| c.nodes);
        if sx.len() != 4 || sx[2] != nodes || sx[3] != self.in_features {
            return Err(TensorError::Shape {
                op: "fuse",
                lhs: sx,
                rhs: vec![nodes, self.in_features],
            });
        }
        let (b, t, n, d) = (sx[0], sx[1], sx[2], self.dim);
        let rows = b * t;
        for (idx, len) in [(&calendar.tod, rows), (&calendar.dow, rows), (&calendar.day_step, rows)] {
            if idx.len() != len {
                return Err(TensorError::Shape {
                    op: "fuse",
                    lhs: vec![idx.len()],
                    rhs: vec![len],
                });
            }
        }
        let block = [b, t, n, d];
        let local_cache;
        let cache = match cache {
            Some(c) => c,
            None => {
                local_cache = self.cache(tape, bound, switches)?;
                &local_cache
            }
        };

        let input = self.fc[0].forward(tape, bound, x)?;

        let spatial = match (switches.spatial, cache.spatial) {
            (true, Some(s)) => tape.broadcast_to(s, &block)?,
            _ => tape.constant(Tensor::zeros(&block)),
        };

        let transitional = match (switches.transitional, cache.transitional) {
            (true, Some(beta)) => {
                let picked = tape.gather(beta, &calendar.day_step, 0)?;
                tape.reshape(picked, &block)?
            }
            _ => tape.constant(Tensor::zeros(&block)),
        };

        let (tod, dow) = if switches.temporal {
            let mut blocks = [None, None];
            for (slot, (table, idx, fc)) in [
                (self.tod, &calendar.tod, &self.fc[3]),
                (self.dow, &calendar.dow, &self.fc[4]),
            ]
            .into_iter()
            .enumerate()
            {
                let rows = tape.gather(bound.var(table), idx, 0)?;
                let proj = fc.forward(tape, bound, rows)?;
                let proj = tape.reshape(proj, &[b, t, 1, d])?;
                blocks[slot] = Some(tape.broadcast_to(proj, &block)?);
            }
            (blocks[0].unwrap(), blocks[1].unwrap())
        } else {
            let z = tape.constant(Tensor::zeros(&block));
            (z, z)
        };

        tape.concat(&[input, spatial, transitional, tod, dow], 3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptGroup {
    Spatial,
    Temporal,
    Transitional,
}
