//! Entity inputs with explicit time dependence, and the relation table.
//!
//! The input of entity `e` at absolute snapshot index `t` is
//!
//! ```text
//! dynamic = w_trend[e] * t + sin(2π * w_season[e] * t)
//! input   = [static[e] ; dynamic] · W_proj          (W_proj: 2d × d, no bias)
//! ```

use std::f64::consts::PI;

use rand::Rng;

use crate::autodiff::{Array, NodeId, Scalar, Tape};
use crate::error::{Error, Result};
use crate::params::{uniform, xavier, Bound, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct TemporalEmbedding {
    static_table: ParamId,
    trend: Option<ParamId>,
    seasonal: Option<ParamId>,
    projection: ParamId,
    num_entities: usize,
    dim: usize,
}

impl TemporalEmbedding {
    /// With `dynamic == false` the trend and seasonal tables are not created
    /// and the dynamic half of the projection input is zero.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        num_entities: usize,
        dim: usize,
        num_timestamps: usize,
        dynamic: bool,
    ) -> Self {
        let static_table = store.add(
            "entity.static",
            xavier(rng, &[num_entities, dim], num_entities, dim),
        );
        let (trend, seasonal) = if dynamic {
            let scale = 1.0 / num_timestamps.max(1) as f64;
            (
                Some(store.add("entity.trend", uniform(rng, &[num_entities, dim], scale))),
                Some(store.add(
                    "entity.seasonal",
                    xavier(rng, &[num_entities, dim], num_entities, dim),
                )),
            )
        } else {
            (None, None)
        };
        let projection = store.add(
            "entity.projection",
            xavier(rng, &[2 * dim, dim], 2 * dim, dim),
        );
        Self {
            static_table,
            trend,
            seasonal,
            projection,
            num_entities,
            dim,
        }
    }

    pub fn has_dynamic(&self) -> bool {
        self.trend.is_some()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn project<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        rows: Option<&[usize]>,
        t: usize,
        dynamic: bool,
    ) -> Result<NodeId> {
        let pick = |tape: &mut Tape<T>, table: NodeId| match rows {
            Some(r) => tape.gather_rows(table, r),
            None => Ok(table),
        };
        let stat = pick(tape, bound[self.static_table])?;
        let dynamic_part = match (dynamic, self.trend, self.seasonal) {
            (true, Some(trend), Some(seasonal)) => {
                let w0 = pick(tape, bound[trend])?;
                let w1 = pick(tape, bound[seasonal])?;
                let tf = t as f64;
                let linear = tape.scale(w0, T::of(tf))?;
                let phase = tape.scale(w1, T::of(2.0 * PI * tf))?;
                let periodic = tape.sine(phase)?;
                tape.add(linear, periodic)?
            }
            _ => {
                let n = tape.shape(stat)[0];
                tape.leaf(Array::zeros(&[n, self.dim]))
            }
        };
        let joined = tape.concat_last_axis(stat, dynamic_part)?;
        tape.matmul(joined, bound[self.projection])
    }

    /// Inputs of every entity at snapshot `t`: `[|E|, d]`.
    pub fn all_entities<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        t: usize,
    ) -> Result<NodeId> {
        self.project(tape, bound, None, t, true)
    }

    /// Input of one entity at snapshot `t`: `[d]`.
    pub fn entity_input<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        entity: usize,
        t: usize,
    ) -> Result<NodeId> {
        self.check_entity(entity)?;
        let row = self.project(tape, bound, Some(&[entity]), t, true)?;
        tape.reshape(row, &[self.dim])
    }

    /// Input of one entity with the dynamic half replaced by zeros.
    pub fn entity_input_static_only<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        entity: usize,
    ) -> Result<NodeId> {
        self.check_entity(entity)?;
        let row = self.project(tape, bound, Some(&[entity]), 0, false)?;
        tape.reshape(row, &[self.dim])
    }

    fn check_entity(&self, entity: usize) -> Result<()> {
        if entity >= self.num_entities {
            return Err(Error::OutOfRange {
                what: "entity",
                index: entity,
                size: self.num_entities,
            });
        }
        Ok(())
    }

    /// `3d|E| + 2d²`, or `d|E| + 2d²` without the dynamic tables.
    pub fn parameter_count(&self) -> usize {
        let tables = if self.has_dynamic() { 3 } else { 1 };
        tables * self.dim * self.num_entities + 2 * self.dim * self.dim
    }
}

/// Time-independent relation embeddings for base and inverse relations.
#[derive(Clone, Debug)]
pub struct RelationTable {
    table: ParamId,
    num_base: usize,
    dim: usize,
}

impl RelationTable {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        num_base: usize,
        dim: usize,
    ) -> Self {
        let table = store.add(
            "relation.table",
            xavier(rng, &[2 * num_base, dim], 2 * num_base, dim),
        );
        Self {
            table,
            num_base,
            dim,
        }
    }

    pub fn all(&self, bound: &Bound) -> NodeId {
        bound[self.table]
    }

    pub fn embedding<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        relation: usize,
    ) -> Result<NodeId> {
        if relation >= 2 * self.num_base {
            return Err(Error::OutOfRange {
                what: "relation",
                index: relation,
                size: 2 * self.num_base,
            });
        }
        let row = tape.gather_rows(bound[self.table], &[relation])?;
        tape.reshape(row, &[self.dim])
    }

    /// `2d|R|`
    pub fn parameter_count(&self) -> usize {
        2 * self.dim * self.num_base
    }
}
