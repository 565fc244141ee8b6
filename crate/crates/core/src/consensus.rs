//! Exact quantized average consensus by mass accumulation.
//!
//! Each node keeps a held mass `(y, z)` that grows with whatever arrives and a
//! stored pair `(y^s, z^s)` recording the last mass it forwarded. A node
//! forwards its held mass only when it is at least as large as the stored pair
//! (compared on `z`, then `y` dimension by dimension), so smaller masses wait
//! to be absorbed by a larger one. Transmissions follow the node's round-robin
//! schedule over its outgoing edges, one edge per transmission.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::exactmath::FractionVector;
use crate::graph::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConsensusError {
    #[error("initial counter mass must be 0 or 1, got {0}")]
    InvalidCounter(u32),
    #[error("a node with zero counter mass must start with a zero value mass")]
    ValueWithoutCounter,
    #[error("mass dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("node has no out-neighbors")]
    NoOutNeighbors,
    #[error("emit called while the trigger says hold")]
    EmitOnHold,
}

/// Value mass `y` and counter mass `z`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mass {
    pub y: Vec<BigInt>,
    pub z: BigInt,
}

impl Mass {
    pub fn new(y: Vec<BigInt>, z: impl Into<BigInt>) -> Self {
        Self { y, z: z.into() }
    }

    pub fn zero(dim: usize) -> Self {
        Self { y: vec![BigInt::zero(); dim], z: BigInt::zero() }
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn is_zero(&self) -> bool {
        self.z.is_zero() && self.y.iter().all(Zero::is_zero)
    }

    /// Componentwise accumulation.
    pub fn absorb(&mut self, other: &Mass) -> Result<(), ConsensusError> {
        if other.dim() != self.dim() {
            return Err(ConsensusError::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        for (a, b) in self.y.iter_mut().zip(&other.y) {
            *a += b;
        }
        self.z += &other.z;
        Ok(())
    }

    /// Bits needed to carry this mass as signed integers.
    pub fn payload_bits(&self) -> u64 {
        self.y.iter().map(|v| v.bits() + 1).sum::<u64>() + self.z.bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Transmit,
    Hold,
}

/// A mass leaving a node along one outgoing edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmission {
    pub to: NodeId,
    pub mass: Mass,
}

/// One node's view of one consensus instance.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    held: Mass,
    stored_y: Vec<BigInt>,
    stored_z: BigInt,
    tr: u64,
    e: usize,
    schedule: Arc<[NodeId]>,
}

impl ConsensusState {
    /// Initializes the instance. A node starting with `z0 = 1` stores its own
    /// value and immediately sends it to the out-neighbor with order 0; a node
    /// with `z0 = 0` starts empty and silent.
    pub fn init(
        y0: Vec<BigInt>,
        z0: u32,
        schedule: Arc<[NodeId]>,
    ) -> Result<(Self, Option<Transmission>), ConsensusError> {
        if schedule.is_empty() {
            return Err(ConsensusError::NoOutNeighbors);
        }
        let dim = y0.len();
        match z0 {
            0 => {
                if !y0.iter().all(Zero::is_zero) {
                    return Err(ConsensusError::ValueWithoutCounter);
                }
                let state = Self {
                    held: Mass::zero(dim),
                    stored_y: vec![BigInt::zero(); dim],
                    stored_z: BigInt::zero(),
                    tr: 0,
                    e: 0,
                    schedule,
                };
                Ok((state, None))
            }
            1 => {
                let mut state = Self {
                    held: Mass::new(y0.clone(), 1),
                    stored_y: y0,
                    stored_z: BigInt::one(),
                    tr: 0,
                    e: 0,
                    schedule,
                };
                let sent = state.send_held();
                Ok((state, Some(sent)))
            }
            other => Err(ConsensusError::InvalidCounter(other)),
        }
    }

    pub fn dim(&self) -> usize {
        self.stored_y.len()
    }

    pub fn held(&self) -> &Mass {
        &self.held
    }

    pub fn stored_y(&self) -> &[BigInt] {
        &self.stored_y
    }

    pub fn stored_z(&self) -> &BigInt {
        &self.stored_z
    }

    /// Transmissions made so far.
    pub fn transmissions(&self) -> u64 {
        self.tr
    }

    /// Order of the edge used by the next transmission.
    pub fn next_order(&self) -> usize {
        self.e
    }

    /// `y^s / z^s`, absent until the node has stored a nonzero counter.
    pub fn estimate(&self) -> Option<FractionVector> {
        if self.stored_z.is_zero() {
            return None;
        }
        FractionVector::new(self.stored_y.clone(), self.stored_z.clone()).ok()
    }

    /// Adds every incoming mass to the held mass.
    pub fn absorb<'a, I>(&mut self, incoming: I) -> Result<(), ConsensusError>
    where
        I: IntoIterator<Item = &'a Mass>,
    {
        for mass in incoming {
            self.held.absorb(mass)?;
        }
        Ok(())
    }

    /// Event-trigger conditions on the held mass against the stored pair.
    pub fn trigger(&self) -> Decision {
        if self.held.is_zero() {
            return Decision::Hold;
        }
        match self.held.z.cmp(&self.stored_z) {
            Ordering::Greater => return Decision::Transmit,
            Ordering::Less => return Decision::Hold,
            Ordering::Equal => {}
        }
        for (held, stored) in self.held.y.iter().zip(&self.stored_y) {
            match held.cmp(stored) {
                Ordering::Greater => return Decision::Transmit,
                Ordering::Less => return Decision::Hold,
                Ordering::Equal => {}
            }
        }
        Decision::Transmit
    }

    /// Ratio of the mass currently held back, if any.
    pub fn held_ratio(&self) -> Option<FractionVector> {
        if self.held.z.is_zero() {
            return None;
        }
        FractionVector::new(self.held.y.clone(), self.held.z.clone()).ok()
    }

    /// Stores and forwards the held mass along the next scheduled edge.
    pub fn emit(&mut self) -> Result<Transmission, ConsensusError> {
        if self.trigger() == Decision::Hold {
            return Err(ConsensusError::EmitOnHold);
        }
        self.stored_y.clone_from(&self.held.y);
        self.stored_z.clone_from(&self.held.z);
        Ok(self.send_held())
    }

    /// Absorb, evaluate the trigger, and emit when it fires.
    pub fn step<'a, I>(&mut self, incoming: I) -> Result<Option<Transmission>, ConsensusError>
    where
        I: IntoIterator<Item = &'a Mass>,
    {
        self.absorb(incoming)?;
        match self.trigger() {
            Decision::Transmit => self.emit().map(Some),
            Decision::Hold => Ok(None),
        }
    }

    fn send_held(&mut self) -> Transmission {
        let to = self.schedule[self.e];
        let dim = self.dim();
        let mass = core::mem::replace(&mut self.held, Mass::zero(dim));
        self.tr += 1;
        self.e = (self.tr % self.schedule.len() as u64) as usize;
        Transmission { to, mass }
    }
}
