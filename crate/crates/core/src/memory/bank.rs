use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::geometry::TokenPosition;

/// Stored features of one modality for one past frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalMemory {
    /// `N_tok × d`
    pub features: DMatrix<f64>,
    /// Token positions in the entry's capture-time ego frame.
    pub positions: Vec<TokenPosition>,
    /// Object summary token (stand-in for decoder object pointers).
    pub summary: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub frame: usize,
    pub prompted: bool,
    pub image: ModalMemory,
    pub lidar: ModalMemory,
}

/// Two FIFO queues: up to `N` unprompted and `M` prompted past frames.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    unprompted_capacity: usize,
    prompted_capacity: usize,
    unprompted: VecDeque<MemoryEntry>,
    prompted: VecDeque<MemoryEntry>,
}

impl Default for MemoryBank {
    fn default() -> Self {
        Self::new(6, 2)
    }
}

impl MemoryBank {
    pub fn new(unprompted_capacity: usize, prompted_capacity: usize) -> Self {
        Self {
            unprompted_capacity,
            prompted_capacity,
            unprompted: VecDeque::with_capacity(unprompted_capacity + 1),
            prompted: VecDeque::with_capacity(prompted_capacity + 1),
        }
    }

    /// Appends to the queue matching `entry.prompted`, returning the evicted
    /// oldest entry of that queue if it overflowed.
    pub fn push(&mut self, entry: MemoryEntry) -> Option<MemoryEntry> {
        let (queue, cap) = if entry.prompted {
            (&mut self.prompted, self.prompted_capacity)
        } else {
            (&mut self.unprompted, self.unprompted_capacity)
        };
        queue.push_back(entry);
        if queue.len() > cap {
            queue.pop_front()
        } else {
            None
        }
    }

    /// Prompted entries (oldest first), then unprompted entries (oldest first).
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.prompted.iter().chain(self.unprompted.iter())
    }

    pub fn unprompted(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.unprompted.iter()
    }

    pub fn prompted(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.prompted.iter()
    }

    pub fn len(&self) -> usize {
        self.unprompted.len() + self.prompted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacities(&self) -> (usize, usize) {
        (self.unprompted_capacity, self.prompted_capacity)
    }
}

/// Free-function form of [`MemoryBank::push`].
pub fn bank_push(mut bank: MemoryBank, entry: MemoryEntry) -> MemoryBank {
    bank.push(entry);
    bank
}

#[cfg(test)]
pub(crate) fn stub_entry(frame: usize, prompted: bool) -> MemoryEntry {
    let modal = ModalMemory {
        features: DMatrix::zeros(0, 12),
        positions: Vec::new(),
        summary: DVector::zeros(12),
    };
    MemoryEntry {
        frame,
        prompted,
        image: modal.clone(),
        lidar: modal,
    }
}
