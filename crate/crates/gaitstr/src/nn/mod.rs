//! Minimal reverse-mode differentiation over `f64` dense arrays.
//!
//! A [`Tape`] records one forward evaluation; every operation pushes its
//! output value and a backward closure. [`Tape::backward`] replays the
//! closures in reverse, accumulating gradients into a [`Grads`] table.
//! Tapes are cheap, single-threaded and created per evaluation; parallel
//! callers build one tape per sample and combine leaf gradients outside.
//!
//! Everything is double precision so analytic gradients can be compared
//! against central finite differences at tight tolerances.

pub mod fd;
pub mod ops;
pub mod params;

use ndarray::{ArrayD, IxDyn};

/// Dense dynamic-rank tensor.
pub type Arr = ArrayD<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Read access to recorded forward values during backward.
pub struct Values<'a> {
    nodes: &'a [Node],
}

impl Values<'_> {
    pub fn get(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }
}

/// Gradient accumulation table, indexed by [`Var`].
pub struct Grads {
    slots: Vec<Option<Arr>>,
}

impl Grads {
    /// Accumulated gradient of a variable, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&Arr> {
        self.slots[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Arr> {
        self.slots[v.0].take()
    }

    fn add(&mut self, v: Var, contribution: Arr) {
        match &mut self.slots[v.0] {
            Some(acc) => {
                debug_assert_eq!(acc.shape(), contribution.shape());
                *acc += &contribution;
            }
            slot @ None => *slot = Some(contribution),
        }
    }
}

type BackwardFn = Box<dyn Fn(&Arr, &Values, &mut Grads) + Send + Sync>;

struct Node {
    value: Arr,
    backward: Option<BackwardFn>,
}

/// One recorded forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an input or parameter leaf.
    pub fn leaf(&mut self, value: Arr) -> Var {
        self.push(value, None)
    }

    /// Record a scalar leaf with shape `[1]`.
    pub fn scalar_leaf(&mut self, value: f64) -> Var {
        self.leaf(Arr::from_shape_vec(IxDyn(&[1]), vec![value]).unwrap())
    }

    pub(crate) fn push(&mut self, value: Arr, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node { value, backward });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `[1]`-shaped variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.len(), 1);
        a.iter().next().copied().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Run reverse accumulation from the given seeded roots.
    ///
    /// Leaf gradients stay in the returned table; interior gradients are
    /// consumed as the sweep passes them.
    pub fn backward(&self, seeds: Vec<(Var, Arr)>) -> Grads {
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
        };
        let mut highest = 0usize;
        for (v, seed) in seeds {
            debug_assert_eq!(self.nodes[v.0].value.shape(), seed.shape());
            highest = highest.max(v.0);
            grads.add(v, seed);
        }
        let values = Values { nodes: &self.nodes };
        for i in (0..=highest).rev() {
            if let Some(back) = &self.nodes[i].backward {
                let Some(g) = grads.slots[i].take() else {
                    continue;
                };
                back(&g, &values, &mut grads);
            }
        }
        grads
    }

    /// Convenience: backward from a scalar root with seed 1.
    pub fn backward_scalar(&self, root: Var) -> Grads {
        let seed = Arr::from_shape_vec(IxDyn(&[1]), vec![1.0]).unwrap();
        self.backward(vec![(root, seed)])
    }
}

/// Build a tensor from a shape and data, panicking on mismatch.
pub fn arr(shape: &[usize], data: Vec<f64>) -> Arr {
    Arr::from_shape_vec(IxDyn(shape), data).expect("shape/data mismatch")
}

/// All-zeros tensor.
pub fn zeros(shape: &[usize]) -> Arr {
    Arr::zeros(IxDyn(shape))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_gradients_survive_backward() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[2], vec![1.0, 2.0]));
        let b = t.leaf(arr(&[2], vec![3.0, 4.0]));
        let s = t.add(a, b);
        let l = t.sum_all(s);
        let g = t.backward_scalar(l);
        assert_eq!(g.get(a).unwrap().as_slice().unwrap(), &[1.0, 1.0]);
        assert_eq!(g.get(b).unwrap().as_slice().unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[1], vec![2.0]));
        let s = t.add(a, a);
        let g = t.backward_scalar(s);
        assert_eq!(g.get(a).unwrap()[[0]], 2.0);
    }

    #[test]
    fn multi_seed_backward() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[2], vec![1.0, 2.0]));
        let x = t.scale(a, 2.0);
        let y = t.scale(a, 3.0);
        let g = t.backward(vec![
            (x, arr(&[2], vec![1.0, 1.0])),
            (y, arr(&[2], vec![1.0, 1.0])),
        ]);
        assert_eq!(g.get(a).unwrap().as_slice().unwrap(), &[5.0, 5.0]);
    }
}
