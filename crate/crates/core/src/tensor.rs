//! Dense tensor values on the 4-dimensional chart.
//!
//! Component convention (the one place it is fixed): a tensor of valence
//! `(r, s)` stores its `r` contravariant slots first and its `s` covariant
//! slots after them, and components are laid out row-major over that slot
//! order. Slot 0 of the chart is coordinate time, slots 1..=3 are spatial.
//! Slots are addressed by kind and ordinal, so `Slot::Down(0)` is the first
//! covariant slot whatever the number of contravariant slots.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::TensorError;

/// Chart dimension.
pub const DIM: usize = 4;
/// Largest supported `r + s`.
pub const MAX_RANK: usize = 6;

/// A point of the global chart: `x⁰` is coordinate time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event(pub [f64; 4]);

impl Event {
    pub const fn new(t: f64, x: f64, y: f64, z: f64) -> Self {
        Event([t, x, y, z])
    }

    pub fn from_parts(t: f64, spatial: [f64; 3]) -> Self {
        Event([t, spatial[0], spatial[1], spatial[2]])
    }

    pub fn time(&self) -> f64 {
        self.0[0]
    }

    pub fn spatial(&self) -> [f64; 3] {
        [self.0[1], self.0[2], self.0[3]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// `self + scale * direction`.
    pub fn offset(&self, direction: &[f64; 4], scale: f64) -> Event {
        let mut c = self.0;
        for (ci, di) in c.iter_mut().zip(direction) {
            *ci += scale * di;
        }
        Event(c)
    }

    /// Moves along a single coordinate axis.
    pub fn shifted(&self, axis: usize, delta: f64) -> Event {
        let mut c = self.0;
        c[axis] += delta;
        Event(c)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Number of contravariant (`up`) and covariant (`down`) slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Valence {
    pub up: usize,
    pub down: usize,
}

impl Valence {
    pub const SCALAR: Valence = Valence { up: 0, down: 0 };
    pub const VECTOR: Valence = Valence { up: 1, down: 0 };
    pub const COVECTOR: Valence = Valence { up: 0, down: 1 };

    pub const fn new(up: usize, down: usize) -> Self {
        Valence { up, down }
    }

    pub const fn rank(&self) -> usize {
        self.up + self.down
    }

    pub fn len(&self) -> usize {
        DIM.pow(self.rank() as u32)
    }
}

impl fmt::Display for Valence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.up, self.down)
    }
}

/// A slot addressed by kind and ordinal within that kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Up(usize),
    Down(usize),
}

impl Slot {
    fn same_kind(&self, other: &Slot) -> bool {
        matches!(
            (self, other),
            (Slot::Up(_), Slot::Up(_)) | (Slot::Down(_), Slot::Down(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    valence: Valence,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(valence: Valence) -> Result<Self, TensorError> {
        if valence.rank() > MAX_RANK {
            return Err(TensorError::RankTooLarge {
                rank: valence.rank(),
            });
        }
        Ok(Tensor {
            valence,
            data: vec![0.0; valence.len()],
        })
    }

    pub fn from_components(valence: Valence, data: Vec<f64>) -> Result<Self, TensorError> {
        if valence.rank() > MAX_RANK {
            return Err(TensorError::RankTooLarge {
                rank: valence.rank(),
            });
        }
        if data.len() != valence.len() {
            return Err(TensorError::ComponentCount {
                expected: valence.len(),
                found: data.len(),
            });
        }
        Ok(Tensor { valence, data })
    }

    /// Builds a tensor by evaluating `f` on every multi-index.
    pub fn from_fn<F>(valence: Valence, mut f: F) -> Result<Self, TensorError>
    where
        F: FnMut(&[usize]) -> f64,
    {
        let mut t = Tensor::zeros(valence)?;
        let rank = valence.rank();
        let mut idx = [0usize; MAX_RANK];
        for (lin, value) in t.data.iter_mut().enumerate() {
            unravel(lin, rank, &mut idx);
            *value = f(&idx[..rank]);
        }
        Ok(t)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            valence: Valence::SCALAR,
            data: vec![v],
        }
    }

    pub fn vector(c: [f64; 4]) -> Self {
        Tensor {
            valence: Valence::VECTOR,
            data: c.to_vec(),
        }
    }

    pub fn covector(c: [f64; 4]) -> Self {
        Tensor {
            valence: Valence::COVECTOR,
            data: c.to_vec(),
        }
    }

    /// A `(2,0)` or `(0,2)` tensor from a 4x4 matrix (`m[a][b]`).
    pub fn matrix(valence: Valence, m: &[[f64; 4]; 4]) -> Result<Self, TensorError> {
        if valence.rank() != 2 {
            return Err(TensorError::ValenceMismatch {
                expected: Valence::new(1, 1),
                found: valence,
            });
        }
        Tensor::from_fn(valence, |i| m[i[0]][i[1]])
    }

    /// The `(1,1)` identity `δ_a^b`.
    pub fn identity() -> Self {
        Tensor::from_fn(Valence::new(1, 1), |i| if i[0] == i[1] { 1.0 } else { 0.0 })
            .expect("rank 2")
    }

    pub fn valence(&self) -> Valence {
        self.valence
    }

    pub fn components(&self) -> &[f64] {
        &self.data
    }

    pub fn components_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_components(self) -> Vec<f64> {
        self.data
    }

    /// Value of a scalar, or its single component.
    pub fn as_scalar(&self) -> f64 {
        self.data[0]
    }

    pub fn as_array4(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        out.copy_from_slice(&self.data[..4]);
        out
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[ravel(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let lin = ravel(idx);
        self.data[lin] = value;
    }

    /// Absolute position of a slot in the component layout.
    pub fn slot_position(&self, slot: Slot) -> Result<usize, TensorError> {
        match slot {
            Slot::Up(i) if i < self.valence.up => Ok(i),
            Slot::Down(i) if i < self.valence.down => Ok(self.valence.up + i),
            _ => Err(TensorError::SlotOutOfRange {
                slot,
                valence: self.valence,
            }),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64, TensorError> {
        self.check_same_valence(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    fn check_same_valence(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.valence != other.valence {
            return Err(TensorError::ValenceMismatch {
                expected: self.valence,
                found: other.valence,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_valence(other)?;
        Ok(Tensor {
            valence: self.valence,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn try_sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same_valence(other)?;
        Ok(Tensor {
            valence: self.valence,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            valence: self.valence,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Tensor product. The result keeps the up-then-down layout: contravariant
    /// slots of `self`, then of `other`, then covariant slots of `self`, then
    /// of `other`.
    pub fn outer(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.product_contract(other, &[])
    }

    /// Contracts the `up`-th contravariant slot with the `down`-th covariant slot.
    pub fn contract(&self, up: usize, down: usize) -> Result<Tensor, TensorError> {
        let pu = self.slot_position(Slot::Up(up))?;
        let pd = self.slot_position(Slot::Down(down))?;
        let out_valence = Valence::new(self.valence.up - 1, self.valence.down - 1);
        let rank = self.valence.rank();
        let mut out = Tensor::zeros(out_valence)?;
        let mut full = [0usize; MAX_RANK];
        let mut reduced = [0usize; MAX_RANK];
        for (lin, value) in out.data.iter_mut().enumerate() {
            unravel(lin, rank - 2, &mut reduced);
            let mut r = 0;
            for (p, slot) in full.iter_mut().enumerate().take(rank) {
                if p != pu && p != pd {
                    *slot = reduced[r];
                    r += 1;
                }
            }
            let mut sum = 0.0;
            for k in 0..DIM {
                full[pu] = k;
                full[pd] = k;
                sum += self.data[ravel(&full[..rank])];
            }
            *value = sum;
        }
        Ok(out)
    }

    /// Tensor product of `self` and `other` with the listed slot pairs
    /// contracted, without materialising the full product. Each pair names a
    /// slot of `self` and a slot of `other` of opposite kinds. The result
    /// layout is that of [`Tensor::outer`] with the contracted slots removed.
    pub fn product_contract(
        &self,
        other: &Tensor,
        pairs: &[(Slot, Slot)],
    ) -> Result<Tensor, TensorError> {
        let mut left_pos = Vec::with_capacity(pairs.len());
        let mut right_pos = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            if a.same_kind(b) {
                return Err(TensorError::SlotKindMismatch);
            }
            let pa = self.slot_position(*a)?;
            let pb = other.slot_position(*b)?;
            if left_pos.contains(&pa) || right_pos.contains(&pb) {
                return Err(TensorError::RepeatedSlot);
            }
            left_pos.push(pa);
            right_pos.push(pb);
        }
        let contracted_up_left = pairs.iter().filter(|(a, _)| matches!(a, Slot::Up(_))).count();
        let contracted_up_right = pairs.iter().filter(|(_, b)| matches!(b, Slot::Up(_))).count();
        let out_valence = Valence::new(
            self.valence.up + other.valence.up - contracted_up_left - contracted_up_right,
            self.valence.down + other.valence.down - (pairs.len() - contracted_up_left)
                - (pairs.len() - contracted_up_right),
        );
        let mut out = Tensor::zeros(out_valence)?;

        // Where each free output slot comes from: (from_left, position).
        let mut sources: Vec<(bool, usize)> = Vec::with_capacity(out_valence.rank());
        for p in 0..self.valence.up {
            if !left_pos.contains(&p) {
                sources.push((true, p));
            }
        }
        for p in 0..other.valence.up {
            if !right_pos.contains(&p) {
                sources.push((false, p));
            }
        }
        for p in self.valence.up..self.valence.rank() {
            if !left_pos.contains(&p) {
                sources.push((true, p));
            }
        }
        for p in other.valence.up..other.valence.rank() {
            if !right_pos.contains(&p) {
                sources.push((false, p));
            }
        }

        let lrank = self.valence.rank();
        let rrank = other.valence.rank();
        let n_pairs = pairs.len();
        let n_sum = DIM.pow(n_pairs as u32);
        let mut out_idx = [0usize; MAX_RANK];
        let mut sum_idx = [0usize; MAX_RANK];
        let mut li = [0usize; 2 * MAX_RANK];
        let mut ri = [0usize; 2 * MAX_RANK];
        for (lin, value) in out.data.iter_mut().enumerate() {
            unravel(lin, out_valence.rank(), &mut out_idx);
            for (k, (from_left, p)) in sources.iter().enumerate() {
                if *from_left {
                    li[*p] = out_idx[k];
                } else {
                    ri[*p] = out_idx[k];
                }
            }
            let mut acc = 0.0;
            for s in 0..n_sum {
                unravel(s, n_pairs, &mut sum_idx);
                for k in 0..n_pairs {
                    li[left_pos[k]] = sum_idx[k];
                    ri[right_pos[k]] = sum_idx[k];
                }
                acc += self.data[ravel(&li[..lrank])] * other.data[ravel(&ri[..rrank])];
            }
            *value = acc;
        }
        Ok(out)
    }

    /// Alternation over the listed slots with `1/k!` normalisation.
    pub fn antisymmetrize(&self, slots: &[Slot]) -> Result<Tensor, TensorError> {
        self.alternate(slots, true)
    }

    /// Symmetrisation over the listed slots with `1/k!` normalisation.
    pub fn symmetrize(&self, slots: &[Slot]) -> Result<Tensor, TensorError> {
        self.alternate(slots, false)
    }

    fn alternate(&self, slots: &[Slot], signed: bool) -> Result<Tensor, TensorError> {
        if slots.is_empty() {
            return Ok(self.clone());
        }
        if slots.iter().any(|s| !s.same_kind(&slots[0])) {
            return Err(TensorError::SlotKindMismatch);
        }
        let mut positions = Vec::with_capacity(slots.len());
        for s in slots {
            let p = self.slot_position(*s)?;
            if positions.contains(&p) {
                return Err(TensorError::RepeatedSlot);
            }
            positions.push(p);
        }
        let perms = permutations_with_sign(positions.len());
        let norm = 1.0 / perms.len() as f64;
        let rank = self.valence.rank();
        let mut out = Tensor::zeros(self.valence)?;
        let mut idx = [0usize; MAX_RANK];
        let mut src = [0usize; MAX_RANK];
        for (lin, value) in out.data.iter_mut().enumerate() {
            unravel(lin, rank, &mut idx);
            let mut acc = 0.0;
            for (perm, sign) in &perms {
                src[..rank].copy_from_slice(&idx[..rank]);
                for (k, &pk) in perm.iter().enumerate() {
                    src[positions[k]] = idx[positions[pk]];
                }
                let w = if signed { *sign } else { 1.0 };
                acc += w * self.data[ravel(&src[..rank])];
            }
            *value = acc * norm;
        }
        Ok(out)
    }
}

impl Add for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: &Tensor) -> Tensor {
        self.try_add(rhs).expect("tensor addition with mismatched valence")
    }
}

impl Sub for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: &Tensor) -> Tensor {
        self.try_sub(rhs).expect("tensor subtraction with mismatched valence")
    }
}

impl Mul<f64> for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: f64) -> Tensor {
        self.scale(rhs)
    }
}

impl Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        self.scale(-1.0)
    }
}

fn ravel(idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * DIM + i)
}

fn unravel(mut lin: usize, rank: usize, out: &mut [usize]) {
    for k in (0..rank).rev() {
        out[k] = lin % DIM;
        lin /= DIM;
    }
}

/// All permutations of `0..k` with their parity signs.
fn permutations_with_sign(k: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut perms = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut perms);
    perms
        .into_iter()
        .map(|p| {
            let mut inversions = 0;
            for i in 0..p.len() {
                for j in i + 1..p.len() {
                    if p[i] > p[j] {
                        inversions += 1;
                    }
                }
            }
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            (p, sign)
        })
        .collect()
}

/// The alternating symbol `ε_{abcd}` with `ε_{0123} = sign`.
pub fn levi_civita(sign: f64) -> Tensor {
    Tensor::from_fn(Valence::new(0, 4), |i| {
        let mut p = [i[0], i[1], i[2], i[3]];
        let mut s = sign;
        for a in 0..4 {
            for b in a + 1..4 {
                if p[a] == p[b] {
                    return 0.0;
                }
            }
        }
        // bubble sort to count transpositions
        for a in 0..4 {
            for b in 0..3 - a {
                if p[b] > p[b + 1] {
                    p.swap(b, b + 1);
                    s = -s;
                }
            }
        }
        s
    })
    .expect("rank 4")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random_tensor(valence: Valence, seed: u64) -> Tensor {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn(valence, |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .unwrap()
    }

    #[test]
    fn trace_of_identity_is_four() {
        let t = Tensor::identity().contract(0, 0).unwrap();
        assert_eq!(t.valence(), Valence::SCALAR);
        assert_eq!(t.as_scalar(), 4.0);
    }

    #[test]
    fn unit_timelike_normalization() {
        let xi = Tensor::vector([1.0, 0.0, 0.0, 0.0]);
        let t = Tensor::covector([1.0, 0.0, 0.0, 0.0]);
        let s = xi.outer(&t).unwrap().contract(0, 0).unwrap();
        assert_eq!(s.as_scalar(), 1.0);
    }

    #[test]
    fn rank_limit_enforced() {
        assert!(matches!(
            Tensor::zeros(Valence::new(4, 3)),
            Err(TensorError::RankTooLarge { rank: 7 })
        ));
        let big = Tensor::zeros(Valence::new(0, 4)).unwrap();
        assert!(big.outer(&Tensor::zeros(Valence::new(3, 0)).unwrap()).is_err());
    }

    #[test]
    fn contract_rejects_out_of_range_slots() {
        let v = Tensor::vector([1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            v.contract(0, 0),
            Err(TensorError::SlotOutOfRange { .. })
        ));
    }

    #[test]
    fn product_contract_rejects_same_kind_pairs() {
        let v = Tensor::vector([1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            v.product_contract(&v, &[(Slot::Up(0), Slot::Up(0))]),
            Err(TensorError::SlotKindMismatch)
        ));
    }

    #[test]
    fn product_contract_matches_outer_then_contract() {
        let a = pseudo_random_tensor(Valence::new(1, 2), 3);
        let b = pseudo_random_tensor(Valence::new(2, 0), 5);
        let direct = a
            .product_contract(&b, &[(Slot::Down(1), Slot::Up(0))])
            .unwrap();
        // outer layout: ups [a0, b0, b1], downs [a_d0, a_d1]
        let via_outer = a.outer(&b).unwrap().contract(1, 1).unwrap();
        assert!(direct.max_abs_diff(&via_outer).unwrap() < 1e-14);
    }

    #[test]
    fn antisymmetrize_kills_symmetric() {
        let m = Tensor::from_fn(Valence::new(2, 0), |i| (i[0] + i[1]) as f64 + 0.5).unwrap();
        let a = m.antisymmetrize(&[Slot::Up(0), Slot::Up(1)]).unwrap();
        assert_eq!(a.max_abs(), 0.0);
    }

    #[test]
    fn antisymmetrize_wedge_of_basis_vectors() {
        let v = Tensor::vector([1.0, 0.0, 0.0, 0.0]);
        let w = Tensor::vector([0.0, 1.0, 0.0, 0.0]);
        let a = v
            .outer(&w)
            .unwrap()
            .antisymmetrize(&[Slot::Up(0), Slot::Up(1)])
            .unwrap();
        assert_eq!(a.get(&[0, 1]), 0.5);
        assert_eq!(a.get(&[1, 0]), -0.5);
        let others: f64 = a
            .components()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 1 && *i != 4)
            .map(|(_, v)| v.abs())
            .sum();
        assert_eq!(others, 0.0);
    }

    #[test]
    fn antisymmetrize_is_idempotent_on_random_tensors() {
        for seed in 0..100 {
            let t = pseudo_random_tensor(Valence::new(0, 3), seed);
            let slots = [Slot::Down(0), Slot::Down(1), Slot::Down(2)];
            let once = t.antisymmetrize(&slots).unwrap();
            let twice = once.antisymmetrize(&slots).unwrap();
            assert!(once.max_abs_diff(&twice).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn antisymmetrize_rejects_mixed_kinds() {
        let t = Tensor::identity();
        assert!(matches!(
            t.antisymmetrize(&[Slot::Up(0), Slot::Down(0)]),
            Err(TensorError::SlotKindMismatch)
        ));
    }

    #[test]
    fn levi_civita_normalization_in_adapted_chart() {
        // ε_abcd ε_efgh h^bf h^cg h^dh = 6 t_a t_e
        let eps = levi_civita(1.0);
        let h = Tensor::matrix(
            Valence::new(2, 0),
            &[
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
        )
        .unwrap();
        // X_a^f_cd = ε_abcd h^bf
        let x = eps.product_contract(&h, &[(Slot::Down(1), Slot::Up(0))]).unwrap();
        // layout ups [f], downs [a, c, d]; contract c with h^cg
        let x = x.product_contract(&h, &[(Slot::Down(1), Slot::Up(0))]).unwrap();
        // ups [f, g], downs [a, d]
        let x = x.product_contract(&h, &[(Slot::Down(1), Slot::Up(0))]).unwrap();
        // ups [f, g, h], downs [a]
        let y = x
            .product_contract(
                &eps,
                &[
                    (Slot::Up(0), Slot::Down(1)),
                    (Slot::Up(1), Slot::Down(2)),
                    (Slot::Up(2), Slot::Down(3)),
                ],
            )
            .unwrap();
        assert_eq!(y.valence(), Valence::new(0, 2));
        for a in 0..4 {
            for e in 0..4 {
                let expected = if a == 0 && e == 0 { 6.0 } else { 0.0 };
                assert_eq!(y.get(&[a, e]), expected);
            }
        }
    }
}
