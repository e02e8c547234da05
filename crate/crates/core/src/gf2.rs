//! Packed GF(2) vectors and a small dense eliminator.

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub(crate) fn zeros(len: usize) -> Self {
        BitVec {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    #[inline]
    pub(crate) fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, v: bool) {
        let mask = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub(crate) fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub(crate) fn xor_assign(&mut self, other: &BitVec) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub(crate) fn dot(&self, other: &BitVec) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
            & 1
            == 1
    }

    #[cfg(test)]
    pub(crate) fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
}

/// Row-reduces `rows` (each of width `ncols`) in place over the first
/// `ncols` columns and returns the pivot column of every row that got one, in
/// row order. Rows past the returned length are zero on those columns.
pub(crate) fn row_reduce(rows: &mut [BitVec], ncols: usize) -> Vec<usize> {
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r == rows.len() {
            break;
        }
        let Some(p) = (r..rows.len()).find(|&i| rows[i].get(c)) else {
            continue;
        };
        rows.swap(r, p);
        let pivot_row = rows[r].clone();
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && row.get(c) {
                row.xor_assign(&pivot_row);
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_reduce_finds_rank() {
        let mut rows: Vec<BitVec> = [0b011u8, 0b110, 0b101]
            .iter()
            .map(|&m| {
                let mut v = BitVec::zeros(3);
                for i in 0..3 {
                    v.set(i, (m >> i) & 1 == 1);
                }
                v
            })
            .collect();
        let piv = row_reduce(&mut rows, 3);
        assert_eq!(piv.len(), 2);
        assert!(rows[2].is_zero());
    }

    #[test]
    fn dot_and_flip() {
        let mut a = BitVec::zeros(130);
        let mut b = BitVec::zeros(130);
        a.set(3, true);
        a.set(129, true);
        b.set(129, true);
        assert!(a.dot(&b));
        b.flip(3);
        assert!(!a.dot(&b));
    }
}
