//! Vandermonde-style `[n, k]` MDS code over GF(2^8).
//!
//! Column `j` of the `k x n` generator holds `(a_j^0, ..., a_j^(k-1))` where
//! `a_j` is the field element with byte value `j`. Distinct nodes make every
//! `k`-column submatrix invertible. Coded indices are 0-based.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gf256::{addmul_slice, Gf256};

/// A fixed-length run of field symbols. Every packet in a session has the same length.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Packet(pub Vec<u8>);

impl Packet {
    pub fn zeroed(len: usize) -> Self {
        Packet(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn xor_assign(&mut self, other: &Packet) {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a ^= b);
    }
}

impl std::fmt::Debug for Packet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Packet[{}](", self.0.len())?;
        for b in self.0.iter().take(8) {
            write!(f, "{b:02x}")?;
        }
        if self.0.len() > 8 {
            write!(f, "..")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorMatrix {
    k_info: usize,
    n_total: usize,
    /// Row-major `k_info x n_total`.
    entries: Vec<Gf256>,
}

impl GeneratorMatrix {
    pub fn k_info(&self) -> usize {
        self.k_info
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Gf256 {
        self.entries[row * self.n_total + col]
    }

    /// The `k x k` submatrix formed by the given columns.
    pub fn submatrix(&self, cols: &[usize]) -> Vec<Vec<Gf256>> {
        (0..self.k_info)
            .map(|r| cols.iter().map(|&c| self.get(r, c)).collect())
            .collect()
    }
}

pub fn mds_generator(n_total: usize, k_info: usize) -> Result<GeneratorMatrix> {
    if k_info == 0 || k_info > n_total || n_total > 256 {
        return Err(Error::param(format!(
            "MDS code needs 1 <= k <= n <= 256, got n = {n_total}, k = {k_info}"
        )));
    }
    let mut entries = Vec::with_capacity(k_info * n_total);
    for row in 0..k_info {
        for col in 0..n_total {
            entries.push(Gf256(col as u8).pow(row as u32));
        }
    }
    Ok(GeneratorMatrix {
        k_info,
        n_total,
        entries,
    })
}

fn check_lengths(packets: &[&Packet]) -> Result<usize> {
    let len = packets.first().map_or(0, |p| p.len());
    if let Some(bad) = packets.iter().position(|p| p.len() != len) {
        return Err(Error::Shape(format!(
            "packet {bad} has length {}, expected {len}",
            packets[bad].len()
        )));
    }
    Ok(len)
}

/// Coded packet `j` is `sum_i info[i] * g[i][j]`.
pub fn mds_encode(g: &GeneratorMatrix, info: &[Packet]) -> Result<Vec<Packet>> {
    if info.len() != g.k_info {
        return Err(Error::Shape(format!(
            "expected {} information packets, got {}",
            g.k_info,
            info.len()
        )));
    }
    let len = check_lengths(&info.iter().collect::<Vec<_>>())?;
    Ok((0..g.n_total)
        .map(|col| {
            let mut out = Packet::zeroed(len);
            for (row, p) in info.iter().enumerate() {
                addmul_slice(&mut out.0, &p.0, g.get(row, col));
            }
            out
        })
        .collect())
}

/// Recover the information packets from any `k_info` distinct shares.
///
/// All provided shares are checked against the re-encoded solution, so a
/// tampered share surfaces as [`Error::Corruption`].
pub fn mds_decode(g: &GeneratorMatrix, shares: &[(usize, Packet)]) -> Result<Vec<Packet>> {
    let mut distinct: BTreeMap<usize, &Packet> = BTreeMap::new();
    for (idx, p) in shares {
        if *idx >= g.n_total {
            return Err(Error::param(format!(
                "coded index {idx} out of range for n = {}",
                g.n_total
            )));
        }
        if let Some(prev) = distinct.insert(*idx, p) {
            if prev != p {
                return Err(Error::Corruption { index: *idx });
            }
        }
    }
    if distinct.len() < g.k_info {
        return Err(Error::InsufficientShares {
            needed: g.k_info,
            got: distinct.len(),
        });
    }
    let len = check_lengths(&distinct.values().copied().collect::<Vec<_>>())?;

    let k = g.k_info;
    let chosen: Vec<usize> = distinct.keys().copied().take(k).collect();
    // Row r of the system: sum_i info[i] * g[i][chosen[r]] = share[chosen[r]].
    let mut matrix: Vec<Vec<Gf256>> = chosen
        .iter()
        .map(|&c| (0..k).map(|i| g.get(i, c)).collect())
        .collect();
    let mut rhs: Vec<Vec<u8>> = chosen.iter().map(|c| distinct[c].0.clone()).collect();

    for col in 0..k {
        let pivot = (col..k)
            .find(|&r| !matrix[r][col].is_zero())
            .ok_or_else(|| Error::Domain("singular generator submatrix".into()))?;
        matrix.swap(col, pivot);
        rhs.swap(col, pivot);
        let inv = matrix[col][col].inv()?;
        for x in matrix[col].iter_mut() {
            *x *= inv;
        }
        let mut scaled = vec![0u8; len];
        addmul_slice(&mut scaled, &rhs[col], inv);
        rhs[col] = scaled;
        let pivot_row = matrix[col].clone();
        let pivot_rhs = rhs[col].clone();
        for r in 0..k {
            if r == col || matrix[r][col].is_zero() {
                continue;
            }
            let factor = matrix[r][col];
            for (x, p) in matrix[r].iter_mut().zip(&pivot_row) {
                *x += factor * *p;
            }
            addmul_slice(&mut rhs[r], &pivot_rhs, factor);
        }
    }

    let info: Vec<Packet> = rhs.into_iter().map(Packet).collect();
    let recoded = mds_encode(g, &info)?;
    for (idx, p) in &distinct {
        if &recoded[*idx] != *p {
            return Err(Error::Corruption { index: *idx });
        }
    }
    Ok(info)
}
