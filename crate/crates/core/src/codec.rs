//! Versioned binary encoding of a [`VariationalState`].
//!
//! Layout (all integers u64 and floats f64, little-endian):
//!
//! ```text
//! magic   b"FACTMST\0"
//! version u64 (currently 1)
//! K, N, n_simple, n_structured
//! per simple view:      D, name
//! per structured view:  L, G, link_enabled (0/1), n_offsets, offsets..., name
//! blocks: each a length followed by that many f64 values
//! ```
//!
//! Names are a length followed by UTF-8 bytes. Matrices are stored column
//! major. Block order: z mean, z var; per simple view gamma, slab mean, slab
//! var, spike var, alpha (shape, rate pairs), theta (a, b pairs), tau (shape,
//! rate pairs); per structured view wbar mean, wbar var, alphabar pairs,
//! link mean, link cov, eta mean, eta var, zeta, phi, beta, mu0, sigma0.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::state::{BetaParams, FactorState, GammaParams, SimpleViewState, StructuredViewState, VariationalState};

pub const MAGIC: &[u8; 8] = b"FACTMST\0";
pub const VERSION: u64 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn name(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn block<'a>(&mut self, values: impl ExactSizeIterator<Item = &'a f64>) {
        self.u64(values.len() as u64);
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn pairs(&mut self, pairs: impl Iterator<Item = (f64, f64)>) {
        let flat: Vec<f64> = pairs.flat_map(|(a, b)| [a, b]).collect();
        self.block(flat.iter());
    }
}

/// Encodes `state` with one name per view (simple views first).
pub fn encode_state(state: &VariationalState, view_names: &[String]) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u64(VERSION);
    w.u64(state.n_factors() as u64);
    w.u64(state.n_samples() as u64);
    w.u64(state.simple.len() as u64);
    w.u64(state.structured.len() as u64);
    let name = |i: usize| view_names.get(i).map_or("", String::as_str);
    for (m, v) in state.simple.iter().enumerate() {
        w.u64(v.n_features() as u64);
        w.name(name(m));
    }
    for (s, v) in state.structured.iter().enumerate() {
        w.u64(v.n_topics() as u64);
        w.u64(v.vocab_size() as u64);
        w.u64(v.link_enabled as u64);
        w.u64(v.sentence_offsets.len() as u64);
        for &o in &v.sentence_offsets {
            w.u64(o as u64);
        }
        w.name(name(state.simple.len() + s));
    }
    w.block(state.z.mean.iter());
    w.block(state.z.var.iter());
    for v in &state.simple {
        w.block(v.gamma.iter());
        w.block(v.slab_mean.iter());
        w.block(v.slab_var.iter());
        w.block(v.spike_var.iter());
        w.pairs(v.alpha.iter().map(|g| (g.shape, g.rate)));
        w.pairs(v.theta.iter().map(|b| (b.a, b.b)));
        w.pairs(v.tau.iter().map(|g| (g.shape, g.rate)));
    }
    for v in &state.structured {
        w.block(v.wbar_mean.iter());
        w.block(v.wbar_var.iter());
        w.pairs(v.alphabar.iter().map(|g| (g.shape, g.rate)));
        w.block(v.mu_link_mean.iter());
        w.block(v.mu_link_cov.iter());
        w.block(v.eta_mean.iter());
        w.block(v.eta_var.iter());
        w.block(v.zeta.iter());
        w.block(v.phi.iter());
        w.block(v.beta.iter());
        w.block(v.mu0.iter());
        w.block(v.sigma0.iter());
    }
    w.0
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Decode(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Decode("size overflows usize".into()))
    }

    fn name(&mut self) -> Result<String> {
        let len = self.usize()?;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Decode("view name is not UTF-8".into()))
    }

    fn block(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let len = self.usize()?;
        if len != expected {
            return Err(Error::Decode(format!("{what}: expected {expected} values, found {len}")));
        }
        let raw = self.take(len.checked_mul(8).ok_or_else(|| Error::Decode("block too large".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_vec(rows, cols, self.block(rows * cols, what)?))
    }

    fn vector(&mut self, len: usize, what: &str) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.block(len, what)?))
    }

    fn pairs(&mut self, len: usize, what: &str) -> Result<Vec<(f64, f64)>> {
        Ok(self.block(2 * len, what)?.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }
}

/// Inverse of [`encode_state`]; returns the state and the view names.
pub fn decode_state(bytes: &[u8]) -> Result<(VariationalState, Vec<String>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Decode("bad magic header".into()));
    }
    let version = r.u64()?;
    if version != VERSION {
        return Err(Error::Decode(format!("unsupported version {version}")));
    }
    let k = r.usize()?;
    let n = r.usize()?;
    let n_simple = r.usize()?;
    let n_structured = r.usize()?;
    let mut names = Vec::new();
    let mut simple_dims = Vec::new();
    for _ in 0..n_simple {
        simple_dims.push(r.usize()?);
        names.push(r.name()?);
    }
    let mut structured_dims = Vec::new();
    for _ in 0..n_structured {
        let l = r.usize()?;
        let g = r.usize()?;
        let link = r.u64()? != 0;
        let n_off = r.usize()?;
        let offsets = (0..n_off).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        if offsets.len() != n + 1 {
            return Err(Error::Decode(format!("expected {} sentence offsets, found {}", n + 1, offsets.len())));
        }
        structured_dims.push((l, g, link, offsets));
        names.push(r.name()?);
    }
    let z = FactorState {
        mean: r.matrix(n, k, "z mean")?,
        var: r.matrix(n, k, "z var")?,
    };
    let mut simple = Vec::new();
    for d in simple_dims {
        simple.push(SimpleViewState {
            gamma: r.matrix(d, k, "gamma")?,
            slab_mean: r.matrix(d, k, "slab mean")?,
            slab_var: r.matrix(d, k, "slab var")?,
            spike_var: r.vector(k, "spike var")?,
            alpha: r.pairs(k, "alpha")?.into_iter().map(|(a, b)| GammaParams::new(a, b)).collect(),
            theta: r.pairs(k, "theta")?.into_iter().map(|(a, b)| BetaParams::new(a, b)).collect(),
            tau: r.pairs(d, "tau")?.into_iter().map(|(a, b)| GammaParams::new(a, b)).collect(),
        });
    }
    let mut structured = Vec::new();
    for (l, g, link_enabled, sentence_offsets) in structured_dims {
        let total = *sentence_offsets.last().expect("n + 1 >= 1 offsets");
        structured.push(StructuredViewState {
            link_enabled,
            wbar_mean: r.matrix(l, k, "wbar mean")?,
            wbar_var: r.matrix(l, k, "wbar var")?,
            alphabar: r.pairs(k, "alphabar")?.into_iter().map(|(a, b)| GammaParams::new(a, b)).collect(),
            mu_link_mean: r.matrix(n, l, "link mean")?,
            mu_link_cov: r.matrix(l, l, "link cov")?,
            eta_mean: r.matrix(n, l, "eta mean")?,
            eta_var: r.matrix(n, l, "eta var")?,
            zeta: r.vector(n, "zeta")?,
            phi: r.matrix(l, total, "phi")?,
            sentence_offsets,
            beta: r.matrix(l, g, "beta")?,
            mu0: r.vector(l, "mu0")?,
            sigma0: r.matrix(l, l, "sigma0")?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Decode(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((VariationalState { z, simple, structured }, names))
}
