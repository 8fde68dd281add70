//! LDPC channel coding at rates 1/2 and 3/4, plus an uncoded pass-through.
//!
//! Codes are drawn from the regular ensembles (3, 6) and (3, 12): every
//! variable sits in 3 checks, every check covers 6 or 12 variables. The
//! sampler rejects length-4 cycles where it can, which is what belief
//! propagation cares about most at these lengths. A systematic encoder is
//! derived once by Gauss-Jordan elimination over GF(2) (with column swaps
//! folded into the code), so codewords are `[info | parity]`.
//!
//! Decoding is normalized min-sum (factor 0.75 by default). LLR convention:
//! positive means bit 0. A decode only reports convergence when the hard
//! decisions satisfy every check *and* every bit has nonzero evidence, so a
//! blank input is never declared decoded.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SeededRng;
use crate::{Error, Result};

/// Built-in code rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdpcRate {
    Half,
    ThreeQuarter,
}

impl LdpcRate {
    /// (variable degree, check degree)
    fn degrees(self) -> (usize, usize) {
        match self {
            LdpcRate::Half => (3, 6),
            LdpcRate::ThreeQuarter => (3, 12),
        }
    }
}

/// A parity-check code with a precomputed systematic encoder.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    n: usize,
    k_info: usize,
    /// Variable indices per check, sorted.
    check_vars: Vec<Vec<u32>>,
    /// Check indices per variable, sorted.
    var_checks: Vec<Vec<u32>>,
    /// Dense parity generator: parity bit i = <gen row i, info bits> over GF(2).
    parity_gen: Vec<u64>,
    gen_words: usize,
    /// Min-sum normalization factor.
    pub norm_factor: f64,
}

impl LdpcCode {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_info(&self) -> usize {
        self.k_info
    }

    pub fn rate(&self) -> f64 {
        self.k_info as f64 / self.n as f64
    }

    pub fn check_vars(&self) -> &[Vec<u32>] {
        &self.check_vars
    }

    /// Column weight of variable `v`.
    pub fn var_degree(&self, v: usize) -> usize {
        self.var_checks[v].len()
    }

    /// True iff `word` satisfies every parity check.
    pub fn parity_ok(&self, word: &[u8]) -> bool {
        self.check_vars.iter().all(|vars| {
            vars.iter().fold(0u8, |acc, &v| acc ^ (word[v as usize] & 1)) == 0
        })
    }
}

const WORD_BITS: usize = 64;

fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

#[inline]
fn get_bit(row: &[u64], j: usize) -> bool {
    row[j / WORD_BITS] >> (j % WORD_BITS) & 1 == 1
}

#[inline]
fn flip_bit(row: &mut [u64], j: usize) {
    row[j / WORD_BITS] ^= 1 << (j % WORD_BITS);
}

/// Sample a (wc, wr)-regular bipartite graph on `n` variables and `m` checks
/// with 4-cycle rejection. Returns check -> variables adjacency.
fn sample_regular_graph(
    n: usize,
    m: usize,
    wc: usize,
    wr: usize,
    rng: &mut SeededRng,
) -> Option<Vec<Vec<u32>>> {
    let mut capacity = vec![wr; m];
    let mut check_vars: Vec<Vec<u32>> = vec![Vec::with_capacity(wr); m];
    // Pairs of checks already sharing a variable; a repeat is a 4-cycle.
    let mut pairs: BTreeSet<u64> = BTreeSet::new();
    let pair_key = |a: u32, b: u32| -> u64 {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        ((hi as u64) << 32) | lo as u64
    };

    for v in 0..n {
        let mut chosen: Option<Vec<u32>> = None;
        let mut fallback: Option<(usize, Vec<u32>)> = None;
        for _try in 0..60 {
            // Draw wc distinct checks, weighted toward the fullest capacity
            // so the tail of the assignment cannot starve.
            let mut avail: Vec<u32> = (0..m as u32).filter(|&c| capacity[c as usize] > 0).collect();
            if avail.len() < wc {
                return None; // dead end; caller restarts with a fresh seed
            }
            avail.sort_by(|&a, &b| capacity[b as usize].cmp(&capacity[a as usize]));
            let max_cap = capacity[avail[0] as usize];
            let top: Vec<u32> = avail
                .iter()
                .copied()
                .filter(|&c| capacity[c as usize] == max_cap)
                .collect();
            let mut cand: Vec<u32> = Vec::with_capacity(wc);
            if top.len() >= wc {
                let mut pool = top;
                rng.shuffle(&mut pool);
                cand.extend_from_slice(&pool[..wc]);
            } else {
                let mut pool = avail;
                rng.shuffle(&mut pool);
                pool.sort_by(|&a, &b| capacity[b as usize].cmp(&capacity[a as usize]));
                // stable under the shuffle: random among equal capacities
                cand.extend_from_slice(&pool[..wc]);
            }
            cand.sort_unstable();
            let mut collisions = 0usize;
            for i in 0..wc {
                for j in i + 1..wc {
                    if pairs.contains(&pair_key(cand[i], cand[j])) {
                        collisions += 1;
                    }
                }
            }
            if collisions == 0 {
                chosen = Some(cand);
                break;
            }
            match &fallback {
                Some((best, _)) if *best <= collisions => {}
                _ => fallback = Some((collisions, cand)),
            }
        }
        let cand = match chosen {
            Some(c) => c,
            // keep the least-cyclic candidate seen; "reduced", not "free"
            None => fallback.expect("at least one candidate was drawn").1,
        };
        for i in 0..wc {
            for j in i + 1..wc {
                pairs.insert(pair_key(cand[i], cand[j]));
            }
        }
        for &c in &cand {
            capacity[c as usize] -= 1;
            check_vars[c as usize].push(v as u32);
        }
    }
    if capacity.iter().any(|&c| c != 0) {
        return None;
    }
    Some(check_vars)
}

/// Gauss-Jordan over GF(2) bringing the last `m` columns to the identity,
/// swapping columns when necessary. Returns the column permutation
/// (new position -> original column) and the dense `A` blocks per row
/// (parity bit i = <A_i, info>).
fn systematize(check_vars: &[Vec<u32>], n: usize) -> Result<(Vec<usize>, Vec<u64>, usize)> {
    let m = check_vars.len();
    let k = n - m;
    let words = words_for(n);
    let mut dense: Vec<u64> = vec![0; m * words];
    for (i, vars) in check_vars.iter().enumerate() {
        for &v in vars {
            flip_bit(&mut dense[i * words..(i + 1) * words], v as usize);
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();

    let col_swap = |dense: &mut [u64], perm: &mut [usize], a: usize, b: usize| {
        if a == b {
            return;
        }
        for r in 0..m {
            let row = &mut dense[r * words..(r + 1) * words];
            let ba = get_bit(row, a);
            let bb = get_bit(row, b);
            if ba != bb {
                flip_bit(row, a);
                flip_bit(row, b);
            }
        }
        perm.swap(a, b);
    };

    for i in 0..m {
        let tc = k + i;
        // pivot search: target column first, then anything not yet locked
        let mut cand_cols: Vec<usize> = Vec::with_capacity(n - i);
        cand_cols.push(tc);
        cand_cols.extend(tc + 1..n);
        cand_cols.extend(0..k);
        let mut pivot: Option<(usize, usize)> = None;
        'outer: for &c in &cand_cols {
            for r in i..m {
                if get_bit(&dense[r * words..(r + 1) * words], c) {
                    pivot = Some((r, c));
                    break 'outer;
                }
            }
        }
        let Some((r, c)) = pivot else {
            return Err(Error::Construction(format!(
                "parity matrix rank deficient at pivot {i}"
            )));
        };
        col_swap(&mut dense, &mut perm, tc, c);
        if r != i {
            for w in 0..words {
                dense.swap(r * words + w, i * words + w);
            }
        }
        for r2 in 0..m {
            if r2 != i && get_bit(&dense[r2 * words..(r2 + 1) * words], tc) {
                for w in 0..words {
                    let v = dense[i * words + w];
                    dense[r2 * words + w] ^= v;
                }
            }
        }
    }

    // Extract the A blocks (first k columns of each reduced row).
    let gen_words = words_for(k);
    let mut parity_gen = vec![0u64; m * gen_words];
    for i in 0..m {
        let row = &dense[i * words..(i + 1) * words];
        let out = &mut parity_gen[i * gen_words..(i + 1) * gen_words];
        for j in 0..k {
            if get_bit(row, j) {
                flip_bit(out, j);
            }
        }
    }
    Ok((perm, parity_gen, gen_words))
}

fn finish_code(raw_check_vars: Vec<Vec<u32>>, n: usize) -> Result<LdpcCode> {
    let m = raw_check_vars.len();
    let (perm, parity_gen, gen_words) = systematize(&raw_check_vars, n)?;
    // inverse permutation: original column -> new position
    let mut inv = vec![0usize; n];
    for (new, &orig) in perm.iter().enumerate() {
        inv[orig] = new;
    }
    let mut check_vars: Vec<Vec<u32>> = raw_check_vars
        .iter()
        .map(|vars| {
            let mut v: Vec<u32> = vars.iter().map(|&x| inv[x as usize] as u32).collect();
            v.sort_unstable();
            v
        })
        .collect();
    check_vars.iter_mut().for_each(|v| v.dedup());
    let mut var_checks: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (ci, vars) in check_vars.iter().enumerate() {
        for &v in vars {
            var_checks[v as usize].push(ci as u32);
        }
    }
    Ok(LdpcCode {
        n,
        k_info: n - m,
        check_vars,
        var_checks,
        parity_gen,
        gen_words,
        norm_factor: 0.75,
    })
}

/// Build a regular LDPC code. Deterministic given `(rate, n, seed)`. A rank
/// deficiency surfaces as [`Error::Construction`]; retry with another seed.
pub fn build_ldpc(rate: LdpcRate, n: usize, seed: u64) -> Result<LdpcCode> {
    if !n.is_multiple_of(8) || n < 128 {
        return Err(Error::InvalidInput(format!(
            "codeword length must be >= 128 and divisible by 8, got {n}"
        )));
    }
    let (wc, wr) = rate.degrees();
    if !(n * wc).is_multiple_of(wr) {
        return Err(Error::InvalidInput(format!(
            "({wc}, {wr}) regularity needs {wr} | {n} * {wc}"
        )));
    }
    let m = n * wc / wr;
    let base = SeededRng::new(seed);
    for attempt in 0..50u64 {
        let mut rng = base.derive(attempt);
        if let Some(graph) = sample_regular_graph(n, m, wc, wr, &mut rng) {
            return finish_code(graph, n);
        }
    }
    Err(Error::Construction(
        "regular graph sampling kept dead-ending; change the seed".into(),
    ))
}

/// Systematic encode: `[info | parity]` with `parity = A info`.
pub fn encode(code: &LdpcCode, info: &[u8]) -> Result<Vec<u8>> {
    if info.len() != code.k_info {
        return Err(Error::Dimension(format!(
            "expected {} info bits, got {}",
            code.k_info,
            info.len()
        )));
    }
    let gw = code.gen_words;
    let mut info_words = vec![0u64; gw];
    for (j, &b) in info.iter().enumerate() {
        if b & 1 == 1 {
            flip_bit(&mut info_words, j);
        }
    }
    let m = code.n - code.k_info;
    let mut out = Vec::with_capacity(code.n);
    out.extend(info.iter().map(|&b| b & 1));
    for i in 0..m {
        let row = &code.parity_gen[i * gw..(i + 1) * gw];
        let acc = row
            .iter()
            .zip(info_words.iter())
            .fold(0u64, |a, (x, y)| a ^ (x & y));
        out.push((acc.count_ones() & 1) as u8);
    }
    Ok(out)
}

/// Normalized min-sum decode. Returns the info-bit estimate and whether the
/// decisions satisfied all checks (with nonzero evidence on every bit) at
/// some iteration.
pub fn decode(code: &LdpcCode, llrs: &[f64], max_iters: usize) -> Result<(Vec<u8>, bool)> {
    if llrs.len() != code.n {
        return Err(Error::Dimension(format!(
            "expected {} LLRs, got {}",
            code.n,
            llrs.len()
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidInput("max_iters must be >= 1".into()));
    }
    let m = code.check_vars.len();
    // edge storage, check-major
    let offsets: Vec<usize> = {
        let mut o = Vec::with_capacity(m + 1);
        let mut acc = 0;
        o.push(0);
        for vars in &code.check_vars {
            acc += vars.len();
            o.push(acc);
        }
        o
    };
    let n_edges = offsets[m];
    let mut v2c = vec![0.0f64; n_edges];
    let mut c2v = vec![0.0f64; n_edges];
    for ci in 0..m {
        for (e, &v) in code.check_vars[ci].iter().enumerate() {
            v2c[offsets[ci] + e] = llrs[v as usize];
        }
    }
    let mut total: Vec<f64> = llrs.to_vec();
    let hard = |total: &[f64]| -> Vec<u8> { total.iter().map(|&t| (t < 0.0) as u8).collect() };
    let decided = |total: &[f64]| -> bool {
        total.iter().all(|&t| t != 0.0) && code.parity_ok(&hard(total))
    };

    let mut converged = decided(&total);
    if !converged {
        for _iter in 0..max_iters {
            // check node update: two-minimum trick
            for ci in 0..m {
                let span = offsets[ci]..offsets[ci + 1];
                let mut min1 = f64::INFINITY;
                let mut min2 = f64::INFINITY;
                let mut min_at = 0usize;
                let mut sign = 1.0f64;
                for (idx, e) in span.clone().enumerate() {
                    let x = v2c[e];
                    if x < 0.0 {
                        sign = -sign;
                    }
                    let a = x.abs();
                    if a < min1 {
                        min2 = min1;
                        min1 = a;
                        min_at = idx;
                    } else if a < min2 {
                        min2 = a;
                    }
                }
                for (idx, e) in span.enumerate() {
                    let x = v2c[e];
                    let s = if x < 0.0 { -sign } else { sign };
                    let mag = if idx == min_at { min2 } else { min1 };
                    c2v[e] = code.norm_factor * s * mag;
                }
            }
            // variable node update
            for t in total.iter_mut() {
                *t = 0.0;
            }
            for ci in 0..m {
                for (e, &v) in code.check_vars[ci].iter().enumerate() {
                    total[v as usize] += c2v[offsets[ci] + e];
                }
            }
            for (v, t) in total.iter_mut().enumerate() {
                *t += llrs[v];
            }
            for ci in 0..m {
                for (e, &v) in code.check_vars[ci].iter().enumerate() {
                    v2c[offsets[ci] + e] = total[v as usize] - c2v[offsets[ci] + e];
                }
            }
            if decided(&total) {
                converged = true;
                break;
            }
        }
    }
    let bits = hard(&total);
    Ok((bits[..code.k_info].to_vec(), converged))
}

/// A channel code: LDPC or the uncoded pass-through.
#[derive(Debug, Clone)]
pub enum Code {
    Ldpc(LdpcCode),
    Passthrough(usize),
}

impl Code {
    pub fn passthrough(n: usize) -> Self {
        Code::Passthrough(n)
    }

    pub fn n(&self) -> usize {
        match self {
            Code::Ldpc(c) => c.n(),
            Code::Passthrough(n) => *n,
        }
    }

    pub fn k_info(&self) -> usize {
        match self {
            Code::Ldpc(c) => c.k_info(),
            Code::Passthrough(n) => *n,
        }
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        match self {
            Code::Ldpc(c) => encode(c, info),
            Code::Passthrough(n) => {
                if info.len() != *n {
                    return Err(Error::Dimension(format!(
                        "expected {} bits, got {}",
                        n,
                        info.len()
                    )));
                }
                Ok(info.iter().map(|&b| b & 1).collect())
            }
        }
    }

    pub fn decode(&self, llrs: &[f64], max_iters: usize) -> Result<(Vec<u8>, bool)> {
        match self {
            Code::Ldpc(c) => decode(c, llrs, max_iters),
            Code::Passthrough(n) => {
                if llrs.len() != *n {
                    return Err(Error::Dimension(format!(
                        "expected {} LLRs, got {}",
                        n,
                        llrs.len()
                    )));
                }
                Ok((llrs.iter().map(|&l| (l < 0.0) as u8).collect(), true))
            }
        }
    }
}

/// Parse a parity-check matrix in alist text form and derive the systematic
/// encoder for it. Variable/check counts are on the first line; the per-node
/// adjacency lists are 1-based with optional zero padding.
pub fn from_alist(text: &str) -> Result<LdpcCode> {
    let mut nums = text
        .split_whitespace()
        .map(|t| t.parse::<i64>().map_err(|_| Error::InvalidInput(format!("bad alist token: {t}"))));
    let mut next = |what: &str| -> Result<i64> {
        nums.next()
            .unwrap_or_else(|| Err(Error::InvalidInput(format!("alist truncated at {what}"))))
    };
    let n = next("n")? as usize;
    let m = next("m")? as usize;
    if n == 0 || m == 0 || m >= n {
        return Err(Error::InvalidInput("alist needs 0 < m < n".into()));
    }
    let max_col = next("max col weight")? as usize;
    let max_row = next("max row weight")? as usize;
    let col_w: Vec<usize> = (0..n).map(|_| next("col weight").map(|x| x as usize)).collect::<Result<_>>()?;
    let row_w: Vec<usize> = (0..m).map(|_| next("row weight").map(|x| x as usize)).collect::<Result<_>>()?;
    if col_w.iter().any(|&w| w == 0 || w > max_col) || row_w.iter().any(|&w| w == 0 || w > max_row) {
        return Err(Error::InvalidInput("alist node weight outside declared range".into()));
    }
    // Zero-padded adjacency lists: max_col entries per variable line.
    let mut check_vars: Vec<Vec<u32>> = vec![Vec::new(); m];
    for (v, &w) in col_w.iter().enumerate() {
        let mut seen = 0usize;
        for _ in 0..max_col {
            let entry = next("col entry")?;
            if entry == 0 {
                continue;
            }
            if entry < 1 || entry as usize > m {
                return Err(Error::InvalidInput(format!("check index {entry} out of range")));
            }
            check_vars[entry as usize - 1].push(v as u32);
            seen += 1;
        }
        if seen != w {
            return Err(Error::InvalidInput(format!(
                "variable {v} declares weight {w} but lists {seen} checks"
            )));
        }
    }
    // Row lists are redundant with the column lists; the code is built from
    // the columns alone.
    for vars in check_vars.iter_mut() {
        vars.sort_unstable();
        vars.dedup();
    }
    if check_vars.iter().any(|v| v.is_empty()) {
        return Err(Error::InvalidInput("alist row with no entries".into()));
    }
    finish_code(check_vars, n)
}

/// Serialize the parity structure to alist text (columns re-derived from the
/// stored check adjacency).
pub fn to_alist(code: &LdpcCode) -> String {
    use core::fmt::Write;
    let m = code.check_vars.len();
    let n = code.n;
    let mut var_checks: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (ci, vars) in code.check_vars.iter().enumerate() {
        for &v in vars {
            var_checks[v as usize].push(ci as u32 + 1);
        }
    }
    let max_col = var_checks.iter().map(Vec::len).max().unwrap_or(0);
    let max_row = code.check_vars.iter().map(Vec::len).max().unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "{n} {m}");
    let _ = writeln!(s, "{max_col} {max_row}");
    let cols: Vec<String> = var_checks.iter().map(|c| format!("{}", c.len())).collect();
    let _ = writeln!(s, "{}", cols.join(" "));
    let rows: Vec<String> = code.check_vars.iter().map(|r| format!("{}", r.len())).collect();
    let _ = writeln!(s, "{}", rows.join(" "));
    for c in &var_checks {
        let mut items: Vec<String> = c.iter().map(|x| format!("{x}")).collect();
        while items.len() < max_col {
            items.push("0".into());
        }
        let _ = writeln!(s, "{}", items.join(" "));
    }
    for r in &code.check_vars {
        let mut items: Vec<String> = r.iter().map(|x| format!("{}", x + 1)).collect();
        while items.len() < max_row {
            items.push("0".into());
        }
        let _ = writeln!(s, "{}", items.join(" "));
    }
    s
}
