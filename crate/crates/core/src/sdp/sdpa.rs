//! Sparse SDPA text format.
//!
//! Layout written by [`write_sdpa`]:
//!
//! ```text
//! "comment
//! m
//! nblocks
//! s_1 s_2 ... s_k        (negative size = diagonal block)
//! b_1 b_2 ... b_m
//! matno blkno i j value  (one per line, 1-based, i <= j)
//! ```
//!
//! Entry lines are sorted by `(matno, blkno, i, j)`. Matrix 0 is `F0 = -C`
//! and matrix `i` is `A_i`, so the SDPA dual `max <F0, Y>` is the negated
//! objective of [`SdpProblem`]. Free variables are split as `x = x⁺ - x⁻`
//! and stored in one trailing diagonal block of size `2 n_free`. Values are
//! printed with the shortest representation that parses back bit-exactly.
//!
//! [`read_sdpa`] turns every diagonal block entry into its own 1x1 block.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Constraint, SdpProblem, SymEntry};
use crate::error::{Error, Result};

pub fn write_sdpa(prob: &SdpProblem) -> String {
    let nf = prob.n_free;
    let mut sizes: Vec<i64> = prob.block_sizes.iter().map(|&s| s as i64).collect();
    if nf > 0 {
        sizes.push(-2 * nf as i64);
    }
    let lp = prob.block_sizes.len();

    // (matno, blkno, i, j) -> value, all 1-based
    let mut entries: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
    let mut put = |key: (usize, usize, usize, usize), v: f64| {
        *entries.entry(key).or_insert(0.0) += v;
    };
    for e in &prob.objective {
        put((0, e.block + 1, e.row + 1, e.col + 1), -e.value);
    }
    for (k, &c) in prob.objective_free.iter().enumerate() {
        put((0, lp + 1, k + 1, k + 1), -c);
        put((0, lp + 1, nf + k + 1, nf + k + 1), c);
    }
    for (i, con) in prob.constraints.iter().enumerate() {
        for e in &con.entries {
            put((i + 1, e.block + 1, e.row + 1, e.col + 1), e.value);
        }
        for &(k, v) in &con.free {
            put((i + 1, lp + 1, k + 1, k + 1), v);
            put((i + 1, lp + 1, nf + k + 1, nf + k + 1), -v);
        }
    }

    let mut out = String::new();
    out.push_str("\"reachcert sdp\n");
    let _ = writeln!(out, "{}", prob.n_constraints());
    let _ = writeln!(out, "{}", sizes.len());
    let sizes_line: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "{}", sizes_line.join(" "));
    let b_line: Vec<String> = prob.constraints.iter().map(|c| format!("{:e}", c.rhs)).collect();
    let _ = writeln!(out, "{}", b_line.join(" "));
    for ((mat, blk, i, j), v) in entries {
        if v != 0.0 {
            let _ = writeln!(out, "{mat} {blk} {i} {j} {v:e}");
        }
    }
    out
}

fn sdpa_err(line: usize, message: impl Into<String>) -> Error {
    Error::Sdpa { line, message: message.into() }
}

pub fn read_sdpa(text: &str) -> Result<SdpProblem> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));

    // header tokens may be spread over lines and decorated with {},()
    let mut header: Vec<(usize, String)> = Vec::new();
    let mut need = 2usize;
    let mut stage = 0;
    let mut m = 0usize;
    let mut sizes: Vec<i64> = Vec::new();
    let mut last_line = 0;
    while stage < 3 {
        while header.len() < need {
            let (ln, l) = lines.next().ok_or_else(|| sdpa_err(last_line, "unexpected end of header"))?;
            last_line = ln;
            let cleaned: String = l
                .chars()
                .map(|c| if "{}(),".contains(c) { ' ' } else { c })
                .collect();
            // trailing text after the numbers on the m/nblocks lines is a comment
            let toks: Vec<&str> = cleaned.split_whitespace().collect();
            let toks = if header.len() < 2 { &toks[..1.min(toks.len())] } else { &toks[..] };
            header.extend(toks.iter().map(|t| (ln, t.to_string())));
        }
        match stage {
            0 => {
                m = parse_tok(&header[0])?;
                let nb: usize = parse_tok(&header[1])?;
                need = 2 + nb;
            }
            1 => {
                for t in &header[2..need] {
                    let s: i64 = parse_tok(t)?;
                    if s == 0 {
                        return Err(sdpa_err(t.0, "block size 0"));
                    }
                    sizes.push(s);
                }
                need += m;
            }
            _ => {}
        }
        stage += 1;
    }
    let b: Vec<f64> = header[2 + sizes.len()..need]
        .iter()
        .map(parse_tok)
        .collect::<Result<_>>()?;
    if header.len() > need {
        return Err(sdpa_err(header[need].0, "unexpected token after the objective vector"));
    }

    // Block layout: PSD blocks keep their index; diagonal blocks expand.
    let mut first_block = Vec::with_capacity(sizes.len());
    let mut block_sizes = Vec::new();
    for &s in &sizes {
        first_block.push(block_sizes.len());
        if s > 0 {
            block_sizes.push(s as usize);
        } else {
            block_sizes.extend(std::iter::repeat(1).take((-s) as usize));
        }
    }
    let mut prob = SdpProblem::new(block_sizes, 0);
    prob.constraints = b
        .iter()
        .map(|&rhs| Constraint { entries: Vec::new(), free: Vec::new(), rhs })
        .collect();

    for (ln, l) in lines {
        let cleaned: String = l.chars().map(|c| if "{}(),".contains(c) { ' ' } else { c }).collect();
        let toks: Vec<&str> = cleaned.split_whitespace().collect();
        if toks.len() < 5 {
            return Err(sdpa_err(ln, "expected `matno blkno i j value`"));
        }
        let own = |k: usize| (ln, toks[k].to_string());
        let mat: usize = parse_tok(&own(0))?;
        let blk: usize = parse_tok(&own(1))?;
        let i: usize = parse_tok(&own(2))?;
        let j: usize = parse_tok(&own(3))?;
        let v: f64 = parse_tok(&own(4))?;
        if mat > m {
            return Err(sdpa_err(ln, format!("matrix index {mat} exceeds m = {m}")));
        }
        if blk == 0 || blk > sizes.len() {
            return Err(sdpa_err(ln, format!("block index {blk} out of range")));
        }
        let size = sizes[blk - 1];
        let dim = size.unsigned_abs() as usize;
        if i == 0 || j == 0 || i > dim || j > dim {
            return Err(sdpa_err(ln, format!("index ({i}, {j}) outside block {blk}")));
        }
        let entry = if size > 0 {
            SymEntry::new(first_block[blk - 1], i - 1, j - 1, v)
        } else {
            if i != j {
                return Err(sdpa_err(ln, "off-diagonal entry in a diagonal block"));
            }
            SymEntry::new(first_block[blk - 1] + i - 1, 0, 0, v)
        };
        if mat == 0 {
            prob.objective.push(SymEntry { value: -entry.value, ..entry });
        } else {
            prob.constraints[mat - 1].entries.push(entry);
        }
    }
    prob.validate()?;
    Ok(prob)
}

fn parse_tok<T: std::str::FromStr>(tok: &(usize, String)) -> Result<T> {
    // Fortran-style exponents appear in some SDPA files.
    let t = tok.1.replace(['d', 'D'], "e");
    t.parse()
        .map_err(|_| sdpa_err(tok.0, format!("cannot parse `{}`", tok.1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SdpProblem {
        let mut p = SdpProblem::new(vec![2], 1);
        p.objective = vec![SymEntry::new(0, 0, 1, -1.0)];
        p.objective_free = vec![0.5];
        p.add_constraint(Constraint { entries: vec![SymEntry::new(0, 0, 0, 1.0)], free: vec![], rhs: 1.0 });
        p.add_constraint(Constraint { entries: vec![SymEntry::new(0, 1, 1, 1.0)], free: vec![(0, 1.0)], rhs: 0.1 });
        p
    }

    #[test]
    fn written_layout() {
        let text = write_sdpa(&tiny());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "2");
        assert_eq!(lines[2], "2");
        assert_eq!(lines[3], "2 -2");
        assert_eq!(lines[4], "1e0 1e-1");
        assert_eq!(lines[5], "0 1 1 2 1e0");
        assert_eq!(lines[6], "0 2 1 1 -5e-1");
        assert_eq!(lines[7], "0 2 2 2 5e-1");
        assert_eq!(lines.len(), 12);
    }

    #[test]
    fn read_expands_diagonal_blocks() {
        let p = read_sdpa(&write_sdpa(&tiny())).unwrap();
        assert_eq!(p.block_sizes, vec![2, 1, 1]);
        assert_eq!(p.n_constraints(), 2);
        assert_eq!(p.constraints[1].entries.len(), 3);
        assert_eq!(p.objective[0], SymEntry::new(0, 0, 1, -1.0));
        // the split free variable is an objective of +0.5 x⁺ - 0.5 x⁻
        assert!(p.objective.contains(&SymEntry::new(1, 0, 0, 0.5)));
    }

    #[test]
    fn decorated_header_and_comments() {
        let text = "* comment\n\"title\n1 = mDIM\n1 = nBLOCK\n{2}\n{1.0}\n0 1 1 2 -1.0\n1 1 1 1 1\n1 1 2 2 1\n";
        let p = read_sdpa(text).unwrap();
        assert_eq!(p.block_sizes, vec![2]);
        assert_eq!(p.constraints[0].entries.len(), 2);
        assert_eq!(p.objective, vec![SymEntry::new(0, 0, 1, 1.0)]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "1\n1\n2\n1.0\n0 1 3 3 1.0\n";
        match read_sdpa(text) {
            Err(Error::Sdpa { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_sdpa("1\n1\n2\n"), Err(Error::Sdpa { .. })));
    }
}
