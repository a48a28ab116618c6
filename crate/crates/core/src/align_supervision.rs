//! Hard word alignments and the soft attention supervision built from them.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Discrete links `(source, target)`, 0-based, eol positions excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardAlignment {
    m: usize,
    n: usize,
    links: BTreeSet<(usize, usize)>,
}

/// Which side comes first in an `i-j` token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PharaohOrder {
    #[default]
    SourceTarget,
    TargetSource,
}

impl HardAlignment {
    pub fn new(m: usize, n: usize, links: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let links: BTreeSet<_> = links.into_iter().collect();
        if let Some(&(i, j)) = links.iter().find(|&&(i, j)| i >= m || j >= n) {
            return Err(Error::Data(format!(
                "link {i}-{j} outside a {m}-word source / {n}-word target"
            )));
        }
        Ok(HardAlignment { m, n, links })
    }

    pub fn empty(m: usize, n: usize) -> Self {
        HardAlignment {
            m,
            n,
            links: BTreeSet::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Pharaoh text, links in ascending (source, target) order.
    pub fn to_pharaoh(&self) -> String {
        let mut out = String::new();
        for (k, (i, j)) in self.links.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{i}-{j}");
        }
        out
    }
}

/// Parses one Pharaoh line of `i-j` links (source `i`, target `j`).
pub fn parse_pharaoh(line: &str, m: usize, n: usize) -> Result<HardAlignment> {
    parse_pharaoh_line(line, 1, m, n, PharaohOrder::SourceTarget)
}

/// As [`parse_pharaoh`], reporting errors against `line_no` (1-based).
pub fn parse_pharaoh_line(
    line: &str,
    line_no: usize,
    m: usize,
    n: usize,
    order: PharaohOrder,
) -> Result<HardAlignment> {
    let mut links = BTreeSet::new();
    for (k, tok) in line.split_whitespace().enumerate() {
        let err = |msg: String| Error::Parse {
            line: line_no,
            token: k + 1,
            msg,
        };
        let (a, b) = tok
            .split_once('-')
            .ok_or_else(|| err(format!("expected i-j, found {tok:?}")))?;
        let a: usize = a.parse().map_err(|_| err(format!("bad index in {tok:?}")))?;
        let b: usize = b.parse().map_err(|_| err(format!("bad index in {tok:?}")))?;
        let (i, j) = match order {
            PharaohOrder::SourceTarget => (a, b),
            PharaohOrder::TargetSource => (b, a),
        };
        if i >= m {
            return Err(err(format!("source index {i} out of range (m = {m})")));
        }
        if j >= n {
            return Err(err(format!("target index {j} out of range (n = {n})")));
        }
        links.insert((i, j));
    }
    Ok(HardAlignment { m, n, links })
}

/// Row-stochastic matrix with target positions as rows and source positions
/// as columns, eol included on both sides: (n + 1) × (m + 1).
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAlignmentMatrix(Matrix);

pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

impl SoftAlignmentMatrix {
    /// Validates that every row is a probability distribution.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::Domain("alignment matrix must be non-empty".into()));
        }
        for r in 0..m.rows() {
            let row = m.row(r);
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::Domain(format!("alignment row {r} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Domain(format!("alignment row {r} sums to {s}")));
            }
        }
        Ok(SoftAlignmentMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        SoftAlignmentMatrix::new(Matrix::from_rows(rows)?)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.0.row(r)
    }
}

/// Converts hard links into attention supervision.
///
/// A target word with `k` links spreads mass `1/k` over them. An unlinked
/// target word copies the row of the nearest linked target word, the right
/// neighbour winning ties. With no links at all, ordinary rows are uniform
/// over the real source words. The eol row is one-hot on the eol column.
pub fn to_supervision(hard: &HardAlignment) -> SoftAlignmentMatrix {
    let (m, n) = (hard.m, hard.n);
    let mut out = Matrix::zeros(n + 1, m + 1);

    let mut per_target: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in &hard.links {
        per_target[j].push(i);
    }
    for (t, sources) in per_target.iter().enumerate() {
        let share = 1.0 / sources.len() as f64;
        for &i in sources {
            out.set(t, i, share);
        }
    }

    let aligned: Vec<usize> = (0..n).filter(|&t| !per_target[t].is_empty()).collect();
    if aligned.is_empty() {
        for t in 0..n {
            if m == 0 {
                // Nothing but eol on the source side.
                out.set(t, 0, 1.0);
            } else {
                out.row_mut(t)[..m].fill(1.0 / m as f64);
            }
        }
    } else {
        for t in 0..n {
            if !per_target[t].is_empty() {
                continue;
            }
            let donor = nearest_right_biased(&aligned, t);
            let copy = out.row(donor).to_vec();
            out.row_mut(t).copy_from_slice(&copy);
        }
    }
    out.set(n, m, 1.0);
    SoftAlignmentMatrix(out)
}

/// Closest entry of the sorted, non-empty `aligned` to `t`; equal distances
/// prefer the larger position.
fn nearest_right_biased(aligned: &[usize], t: usize) -> usize {
    let right = aligned.partition_point(|&a| a < t);
    match (right.checked_sub(1).map(|k| aligned[k]), aligned.get(right)) {
        (Some(l), Some(&r)) => {
            if r - t <= t - l {
                r
            } else {
                l
            }
        }
        (Some(l), None) => l,
        (None, Some(&r)) => r,
        (None, None) => unreachable!("aligned is non-empty"),
    }
}

/// Serializes supervision matrices: a count line, then per matrix a
/// `rows cols` header followed by one line per row.
pub fn write_supervision(matrices: &[SoftAlignmentMatrix]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", matrices.len());
    for s in matrices {
        let _ = writeln!(out, "{} {}", s.rows(), s.cols());
        for r in 0..s.rows() {
            let row: Vec<String> = s.row(r).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

pub fn read_supervision(text: &str) -> Result<Vec<SoftAlignmentMatrix>> {
    let mut lines = text.lines().enumerate();
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::Data(format!("supervision file truncated reading {what}")))
    };
    let bad = |line: usize, msg: String| Error::Parse {
        line: line + 1,
        token: 1,
        msg,
    };
    let (ln, count) = next("count")?;
    let count: usize = count.trim().parse().map_err(|_| bad(ln, "bad matrix count".into()))?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (ln, header) = next("header")?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(ln, format!("bad header {header:?}")))?;
        let [rows, cols] = dims[..] else {
            return Err(bad(ln, format!("bad header {header:?}")));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) = next("row")?;
            let before = data.len();
            for v in row.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| bad(ln, format!("bad value {v:?}")))?);
            }
            if data.len() - before != cols {
                return Err(bad(ln, format!("expected {cols} values")));
            }
        }
        out.push(SoftAlignmentMatrix::new(Matrix::from_vec(rows, cols, data)?)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(s: &SoftAlignmentMatrix) -> Vec<Vec<f64>> {
        (0..s.rows()).map(|r| s.row(r).to_vec()).collect()
    }

    #[test]
    fn parse_fixture() {
        let h = parse_pharaoh("0-0 1-0 2-2", 3, 3).unwrap();
        let links: Vec<_> = h.links().iter().copied().collect();
        assert_eq!(links, vec![(0, 0), (1, 0), (2, 2)]);
        assert!(parse_pharaoh("", 3, 3).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_pharaoh("0-0 3-0", 3, 3) {
            Err(Error::Parse { token, .. }) => assert_eq!(token, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_pharaoh("0-3", 3, 3).is_err());
        assert!(parse_pharaoh("0_1", 3, 3).is_err());
        assert!(parse_pharaoh("a-1", 3, 3).is_err());
    }

    #[test]
    fn swapped_order() {
        let h = parse_pharaoh_line("2-0", 1, 1, 3, PharaohOrder::TargetSource).unwrap();
        assert!(h.links().contains(&(0, 2)));
    }

    #[test]
    fn supervision_fixture_with_right_preference() {
        let h = parse_pharaoh("0-0 1-0 2-2", 3, 3).unwrap();
        let s = to_supervision(&h);
        assert_eq!(
            rows(&s),
            vec![
                vec![0.5, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ]
        );
    }

    #[test]
    fn diagonal_gives_identity() {
        let h = HardAlignment::new(2, 2, [(0, 0), (1, 1)]).unwrap();
        assert_eq!(to_supervision(&h).into_matrix(), Matrix::identity(3));
    }

    #[test]
    fn all_unaligned_falls_back_to_uniform() {
        let s = to_supervision(&HardAlignment::empty(2, 1));
        assert_eq!(rows(&s), vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn empty_source_puts_mass_on_eol() {
        let s = to_supervision(&HardAlignment::empty(0, 2));
        assert_eq!(rows(&s), vec![vec![1.0], vec![1.0], vec![1.0]]);
    }

    #[test]
    fn nearest_prefers_closer_then_right() {
        assert_eq!(nearest_right_biased(&[0, 2], 1), 2);
        assert_eq!(nearest_right_biased(&[0, 3], 1), 0);
        assert_eq!(nearest_right_biased(&[4], 1), 4);
        assert_eq!(nearest_right_biased(&[1], 5), 1);
    }

    #[test]
    fn supervision_file_round_trip() {
        let a = to_supervision(&parse_pharaoh("0-0 1-0 2-2", 3, 3).unwrap());
        let b = to_supervision(&HardAlignment::empty(3, 1));
        let text = write_supervision(&[a.clone(), b.clone()]);
        assert_eq!(read_supervision(&text).unwrap(), vec![a, b]);
        assert!(read_supervision("1\n2 2\n1 0\n").is_err());
    }

    #[test]
    fn soft_matrix_validation() {
        assert!(SoftAlignmentMatrix::from_rows(&[vec![0.5, 0.4]]).is_err());
        assert!(SoftAlignmentMatrix::from_rows(&[vec![1.5, -0.5]]).is_err());
        assert!(SoftAlignmentMatrix::from_rows(&[vec![0.25, 0.75]]).is_ok());
    }

    #[test]
    fn pharaoh_round_trip() {
        let h = HardAlignment::new(4, 3, [(3, 0), (0, 2), (1, 1)]).unwrap();
        assert_eq!(h.to_pharaoh(), "0-2 1-1 3-0");
        assert_eq!(parse_pharaoh(&h.to_pharaoh(), 4, 3).unwrap(), h);
    }
}
