use super::{Point, Shape, ShapeError};

const DEFAULT_68_TABLE: &str = include_str!("../../data/flip68.txt");

/// Landmark index mapping applied when a face is mirrored horizontally.
///
/// `map(j)` names the source landmark whose mirrored position becomes point
/// `j`. The mapping must be an involution: mirroring twice is the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipPermutation {
    table: Vec<usize>,
}

/// Horizontal mirror axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mirror {
    /// `x -> -x`, for centered shapes.
    Centered,
    /// `x -> width - x`, for image coordinates.
    Width(f64),
}

impl FlipPermutation {
    pub fn new(table: Vec<usize>) -> Result<Self, ShapeError> {
        let n = table.len();
        if n == 0 {
            return Err(ShapeError::InvalidPermutation("empty table".into()));
        }
        let mut seen = vec![false; n];
        for (i, &j) in table.iter().enumerate() {
            if j >= n {
                return Err(ShapeError::InvalidPermutation(format!(
                    "index {i} maps to {j}, out of range for {n} points"
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(ShapeError::InvalidPermutation(format!(
                    "index {j} is the target of more than one entry"
                )));
            }
        }
        if let Some(i) = (0..n).find(|&i| table[table[i]] != i) {
            return Err(ShapeError::InvalidPermutation(format!(
                "not an involution: {i} -> {} -> {}",
                table[i], table[table[i]]
            )));
        }
        Ok(Self { table })
    }

    /// The conventional 68-point mirror table (jaw, brows, nose, eyes, mouth).
    pub fn default_68() -> Self {
        Self::parse(DEFAULT_68_TABLE).expect("bundled flip table is valid")
    }

    /// Parses `src dst` lines (0-based); `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ShapeError> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: &str| ShapeError::TableParse {
                line: lineno + 1,
                message: message.to_string(),
            };
            let mut fields = line.split_whitespace();
            let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(bad("expected `src_index dst_index`"));
            };
            let src: usize = a
                .parse()
                .map_err(|_| bad("source index is not an integer"))?;
            let dst: usize = b
                .parse()
                .map_err(|_| bad("target index is not an integer"))?;
            pairs.push((lineno + 1, src, dst));
        }
        let n = pairs.len();
        let mut table = vec![usize::MAX; n];
        for (line, src, dst) in pairs {
            if src >= n {
                return Err(ShapeError::TableParse {
                    line,
                    message: format!("source index {src} out of range for {n} entries"),
                });
            }
            if table[src] != usize::MAX {
                return Err(ShapeError::TableParse {
                    line,
                    message: format!("source index {src} listed twice"),
                });
            }
            table[src] = dst;
        }
        Self::new(table)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn map(&self, j: usize) -> usize {
        self.table[j]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.table
    }

    pub fn to_table_string(&self) -> String {
        let mut out = String::from("# src dst\n");
        for (i, j) in self.table.iter().enumerate() {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }
}

/// Mirrors a shape horizontally and restores the landmark order, so that
/// output point `j` is the mirror image of input point `perm.map(j)`.
pub fn flip_reorder(
    shape: &Shape,
    perm: &FlipPermutation,
    mirror: Mirror,
) -> Result<Shape, ShapeError> {
    if perm.len() != shape.len() {
        return Err(ShapeError::InvalidPermutation(format!(
            "table has {} entries, shape has {} points",
            perm.len(),
            shape.len()
        )));
    }
    let pts = shape.points();
    let points = (0..shape.len())
        .map(|j| {
            let p = pts[perm.map(j)];
            let x = match mirror {
                Mirror::Centered => -p.x,
                Mirror::Width(w) => w - p.x,
            };
            Point::new(x, p.y)
        })
        .collect();
    Shape::new(points)
}
