//! Landmark files, label manifests and grouped splits.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::classify::ExpressionLabel;
use crate::shape::{Point, Shape};

fn parse_err(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse {
        line,
        message: message.into(),
    }
}

/// Parses the `.pts` layout used by the 68-point alignment databases:
///
/// ```text
/// version: 1
/// n_points: 68
/// {
/// x y
/// ...
/// }
/// ```
pub fn parse_pts(text: &str) -> Result<Shape, HarnessError> {
    let mut n_points: Option<usize> = None;
    let mut points = Vec::new();
    let mut state = 0; // 0 header, 1 inside braces, 2 after closing brace
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match state {
            0 => {
                if line == "{" {
                    if n_points.is_none() {
                        return Err(parse_err(line_no, "`{` before `n_points`"));
                    }
                    state = 1;
                } else if let Some((key, value)) = line.split_once(':') {
                    let value = value.trim();
                    match key.trim() {
                        "version" => {
                            value
                                .parse::<f64>()
                                .map_err(|_| parse_err(line_no, "bad version"))?;
                        }
                        "n_points" => {
                            if n_points.is_some() {
                                return Err(parse_err(line_no, "duplicate `n_points`"));
                            }
                            let n = value
                                .parse::<usize>()
                                .map_err(|_| parse_err(line_no, "bad `n_points`"))?;
                            n_points = Some(n);
                        }
                        other => {
                            return Err(parse_err(line_no, format!("unknown header key `{other}`")))
                        }
                    }
                } else {
                    return Err(parse_err(line_no, "expected a header line or `{`"));
                }
            }
            1 => {
                if line == "}" {
                    state = 2;
                    continue;
                }
                let mut it = line.split_whitespace();
                let (Some(xs), Some(ys), None) = (it.next(), it.next(), it.next()) else {
                    return Err(parse_err(line_no, "expected `x y`"));
                };
                let coord = |s: &str| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| parse_err(line_no, format!("bad coordinate `{s}`")))
                };
                points.push(Point::new(coord(xs)?, coord(ys)?));
                if points.len() > n_points.unwrap_or(0) {
                    return Err(HarnessError::PointCountMismatch {
                        expected: n_points.unwrap_or(0),
                        found: points.len(),
                    });
                }
            }
            _ => return Err(parse_err(line_no, "text after closing `}`")),
        }
    }
    if state != 2 {
        return Err(parse_err(0, "missing `{ ... }` coordinate block"));
    }
    let expected = n_points.unwrap_or(0);
    if points.len() != expected {
        return Err(HarnessError::PointCountMismatch {
            expected,
            found: points.len(),
        });
    }
    Shape::new(points).map_err(|e| parse_err(0, e.to_string()))
}

pub fn load_pts(path: &Path) -> Result<Shape, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_pts(&text).map_err(|e| e.in_file(path))
}

pub fn format_pts(shape: &Shape) -> String {
    let mut s = format!("version: 1\nn_points: {}\n{{\n", shape.len());
    for p in shape.points() {
        let _ = writeln!(s, "{:?} {:?}", p.x, p.y);
    }
    s.push_str("}\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub pts: PathBuf,
    /// `None` for unlabeled entries.
    pub label: Option<ExpressionLabel>,
    pub group: String,
    /// Index of the entry this one is a mirror image of.
    pub flip_of: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Non-fatal findings such as duplicate `(image, pts)` pairs.
    pub warnings: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Row {
    image: String,
    pts: String,
    label: String,
    group: String,
    #[serde(default)]
    flip_of: Option<String>,
}

/// Parses a manifest CSV with header `image,pts,label,group[,flip_of]`.
/// Relative paths are resolved against `base_dir`. `flip_of` names the image
/// path of another entry in the same group.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 4
        || cols[..4] != ["image", "pts", "label", "group"]
        || cols[4..].iter().any(|c| *c != "flip_of")
        || cols.len() > 5
    {
        return Err(parse_err(
            1,
            "header must be `image,pts,label,group[,flip_of]`",
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: Row = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        rows.push((line, row));
    }

    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base_dir.join(p)
        }
    };
    let mut manifest = DatasetManifest::default();
    let mut by_image: HashMap<String, usize> = HashMap::new();
    let mut pairs: HashSet<(String, String)> = HashSet::new();
    for (i, (line, row)) in rows.iter().enumerate() {
        if row.image.is_empty() || row.pts.is_empty() {
            return Err(parse_err(*line, "image and pts paths are required"));
        }
        if row.group.is_empty() {
            return Err(parse_err(*line, "group is required"));
        }
        let label =
            if row.label.is_empty() {
                None
            } else {
                Some(row.label.parse::<ExpressionLabel>().map_err(|_| {
                    HarnessError::UnknownLabel {
                        line: *line,
                        label: row.label.clone(),
                    }
                })?)
            };
        if !pairs.insert((row.image.clone(), row.pts.clone())) {
            manifest.warnings.push(format!(
                "line {line}: duplicate entry for image `{}` with pts `{}`",
                row.image, row.pts
            ));
        }
        by_image.entry(row.image.clone()).or_insert(i);
        manifest.entries.push(ManifestEntry {
            image: resolve(&row.image),
            pts: resolve(&row.pts),
            label,
            group: row.group.clone(),
            flip_of: None,
        });
    }
    for (i, (line, row)) in rows.iter().enumerate() {
        let Some(src) = row.flip_of.as_deref().filter(|s| !s.is_empty()) else {
            continue;
        };
        let j = *by_image
            .get(src)
            .ok_or_else(|| parse_err(*line, format!("flip_of `{src}` names no entry")))?;
        if j == i {
            return Err(parse_err(*line, "entry cannot be a flip of itself"));
        }
        if manifest.entries[j].group != manifest.entries[i].group {
            return Err(parse_err(*line, "flip pairs must share a group"));
        }
        manifest.entries[i].flip_of = Some(j);
    }
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base).map_err(|e| e.in_file(path))
}

/// Writes a manifest with paths relative to `base_dir` where possible.
pub fn format_manifest(
    manifest: &DatasetManifest,
    base_dir: &Path,
) -> Result<String, HarnessError> {
    let rel = |p: &Path| {
        p.strip_prefix(base_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let has_flips = manifest.entries.iter().any(|e| e.flip_of.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| parse_err(0, e.to_string());
    let mut header = vec!["image", "pts", "label", "group"];
    if has_flips {
        header.push("flip_of");
    }
    w.write_record(&header).map_err(csv_err)?;
    for e in &manifest.entries {
        let mut rec = vec![
            rel(&e.image),
            rel(&e.pts),
            e.label.map_or(String::new(), |l| l.name().to_string()),
            e.group.clone(),
        ];
        if has_flips {
            rec.push(
                e.flip_of
                    .map_or(String::new(), |j| rel(&manifest.entries[j].image)),
            );
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| parse_err(0, e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSplit {
    /// Entry indices, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// `train.len() / total`.
    pub achieved_ratio: f64,
}

/// Assigns whole groups to train or test. Groups are visited largest first,
/// equal sizes in a seeded shuffle; each joins the training side when that
/// brings the training size closer to `ratio * total`. Both sides get at
/// least one group.
pub fn split_grouped(
    groups: &[String],
    ratio: f64,
    seed: u64,
) -> Result<GroupedSplit, HarnessError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(HarnessError::Config(
            "train_ratio must lie in (0, 1)".into(),
        ));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut members: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, g) in groups.iter().enumerate() {
        members
            .entry(g.as_str())
            .or_insert_with(|| {
                order.push(g.as_str());
                Vec::new()
            })
            .push(i);
    }
    if order.len() < 2 {
        return Err(HarnessError::TooFewGroups(order.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.sort_by_key(|g| std::cmp::Reverse(members[g].len()));
    let target = ratio * groups.len() as f64;
    let mut in_train = vec![false; order.len()];
    let mut n_train = 0usize;
    for (k, g) in order.iter().enumerate() {
        let size = members[g].len();
        let after = (n_train + size) as f64;
        if (after - target).abs() < (n_train as f64 - target).abs() {
            in_train[k] = true;
            n_train += size;
        }
    }
    if !in_train.iter().any(|t| *t) {
        in_train[0] = true;
    }
    if in_train.iter().all(|t| *t) {
        let last = in_train.len() - 1;
        in_train[last] = false;
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, g) in order.iter().enumerate() {
        if in_train[k] {
            train.extend(&members[g]);
        } else {
            test.extend(&members[g]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(GroupedSplit {
        achieved_ratio: train.len() as f64 / groups.len() as f64,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pts_round_trip() {
        let s = Shape::from_xy(&[(1.5, 2.0), (3.25, -4.0)]).unwrap();
        assert_eq!(parse_pts(&format_pts(&s)).unwrap(), s);
    }

    #[test]
    fn pts_errors() {
        assert!(matches!(
            parse_pts("version: 1\nn_points: 3\n{\n1 2\n3 4\n}\n"),
            Err(HarnessError::PointCountMismatch {
                expected: 3,
                found: 2
            })
        ));
        assert!(matches!(
            parse_pts("version: 1\nn_points: 1\n{\n1 x\n}\n"),
            Err(HarnessError::Parse { line: 4, .. })
        ));
        assert!(parse_pts("version: 1\nn_points: 1\n{\n1 2\n").is_err());
        assert!(parse_pts("n_points: 1\n1 2\n").is_err());
    }

    #[test]
    fn manifest_basics() {
        let text =
            "image,pts,label,group\na.png,a.pts,Happy,g1\nb.png,b.pts,,g2\na.png,a.pts,sad,g1\n";
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[0].image, PathBuf::from("/data/a.png"));
        assert_eq!(m.entries[1].label, None);
        assert_eq!(m.entries[2].label, Some(ExpressionLabel::Sad));
        assert_eq!(m.warnings.len(), 1);
        let bad = "image,pts,label,group\na.png,a.pts,Happy,g1\nb.png,b.pts,Happpy,g2\n";
        match parse_manifest(bad, Path::new(".")) {
            Err(HarnessError::UnknownLabel { line, label }) => {
                assert_eq!(line, 3);
                assert_eq!(label, "Happpy");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_flips_must_share_group() {
        let ok =
            "image,pts,label,group,flip_of\na.png,a.pts,Happy,g1,\nb.png,b.pts,Happy,g1,a.png\n";
        let m = parse_manifest(ok, Path::new("")).unwrap();
        assert_eq!(m.entries[1].flip_of, Some(0));
        let back =
            parse_manifest(&format_manifest(&m, Path::new("")).unwrap(), Path::new("")).unwrap();
        assert_eq!(back, m);
        let bad =
            "image,pts,label,group,flip_of\na.png,a.pts,Happy,g1,\nb.png,b.pts,Happy,g2,a.png\n";
        assert!(parse_manifest(bad, Path::new("")).is_err());
    }

    #[test]
    fn singleton_groups_split_exactly() {
        let groups: Vec<String> = (0..10).map(|i| format!("g{i}")).collect();
        let s = split_grouped(&groups, 0.7, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        assert_eq!(s, split_grouped(&groups, 0.7, 1).unwrap());
        assert!(matches!(
            split_grouped(&["a".to_string(), "a".to_string()], 0.5, 0),
            Err(HarnessError::TooFewGroups(1))
        ));
    }
}
