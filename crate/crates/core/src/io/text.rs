//! Line-oriented text formats: segment maps, prompt tables and CSV tables.
//!
//! A segment map file starts with `height width`, followed by `height`
//! rows of `width` whitespace-separated labels. A prompt table has one
//! `label = prompt` entry per line. In both, blank lines and lines starting
//! with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::enhancer::EnhancerPair;
use crate::error::{Error, Result};
use crate::lattice::SegmentMap;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_prompt_table(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in content_lines(text) {
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("prompt table line {n}: expected `label = prompt`"))
        })?;
        let label: u32 = k.trim().parse().map_err(|_| {
            Error::Format(format!("prompt table line {n}: bad label {:?}", k.trim()))
        })?;
        if out.insert(label, v.trim().to_string()).is_some() {
            return Err(Error::Format(format!(
                "prompt table line {n}: label {label} repeated"
            )));
        }
    }
    Ok(out)
}

pub fn format_prompt_table(prompts: &BTreeMap<u32, String>) -> String {
    prompts
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

/// Parses the raster and checks every label against `prompts`.
pub fn parse_segment_map(text: &str, prompts: BTreeMap<u32, String>) -> Result<SegmentMap> {
    let mut lines = content_lines(text);
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("segment map is empty".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Format(format!("bad segment map header {header:?}")))
        })
        .collect::<Result<_>>()?;
    let [height, width] = dims[..] else {
        return Err(Error::Format(format!(
            "segment map header {header:?} must be `height width`"
        )));
    };
    let mut labels = Vec::with_capacity(height * width);
    let mut rows = 0;
    for (n, line) in lines {
        let row: Vec<u32> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("segment map line {n}: bad label {t:?}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != width {
            return Err(Error::Format(format!(
                "segment map line {n}: {} labels, expected {width}",
                row.len()
            )));
        }
        labels.extend(row);
        rows += 1;
    }
    if rows != height {
        return Err(Error::Format(format!(
            "segment map has {rows} rows, header says {height}"
        )));
    }
    SegmentMap::new(height, width, labels, prompts)
}

pub fn format_segment_map(map: &SegmentMap) -> String {
    let mut out = format!("{} {}\n", map.height(), map.width());
    for r in 0..map.height() {
        let row: Vec<String> = (0..map.width())
            .map(|c| map.label_at(r, c).to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_segment_map(map_path: &Path, prompt_path: &Path) -> Result<SegmentMap> {
    let prompts = parse_prompt_table(&std::fs::read_to_string(prompt_path)?)?;
    parse_segment_map(&std::fs::read_to_string(map_path)?, prompts)
}

/// Header line plus rows, each terminated by a newline.
pub fn csv_string(header: &str, rows: &[String]) -> String {
    let mut out =
        String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    std::fs::write(path, csv_string(header, rows))?;
    Ok(())
}

/// Reads a numeric CSV written by [`write_csv`]: column names and rows of
/// values (`nan` and `inf` parse as such).
pub fn parse_numeric_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("CSV row {}: bad number {t:?}", n + 1)))
            })
            .collect::<Result<_>>()?;
        if row.len() != header.len() {
            return Err(Error::Format(format!(
                "CSV row {} has {} fields, expected {}",
                n + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub const PAIR_MANIFEST_HEADER: &str =
    "pair,scene,label,origin_z,origin_y,origin_x,crop_size,parent_count,child_counts";

/// One CSV row per pair; child counts are `;`-separated in octant order.
pub fn pair_manifest(pairs: &[EnhancerPair]) -> String {
    let mut out = String::from(PAIR_MANIFEST_HEADER);
    out.push('\n');
    for (i, p) in pairs.iter().enumerate() {
        let counts: Vec<String> = p.children.iter().map(|c| c.len().to_string()).collect();
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{}",
            p.scene,
            p.label,
            p.origin[0],
            p.origin[1],
            p.origin[2],
            p.crop_size,
            p.parent.len(),
            counts.join(";")
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompts() -> BTreeMap<u32, String> {
        [
            (0, "rolling hills".to_string()),
            (1, "tall towers".to_string()),
        ]
        .into()
    }

    #[test]
    fn segment_map_round_trip() {
        let text = "# two labels\n2 3\n0 0 1\n\n1 1 0\n";
        let map = parse_segment_map(text, prompts()).unwrap();
        assert_eq!((map.height(), map.width()), (2, 3));
        assert_eq!(map.label_at(1, 0), 1);
        let again = parse_segment_map(&format_segment_map(&map), prompts()).unwrap();
        assert_eq!(again.raster(), map.raster());
    }

    #[test]
    fn segment_map_errors() {
        assert!(parse_segment_map("2 2\n0 0\n", prompts()).is_err());
        assert!(parse_segment_map("1 2\n0 0 0\n", prompts()).is_err());
        assert!(parse_segment_map("1 2\n0 x\n", prompts()).is_err());
        assert!(
            matches!(parse_segment_map("1 2\n0 5\n", prompts()), Err(Error::MissingPrompt(v)) if v == vec![5])
        );
    }

    #[test]
    fn prompt_table_round_trip() {
        let t = parse_prompt_table("0 = rolling hills\n# note\n1 = tall towers\n").unwrap();
        assert_eq!(t, prompts());
        assert_eq!(parse_prompt_table(&format_prompt_table(&t)).unwrap(), t);
        assert!(parse_prompt_table("0 = a\n0 = b\n").is_err());
        assert!(parse_prompt_table("zero = a\n").is_err());
    }

    #[test]
    fn numeric_csv_round_trip() {
        let text = csv_string("step,loss", &["0,1.5".into(), "1,NaN".into()]);
        let (h, rows) = parse_numeric_csv(&text).unwrap();
        assert_eq!(h, vec!["step", "loss"]);
        assert_eq!(rows[0], vec![0.0, 1.5]);
        assert!(rows[1][1].is_nan());
        assert!(parse_numeric_csv("a,b\n1\n").is_err());
    }
}
