//! Mesh exchange format (deterministic ASCII) and VTK legacy export.
//!
//! The exchange grammar is documented in `docs/exchange_format.md`. All
//! coordinates are written with 17 significant digits, which round-trips
//! every finite f64 bit-exactly; identical meshes therefore produce
//! byte-identical files.

use crate::error::{Error, Result};
use crate::geo::Point3;
use std::fmt::Write as _;
use std::path::Path;

/// Number formatting used for every floating-point value in the exchange
/// format: 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

/// In-memory form of an exchange file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExchangeDocument {
    pub nodes: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    pub prisms: Vec<[u32; 6]>,
    pub tetrahedra: Vec<[u32; 4]>,
    /// Per-triangle region tag (empty when absent).
    pub triangle_region: Vec<String>,
    /// Per-node class tag for hybrid meshes (empty when absent).
    pub node_class: Vec<String>,
    /// Per-triangle target size.
    pub triangle_size: Vec<f64>,
    /// Per-prism provenance: (layer index, base surface triangle id).
    pub prism_provenance: Vec<(u32, u32)>,
    /// Per-prism nominal extrusion height.
    pub prism_height: Vec<f64>,
    /// Sheet size of the prismatic stack (0 when not a hybrid mesh).
    pub n_sheet_nodes: usize,
}

impl ExchangeDocument {
    pub fn kinds(&self) -> Vec<&'static str> {
        let mut k = Vec::new();
        if !self.triangles.is_empty() {
            k.push("triangle");
        }
        if !self.prisms.is_empty() {
            k.push("prism");
        }
        if !self.tetrahedra.is_empty() {
            k.push("tetrahedron");
        }
        k
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("ablmesh-exchange 1\n");
        let kinds = self.kinds();
        writeln!(s, "kinds {}", if kinds.is_empty() { "none".to_string() } else { kinds.join(" ") }).unwrap();
        if self.n_sheet_nodes > 0 {
            writeln!(s, "meta sheet-nodes {}", self.n_sheet_nodes).unwrap();
        }
        writeln!(s, "nodes {}", self.nodes.len()).unwrap();
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(s, "{} {} {} {}", i, fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z)).unwrap();
        }
        if !self.triangles.is_empty() {
            writeln!(s, "triangles {}", self.triangles.len()).unwrap();
            for (i, t) in self.triangles.iter().enumerate() {
                writeln!(s, "{} {} {} {}", i, t[0], t[1], t[2]).unwrap();
            }
        }
        if !self.prisms.is_empty() {
            writeln!(s, "prisms {}", self.prisms.len()).unwrap();
            for (i, t) in self.prisms.iter().enumerate() {
                writeln!(
                    s,
                    "{} {} {} {} {} {} {}",
                    i, t[0], t[1], t[2], t[3], t[4], t[5]
                )
                .unwrap();
            }
        }
        if !self.tetrahedra.is_empty() {
            writeln!(s, "tetrahedra {}", self.tetrahedra.len()).unwrap();
            for (i, t) in self.tetrahedra.iter().enumerate() {
                writeln!(s, "{} {} {} {} {}", i, t[0], t[1], t[2], t[3]).unwrap();
            }
        }
        if !self.triangle_region.is_empty() {
            writeln!(s, "tags triangle region {}", self.triangle_region.len()).unwrap();
            for (i, r) in self.triangle_region.iter().enumerate() {
                writeln!(s, "{} {}", i, r).unwrap();
            }
        }
        if !self.node_class.is_empty() {
            writeln!(s, "tags node class {}", self.node_class.len()).unwrap();
            for (i, r) in self.node_class.iter().enumerate() {
                writeln!(s, "{} {}", i, r).unwrap();
            }
        }
        if !self.triangle_size.is_empty() {
            writeln!(s, "provenance triangle size {}", self.triangle_size.len()).unwrap();
            for (i, v) in self.triangle_size.iter().enumerate() {
                writeln!(s, "{} {}", i, fmt_f64(*v)).unwrap();
            }
        }
        if !self.prism_provenance.is_empty() {
            writeln!(s, "provenance prism layer-base {}", self.prism_provenance.len()).unwrap();
            for (i, (l, b)) in self.prism_provenance.iter().enumerate() {
                writeln!(s, "{} {} {}", i, l, b).unwrap();
            }
        }
        if !self.prism_height.is_empty() {
            writeln!(s, "provenance prism height {}", self.prism_height.len()).unwrap();
            for (i, v) in self.prism_height.iter().enumerate() {
                writeln!(s, "{} {}", i, fmt_f64(*v)).unwrap();
            }
        }
        s.push_str("end\n");
        s
    }
}

pub fn write_exchange_document(doc: &ExchangeDocument, path: &Path) -> Result<()> {
    std::fs::write(path, doc.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
}

struct LineReader<'a> {
    path: String,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, line) in self.lines.by_ref() {
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok((i + 1, t));
            }
        }
        Err(Error::parse(self.path.clone(), 0, "unexpected end of file"))
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(self.path.clone(), line, msg)
    }
}

fn parse_counted<T, F>(rd: &mut LineReader, count: usize, mut parse: F) -> Result<Vec<T>>
where
    F: FnMut(&mut LineReader, usize, &str) -> Result<T>,
{
    let mut out = Vec::with_capacity(count);
    for expect in 0..count {
        let (ln, line) = rd.next_line()?;
        let mut it = line.split_whitespace();
        let idx: usize = it
            .next()
            .ok_or_else(|| rd.err(ln, "missing index"))?
            .parse()
            .map_err(|_| rd.err(ln, "invalid index"))?;
        if idx != expect {
            return Err(rd.err(ln, format!("expected index {expect}, found {idx}")));
        }
        let rest = line.split_once(char::is_whitespace).map(|x| x.1).unwrap_or("");
        out.push(parse(rd, ln, rest.trim())?);
    }
    Ok(out)
}

fn parse_floats(rd: &LineReader, ln: usize, s: &str, n: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| rd.err(ln, format!("invalid float in '{s}'")))?;
    if vals.len() != n {
        return Err(rd.err(ln, format!("expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}

fn parse_ints(rd: &LineReader, ln: usize, s: &str, n: usize) -> Result<Vec<u32>> {
    let vals: Vec<u32> = s
        .split_whitespace()
        .map(|t| t.parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| rd.err(ln, format!("invalid integer in '{s}'")))?;
    if vals.len() != n {
        return Err(rd.err(ln, format!("expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}

pub fn read_exchange_document(path: &Path) -> Result<ExchangeDocument> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_exchange_document(&text, &path.display().to_string())
}

pub fn parse_exchange_document(text: &str, path: &str) -> Result<ExchangeDocument> {
    let mut rd = LineReader {
        path: path.to_string(),
        lines: text.lines().enumerate(),
    };
    let (ln, header) = rd.next_line()?;
    if header != "ablmesh-exchange 1" {
        return Err(rd.err(ln, format!("unsupported header '{header}'")));
    }
    let mut doc = ExchangeDocument::default();
    loop {
        let (ln, line) = rd.next_line()?;
        let mut it = line.split_whitespace();
        let word = it.next().unwrap();
        match word {
            "end" => break,
            "kinds" => {
                for k in it {
                    if !matches!(k, "triangle" | "prism" | "tetrahedron" | "none") {
                        return Err(rd.err(ln, format!("unsupported element kind '{k}'")));
                    }
                }
            }
            "meta" => {
                let key = it.next().ok_or_else(|| rd.err(ln, "missing meta key"))?;
                let val = it.next().ok_or_else(|| rd.err(ln, "missing meta value"))?;
                if key == "sheet-nodes" {
                    doc.n_sheet_nodes = val
                        .parse()
                        .map_err(|_| rd.err(ln, "invalid sheet-nodes value"))?;
                }
            }
            "nodes" => {
                let count: usize = it
                    .next()
                    .ok_or_else(|| rd.err(ln, "missing node count"))?
                    .parse()
                    .map_err(|_| rd.err(ln, "invalid node count"))?;
                doc.nodes = parse_counted(&mut rd, count, |rd, ln, s| {
                    let v = parse_floats(rd, ln, s, 3)?;
                    Ok(Point3::new(v[0], v[1], v[2]))
                })?;
            }
            "triangles" => {
                let count: usize = it
                    .next()
                    .ok_or_else(|| rd.err(ln, "missing count"))?
                    .parse()
                    .map_err(|_| rd.err(ln, "invalid count"))?;
                doc.triangles = parse_counted(&mut rd, count, |rd, ln, s| {
                    let v = parse_ints(rd, ln, s, 3)?;
                    Ok([v[0], v[1], v[2]])
                })?;
            }
            "prisms" => {
                let count: usize = it
                    .next()
                    .ok_or_else(|| rd.err(ln, "missing count"))?
                    .parse()
                    .map_err(|_| rd.err(ln, "invalid count"))?;
                doc.prisms = parse_counted(&mut rd, count, |rd, ln, s| {
                    let v = parse_ints(rd, ln, s, 6)?;
                    Ok([v[0], v[1], v[2], v[3], v[4], v[5]])
                })?;
            }
            "tetrahedra" => {
                let count: usize = it
                    .next()
                    .ok_or_else(|| rd.err(ln, "missing count"))?
                    .parse()
                    .map_err(|_| rd.err(ln, "invalid count"))?;
                doc.tetrahedra = parse_counted(&mut rd, count, |rd, ln, s| {
                    let v = parse_ints(rd, ln, s, 4)?;
                    Ok([v[0], v[1], v[2], v[3]])
                })?;
            }
            "tags" => {
                let what = it.next().ok_or_else(|| rd.err(ln, "missing tag target"))?;
                let name = it.next().ok_or_else(|| rd.err(ln, "missing tag name"))?;
                let count: usize = it
                    .next()
                    .ok_or_else(|| rd.err(ln, "missing count"))?
                    .parse()
                    .map_err(|_| rd.err(ln, "invalid count"))?;
                let vals = parse_counted(&mut rd, count, |_, _, s| Ok(s.to_string()))?;
                match (what, name) {
                    ("triangle", "region") => doc.triangle_region = vals,
                    ("node", "class") => doc.node_class = vals,
                    _ => {
                        return Err(rd.err(ln, format!("unknown tag block '{what} {name}'")));
                    }
                }
            }
            "provenance" => {
                let what = it.next().ok_or_else(|| rd.err(ln, "missing target"))?;
                let name = it.next().ok_or_else(|| rd.err(ln, "missing name"))?;
                let count: usize = it
                    .next()
                    .ok_or_else(|| rd.err(ln, "missing count"))?
                    .parse()
                    .map_err(|_| rd.err(ln, "invalid count"))?;
                match (what, name) {
                    ("triangle", "size") => {
                        doc.triangle_size = parse_counted(&mut rd, count, |rd, ln, s| {
                            Ok(parse_floats(rd, ln, s, 1)?[0])
                        })?;
                    }
                    ("prism", "layer-base") => {
                        doc.prism_provenance = parse_counted(&mut rd, count, |rd, ln, s| {
                            let v = parse_ints(rd, ln, s, 2)?;
                            Ok((v[0], v[1]))
                        })?;
                    }
                    ("prism", "height") => {
                        doc.prism_height = parse_counted(&mut rd, count, |rd, ln, s| {
                            Ok(parse_floats(rd, ln, s, 1)?[0])
                        })?;
                    }
                    _ => {
                        return Err(rd.err(ln, format!("unknown provenance block '{what} {name}'")));
                    }
                }
            }
            other => {
                return Err(rd.err(ln, format!("unknown section '{other}'")));
            }
        }
    }
    let n = doc.nodes.len() as u32;
    let check = |ids: &[u32]| ids.iter().all(|&v| v < n);
    if !doc.triangles.iter().all(|t| check(t))
        || !doc.prisms.iter().all(|t| check(t))
        || !doc.tetrahedra.iter().all(|t| check(t))
    {
        return Err(Error::parse(
            path.to_string(),
            0,
            "element references a node beyond the node block",
        ));
    }
    Ok(doc)
}
