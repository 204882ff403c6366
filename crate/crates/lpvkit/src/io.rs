//! Artifact formats: Matrix Market matrices, RFC-4180 CSV tables, and JSON
//! bundles for systems, models, polytopes and controllers.
//!
//! Every function here transforms between in-memory values and text; file
//! placement is the caller's concern. Multi-file bundles are expressed as
//! `(relative name, content)` lists on write and as a loader closure on
//! read, so the same code serves directories, archives and tests.
//!
//! All floating-point values are rendered in shortest round-trip scientific
//! notation and re-read exactly: a write/read cycle reproduces every bit,
//! which is what makes byte-identical artifact reruns possible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closedloop::ExitEvent;
use crate::error::{Error, Result};
use crate::pod::AffineLpvModel;
use crate::polytope::{ParamPolytope, PolytopeKind, Provenance};
use crate::sdc::{QuadEntry, QuadTensor, QuadraticSystem};
use crate::synthesis::{PerformanceWeights, VertexControllerSet};
use crate::trajectory::{Trajectory, TrajectoryMeta};

/// Shortest round-trip rendering in scientific notation.
fn fmt(v: f64) -> String {
    format!("{v:e}")
}

fn parse_err(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, col, msg: msg.into() }
}

/// Splits a line into whitespace tokens with 1-based column positions.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn parse_f64(lineno: usize, col: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| parse_err(lineno, col, format!("invalid number '{tok}'")))
}

fn parse_usize(lineno: usize, col: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| parse_err(lineno, col, format!("invalid integer '{tok}'")))
}

// ---------------------------------------------------------------------------
// Matrix Market
// ---------------------------------------------------------------------------

/// Dense (array variant) Matrix Market rendering, column-major values.
pub fn matrix_to_market(m: &DMatrix<f64>, comment: &str) -> String {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    for line in comment.lines() {
        out.push_str(&format!("% {line}\n"));
    }
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for v in m.iter() {
        out.push_str(&fmt(*v));
        out.push('\n');
    }
    out
}

/// Sparse (coordinate variant) Matrix Market rendering of the nonzero
/// entries, 1-based indices in column-major order.
pub fn matrix_to_market_coordinate(m: &DMatrix<f64>, comment: &str) -> String {
    let nnz = m.iter().filter(|v| **v != 0.0).count();
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    for line in comment.lines() {
        out.push_str(&format!("% {line}\n"));
    }
    out.push_str(&format!("{} {} {nnz}\n", m.nrows(), m.ncols()));
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                out.push_str(&format!("{} {} {}\n", i + 1, j + 1, fmt(v)));
            }
        }
    }
    out
}

/// Parses both Matrix Market variants (`array` and `coordinate`), `real` or
/// `integer` field, `general` or `symmetric` symmetry.
pub fn matrix_from_market(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines
        .next()
        .ok_or_else(|| parse_err(1, 1, "empty file, expected Matrix Market banner"))?;
    let banner_toks: Vec<String> =
        tokens(banner).iter().map(|(_, t)| t.to_ascii_lowercase()).collect();
    if banner_toks.len() != 5 || banner_toks[0] != "%%matrixmarket" || banner_toks[1] != "matrix" {
        return Err(parse_err(1, 1, "malformed banner, expected '%%MatrixMarket matrix ...'"));
    }
    let coordinate = match banner_toks[2].as_str() {
        "coordinate" => true,
        "array" => false,
        other => return Err(parse_err(1, 1, format!("unsupported format '{other}'"))),
    };
    if banner_toks[3] != "real" && banner_toks[3] != "integer" {
        return Err(parse_err(1, 1, format!("unsupported field '{}'", banner_toks[3])));
    }
    let symmetric = match banner_toks[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(1, 1, format!("unsupported symmetry '{other}'"))),
    };

    // Skip comments; the first non-comment line carries the sizes.
    let mut size_line = None;
    for (idx, line) in &mut lines {
        if line.trim_start().starts_with('%') || line.trim().is_empty() {
            continue;
        }
        size_line = Some((idx + 1, line));
        break;
    }
    let (size_no, size_line) =
        size_line.ok_or_else(|| parse_err(2, 1, "missing size line"))?;
    let size_toks = tokens(size_line);
    let expect_sizes = if coordinate { 3 } else { 2 };
    if size_toks.len() != expect_sizes {
        return Err(parse_err(
            size_no,
            1,
            format!("size line needs {expect_sizes} integers, found {}", size_toks.len()),
        ));
    }
    let nrows = parse_usize(size_no, size_toks[0].0, size_toks[0].1)?;
    let ncols = parse_usize(size_no, size_toks[1].0, size_toks[1].1)?;
    let mut m = DMatrix::zeros(nrows, ncols);

    if coordinate {
        let nnz = parse_usize(size_no, size_toks[2].0, size_toks[2].1)?;
        let mut seen = 0usize;
        for (idx, line) in &mut lines {
            let lineno = idx + 1;
            if line.trim_start().starts_with('%') || line.trim().is_empty() {
                continue;
            }
            let toks = tokens(line);
            if toks.len() != 3 {
                return Err(parse_err(lineno, 1, "coordinate entry needs 'i j value'"));
            }
            let i = parse_usize(lineno, toks[0].0, toks[0].1)?;
            let j = parse_usize(lineno, toks[1].0, toks[1].1)?;
            let v = parse_f64(lineno, toks[2].0, toks[2].1)?;
            if i == 0 || i > nrows || j == 0 || j > ncols {
                return Err(parse_err(
                    lineno,
                    toks[0].0,
                    format!("index ({i}, {j}) outside {nrows}x{ncols}"),
                ));
            }
            m[(i - 1, j - 1)] = v;
            if symmetric {
                m[(j - 1, i - 1)] = v;
            }
            seen += 1;
        }
        if seen != nnz {
            return Err(parse_err(
                text.lines().count() + 1,
                1,
                format!("expected {nnz} entries, found {seen}"),
            ));
        }
    } else {
        if symmetric && nrows != ncols {
            return Err(parse_err(size_no, 1, "symmetric array matrix must be square"));
        }
        let mut wanted = Vec::new();
        for j in 0..ncols {
            let i0 = if symmetric { j } else { 0 };
            for i in i0..nrows {
                wanted.push((i, j));
            }
        }
        let mut at = 0usize;
        for (idx, line) in &mut lines {
            let lineno = idx + 1;
            if line.trim_start().starts_with('%') || line.trim().is_empty() {
                continue;
            }
            for (col, tok) in tokens(line) {
                if at >= wanted.len() {
                    return Err(parse_err(lineno, col, "more values than the size line allows"));
                }
                let v = parse_f64(lineno, col, tok)?;
                let (i, j) = wanted[at];
                m[(i, j)] = v;
                if symmetric {
                    m[(j, i)] = v;
                }
                at += 1;
            }
        }
        if at != wanted.len() {
            return Err(parse_err(
                text.lines().count() + 1,
                1,
                format!("expected {} values, found {at}", wanted.len()),
            ));
        }
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// RFC-4180 field quoting: only applied when the field needs it.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Splits one CSV record, honoring quoted fields and doubled quotes.
fn csv_record(lineno: usize, line: &str) -> Result<Vec<String>> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.char_indices().peekable();
    let mut quoted = false;
    while let Some((i, ch)) = chars.next() {
        if quoted {
            if ch == '"' {
                if matches!(chars.peek(), Some((_, '"'))) {
                    cur.push('"');
                    chars.next();
                } else {
                    quoted = false;
                }
            } else {
                cur.push(ch);
            }
        } else {
            match ch {
                ',' => fields.push(std::mem::take(&mut cur)),
                '"' => {
                    if cur.is_empty() {
                        quoted = true;
                    } else {
                        return Err(parse_err(lineno, i + 1, "quote inside unquoted field"));
                    }
                }
                _ => cur.push(ch),
            }
        }
    }
    if quoted {
        return Err(parse_err(lineno, line.len() + 1, "unterminated quoted field"));
    }
    fields.push(cur);
    Ok(fields)
}

/// Header-free numeric CSV, one matrix row per record.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt(m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parses a header-free numeric CSV into a matrix; all records must have the
/// same arity.
pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields = csv_record(lineno, line)?;
        let mut row = Vec::with_capacity(fields.len());
        for (j, f) in fields.iter().enumerate() {
            row.push(parse_f64(lineno, j + 1, f.trim())?);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    lineno,
                    1,
                    format!("record has {} fields, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(1, 1, "empty CSV, expected at least one record"));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------------
// JSON matrix bundle
// ---------------------------------------------------------------------------

/// Row-major JSON rendering of a dense matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatrixJson { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Dimension {
                context: "matrix bundle",
                expected: format!("{} values", self.rows * self.cols),
                found: format!("{}", self.data.len()),
            });
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j]))
    }
}

fn json_of<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn json_parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| parse_err(e.line(), e.column().max(1), e.to_string()))
}

pub fn matrix_to_json(m: &DMatrix<f64>) -> String {
    json_of(&MatrixJson::from_matrix(m))
}

pub fn matrix_from_json(text: &str) -> Result<DMatrix<f64>> {
    json_parse::<MatrixJson>(text)?.to_matrix()
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Wide CSV of a sampled trajectory: `t, x0.., y0.., u0..`, one instant per
/// record.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let (n, q, p) = (traj.states.nrows(), traj.outputs.nrows(), traj.inputs.nrows());
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..q).map(|i| format!("y{i}")));
    header.extend((0..p).map(|i| format!("u{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for s in 0..traj.len() {
        let mut rec: Vec<String> = Vec::with_capacity(1 + n + q + p);
        rec.push(fmt(traj.times[s]));
        for i in 0..n {
            rec.push(fmt(traj.states[(i, s)]));
        }
        for i in 0..q {
            rec.push(fmt(traj.outputs[(i, s)]));
        }
        for i in 0..p {
            rec.push(fmt(traj.inputs[(i, s)]));
        }
        out.push_str(&rec.join(","));
        out.push('\n');
    }
    out
}

/// JSON sidecar carrying the trajectory provenance.
pub fn trajectory_meta_to_json(meta: &TrajectoryMeta) -> String {
    json_of(meta)
}

pub fn trajectory_meta_from_json(text: &str) -> Result<TrajectoryMeta> {
    json_parse(text)
}

/// Counts consecutive `prefix0, prefix1, ...` columns starting at `at`.
fn count_prefixed(header: &[String], at: usize, prefix: char) -> Result<usize> {
    let mut count = 0;
    while at + count < header.len() {
        let h = &header[at + count];
        let Some(rest) = h.strip_prefix(prefix) else { break };
        if rest.parse::<usize>() != Ok(count) {
            return Err(parse_err(1, 1, format!("unexpected column '{h}'")));
        }
        count += 1;
    }
    Ok(count)
}

/// Rebuilds a trajectory from its wide CSV and sidecar metadata.
pub fn trajectory_from_csv(csv: &str, meta: TrajectoryMeta) -> Result<Trajectory> {
    let mut lines = csv.lines().enumerate();
    let (_, header_line) = lines.next().ok_or_else(|| parse_err(1, 1, "empty trajectory CSV"))?;
    let header = csv_record(1, header_line.strip_suffix('\r').unwrap_or(header_line))?;
    if header.first().map(String::as_str) != Some("t") {
        return Err(parse_err(1, 1, "first column must be 't'"));
    }
    let n = count_prefixed(&header, 1, 'x')?;
    let q = count_prefixed(&header, 1 + n, 'y')?;
    let p = count_prefixed(&header, 1 + n + q, 'u')?;
    if 1 + n + q + p != header.len() {
        return Err(parse_err(1, 1, format!("unexpected column '{}'", header[1 + n + q + p])));
    }

    let mut times = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields = csv_record(lineno, line)?;
        if fields.len() != header.len() {
            return Err(parse_err(
                lineno,
                1,
                format!("record has {} fields, expected {}", fields.len(), header.len()),
            ));
        }
        times.push(parse_f64(lineno, 1, fields[0].trim())?);
        let mut row = Vec::with_capacity(header.len() - 1);
        for (j, f) in fields.iter().enumerate().skip(1) {
            row.push(parse_f64(lineno, j + 1, f.trim())?);
        }
        values.push(row);
    }
    let samples = times.len();
    if samples == 0 {
        return Err(parse_err(2, 1, "trajectory CSV has no samples"));
    }
    let states = DMatrix::from_fn(n, samples, |i, s| values[s][i]);
    let outputs = DMatrix::from_fn(q, samples, |i, s| values[s][n + i]);
    let inputs = DMatrix::from_fn(p, samples, |i, s| values[s][n + q + i]);
    Ok(Trajectory { times, states, outputs, inputs, meta })
}

// ---------------------------------------------------------------------------
// Quadratic system bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemManifest {
    name: String,
    n: usize,
    p: usize,
    q: usize,
    x_ss: Vec<f64>,
    files: SystemFiles,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SystemFiles {
    a0: String,
    b: String,
    c: String,
    quad: String,
}

/// Renders the quadratic tensor as `n nnz` followed by 1-based
/// `i j l value` lines.
fn quad_to_text(quad: &QuadTensor) -> String {
    let mut out = format!("{} {}\n", quad.n(), quad.nnz());
    for e in quad.entries() {
        out.push_str(&format!("{} {} {} {}\n", e.i + 1, e.j + 1, e.l + 1, fmt(e.value)));
    }
    out
}

fn quad_from_text(text: &str) -> Result<QuadTensor> {
    let mut lines = text.lines().enumerate();
    let (_, size_line) =
        lines.next().ok_or_else(|| parse_err(1, 1, "empty tensor file, expected 'n nnz'"))?;
    let toks = tokens(size_line);
    if toks.len() != 2 {
        return Err(parse_err(1, 1, "size line needs 'n nnz'"));
    }
    let n = parse_usize(1, toks[0].0, toks[0].1)?;
    let nnz = parse_usize(1, toks[1].0, toks[1].1)?;
    let mut entries = Vec::with_capacity(nnz);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks = tokens(line);
        if toks.len() != 4 {
            return Err(parse_err(lineno, 1, "tensor entry needs 'i j l value'"));
        }
        let i = parse_usize(lineno, toks[0].0, toks[0].1)?;
        let j = parse_usize(lineno, toks[1].0, toks[1].1)?;
        let l = parse_usize(lineno, toks[2].0, toks[2].1)?;
        let value = parse_f64(lineno, toks[3].0, toks[3].1)?;
        if i == 0 || j == 0 || l == 0 {
            return Err(parse_err(lineno, toks[0].0, "tensor indices are 1-based"));
        }
        entries.push(QuadEntry { i: (i - 1) as u32, j: (j - 1) as u32, l: (l - 1) as u32, value });
    }
    if entries.len() != nnz {
        return Err(parse_err(
            text.lines().count() + 1,
            1,
            format!("expected {nnz} entries, found {}", entries.len()),
        ));
    }
    QuadTensor::from_entries(n, entries)
}

/// Multi-file export of a quadratic system: a JSON manifest plus Matrix
/// Market factors and the tensor text. Returns `(name, content)` pairs.
pub fn quadratic_system_files(sys: &QuadraticSystem) -> Vec<(String, String)> {
    let manifest = SystemManifest {
        name: sys.name.clone(),
        n: sys.n,
        p: sys.p,
        q: sys.q,
        x_ss: sys.x_ss.iter().cloned().collect(),
        files: SystemFiles {
            a0: "a0.mtx".into(),
            b: "b.mtx".into(),
            c: "c.mtx".into(),
            quad: "quad.txt".into(),
        },
    };
    vec![
        ("system.json".into(), json_of(&manifest)),
        ("a0.mtx".into(), matrix_to_market_coordinate(&sys.a0, &sys.name)),
        ("b.mtx".into(), matrix_to_market(&sys.b, &sys.name)),
        ("c.mtx".into(), matrix_to_market(&sys.c, &sys.name)),
        ("quad.txt".into(), quad_to_text(&sys.quad)),
    ]
}

/// Rebuilds a quadratic system from its bundle; `load` maps a relative file
/// name (as listed in `system.json`) to its content.
pub fn quadratic_system_from_files(
    load: &mut dyn FnMut(&str) -> Result<String>,
) -> Result<QuadraticSystem> {
    let manifest: SystemManifest = json_parse(&load("system.json")?)?;
    let a0 = matrix_from_market(&load(&manifest.files.a0)?)?;
    let b = matrix_from_market(&load(&manifest.files.b)?)?;
    let c = matrix_from_market(&load(&manifest.files.c)?)?;
    let quad = quad_from_text(&load(&manifest.files.quad)?)?;
    let x_ss = DVector::from_vec(manifest.x_ss);
    QuadraticSystem::new(a0, quad, b, c, x_ss, manifest.name)
}

// ---------------------------------------------------------------------------
// LPV model bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelManifest {
    name: String,
    r: usize,
    k: usize,
    a_bar: Vec<String>,
    b_bar: String,
    c_bar: String,
    v_r: String,
    v_k: String,
}

/// Multi-file export of a reduced model: JSON manifest plus one Matrix
/// Market file per coefficient matrix. The cached full-order coefficients
/// are derived data and are not exported.
pub fn lpv_model_files(model: &AffineLpvModel) -> Vec<(String, String)> {
    let a_names: Vec<String> = (0..model.a_bar.len()).map(|i| format!("a_bar_{i}.mtx")).collect();
    let manifest = ModelManifest {
        name: model.name.clone(),
        r: model.r,
        k: model.k,
        a_bar: a_names.clone(),
        b_bar: "b_bar.mtx".into(),
        c_bar: "c_bar.mtx".into(),
        v_r: "v_r.mtx".into(),
        v_k: "v_k.mtx".into(),
    };
    let mut files = vec![("model.json".to_string(), json_of(&manifest))];
    for (name, m) in a_names.iter().zip(&model.a_bar) {
        files.push((name.clone(), matrix_to_market(m, &model.name)));
    }
    files.push(("b_bar.mtx".into(), matrix_to_market(&model.b_bar, &model.name)));
    files.push(("c_bar.mtx".into(), matrix_to_market(&model.c_bar, &model.name)));
    files.push(("v_r.mtx".into(), matrix_to_market(&model.v_r, &model.name)));
    files.push(("v_k.mtx".into(), matrix_to_market(&model.v_k, &model.name)));
    files
}

/// Rebuilds a reduced model from its bundle.
pub fn lpv_model_from_files(
    load: &mut dyn FnMut(&str) -> Result<String>,
) -> Result<AffineLpvModel> {
    let manifest: ModelManifest = json_parse(&load("model.json")?)?;
    if manifest.a_bar.len() != manifest.r + 1 {
        return Err(Error::Dimension {
            context: "model bundle",
            expected: format!("{} coefficient files", manifest.r + 1),
            found: format!("{}", manifest.a_bar.len()),
        });
    }
    let mut a_bar = Vec::with_capacity(manifest.a_bar.len());
    for name in &manifest.a_bar {
        a_bar.push(matrix_from_market(&load(name)?)?);
    }
    Ok(AffineLpvModel {
        r: manifest.r,
        k: manifest.k,
        a_bar,
        b_bar: matrix_from_market(&load(&manifest.b_bar)?)?,
        c_bar: matrix_from_market(&load(&manifest.c_bar)?)?,
        v_r: matrix_from_market(&load(&manifest.v_r)?)?,
        v_k: matrix_from_market(&load(&manifest.v_k)?)?,
        full_ai: None,
        name: manifest.name,
    })
}

// ---------------------------------------------------------------------------
// Polytope JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolytopeJson {
    kind: PolytopeKind,
    r: usize,
    vertices: MatrixJson,
    u_pc: Option<MatrixJson>,
    provenance: Provenance,
    fallback: bool,
    notes: Vec<String>,
}

/// Self-contained JSON rendering of a scheduling polytope.
pub fn polytope_to_json(w: &ParamPolytope) -> String {
    json_of(&PolytopeJson {
        kind: w.kind,
        r: w.r,
        vertices: MatrixJson::from_matrix(&w.vertices),
        u_pc: w.u_pc.as_ref().map(MatrixJson::from_matrix),
        provenance: w.provenance.clone(),
        fallback: w.fallback,
        notes: w.notes.clone(),
    })
}

pub fn polytope_from_json(text: &str) -> Result<ParamPolytope> {
    let raw: PolytopeJson = json_parse(text)?;
    let vertices = raw.vertices.to_matrix()?;
    let u_pc = raw.u_pc.as_ref().map(MatrixJson::to_matrix).transpose()?;
    let mut w = ParamPolytope::from_vertices(vertices, raw.kind, u_pc, raw.provenance)?;
    if w.r != raw.r {
        return Err(Error::Dimension {
            context: "polytope bundle",
            expected: format!("r = {}", raw.r),
            found: format!("r = {}", w.r),
        });
    }
    w.fallback = raw.fallback;
    w.notes = raw.notes;
    Ok(w)
}

// ---------------------------------------------------------------------------
// Controller JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ControllerJson {
    gamma: f64,
    k_c: usize,
    weights: PerformanceWeights,
    ak: Vec<MatrixJson>,
    bk: Vec<MatrixJson>,
    ck: Vec<MatrixJson>,
    dk: Vec<MatrixJson>,
    lyapunov: MatrixJson,
    frozen_vertex_norms: Vec<f64>,
    polytope: PolytopeJson,
}

/// Self-contained JSON rendering of a vertex controller set.
pub fn controller_to_json(ctrl: &VertexControllerSet) -> String {
    let pack = |ms: &[DMatrix<f64>]| ms.iter().map(MatrixJson::from_matrix).collect();
    json_of(&ControllerJson {
        gamma: ctrl.gamma,
        k_c: ctrl.k_c,
        weights: ctrl.weights,
        ak: pack(&ctrl.ak),
        bk: pack(&ctrl.bk),
        ck: pack(&ctrl.ck),
        dk: pack(&ctrl.dk),
        lyapunov: MatrixJson::from_matrix(&ctrl.lyapunov),
        frozen_vertex_norms: ctrl.frozen_vertex_norms.clone(),
        polytope: json_parse(&polytope_to_json(&ctrl.polytope)).expect("round trip"),
    })
}

pub fn controller_from_json(text: &str) -> Result<VertexControllerSet> {
    let raw: ControllerJson = json_parse(text)?;
    let unpack = |ms: &[MatrixJson]| -> Result<Vec<DMatrix<f64>>> {
        ms.iter().map(MatrixJson::to_matrix).collect()
    };
    let (ak, bk, ck, dk) =
        (unpack(&raw.ak)?, unpack(&raw.bk)?, unpack(&raw.ck)?, unpack(&raw.dk)?);
    let nv = ak.len();
    if bk.len() != nv || ck.len() != nv || dk.len() != nv || nv == 0 {
        return Err(Error::Dimension {
            context: "controller bundle",
            expected: format!("{nv} gains per channel"),
            found: format!("{}/{}/{}/{}", ak.len(), bk.len(), ck.len(), dk.len()),
        });
    }
    let polytope = polytope_from_json(&json_of(&raw.polytope))?;
    if polytope.n_vertices() != nv {
        return Err(Error::Dimension {
            context: "controller bundle",
            expected: format!("{} vertex gains", polytope.n_vertices()),
            found: format!("{nv}"),
        });
    }
    Ok(VertexControllerSet {
        ak,
        bk,
        ck,
        dk,
        gamma: raw.gamma,
        lyapunov: raw.lyapunov.to_matrix()?,
        weights: raw.weights,
        k_c: raw.k_c,
        polytope,
        frozen_vertex_norms: raw.frozen_vertex_norms,
    })
}

// ---------------------------------------------------------------------------
// Closed-loop artifacts
// ---------------------------------------------------------------------------

/// One exit event per line, JSON objects.
pub fn exit_events_to_jsonl(events: &[ExitEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("serializable event"));
        out.push('\n');
    }
    out
}

pub fn exit_events_from_jsonl(text: &str) -> Result<Vec<ExitEvent>> {
    let mut events = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ExitEvent = serde_json::from_str(line)
            .map_err(|e| parse_err(idx + 1, e.column().max(1), e.to_string()))?;
        events.push(e);
    }
    Ok(events)
}

/// Two-column CSV of a phase portrait with labeled header.
pub fn portrait_to_csv(points: &[(f64, f64)], labels: (&str, &str)) -> String {
    let mut out = format!("{},{}\n", csv_field(labels.0), csv_field(labels.1));
    for (a, b) in points {
        out.push_str(&format!("{},{}\n", fmt(*a), fmt(*b)));
    }
    out
}

pub fn portrait_from_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().enumerate();
    lines.next().ok_or_else(|| parse_err(1, 1, "empty portrait CSV"))?;
    let mut points = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields = csv_record(lineno, line)?;
        if fields.len() != 2 {
            return Err(parse_err(lineno, 1, "portrait record needs two fields"));
        }
        points.push((parse_f64(lineno, 1, fields[0].trim())?, parse_f64(lineno, 2, fields[1].trim())?));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::OdeOptions;
    use crate::pod::{build_affine_lpv, lpv_rhs, pod_basis};
    use crate::polytope::{bounding_box, pca_box};
    use crate::sdc::{make_benchmark, quadratic_rhs};
    use crate::signal::SignalSpec;
    use crate::trajectory::{integrate, snapshot_matrix, InputSource};
    use std::collections::BTreeMap;
    use std::collections::HashMap;

    fn sample_matrix() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            3,
            &[1.0, -2.5e-17, 0.0, 1.0 / 3.0, 6.02e23, -1.25e-308],
        )
    }

    #[test]
    fn market_array_round_trip_is_exact() {
        let m = sample_matrix();
        let text = matrix_to_market(&m, "test matrix");
        let back = matrix_from_market(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn market_coordinate_round_trip_is_exact() {
        let m = sample_matrix();
        let text = matrix_to_market_coordinate(&m, "sparse form");
        assert!(text.contains("coordinate"));
        let back = matrix_from_market(&text).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn market_symmetric_variant_fills_both_triangles() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 4\n2 1 -1\n";
        let m = matrix_from_market(text).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 0.0]));
    }

    #[test]
    fn malformed_market_header_reports_line_one() {
        let err = matrix_from_market("%%NotMarket stuff\n1 1\n0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn market_entry_errors_carry_position() {
        let text = "%%MatrixMarket matrix array real general\n2 1\n1.0\nbogus\n";
        let err = matrix_from_market(text).unwrap_err();
        match err {
            Error::Parse { line, col, .. } => {
                assert_eq!(line, 4);
                assert_eq!(col, 1);
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn csv_and_json_matrix_round_trips_are_exact() {
        let m = sample_matrix();
        assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m);
        assert_eq!(matrix_from_json(&matrix_to_json(&m)).unwrap(), m);
    }

    #[test]
    fn csv_quoting_survives_commas_and_quotes() {
        let header = csv_field("a,\"b\"");
        assert_eq!(header, "\"a,\"\"b\"\"\"");
        let rec = csv_record(1, &header).unwrap();
        assert_eq!(rec, vec!["a,\"b\"".to_string()]);
    }

    #[test]
    fn trajectory_round_trip_preserves_every_sample() {
        let sys = make_benchmark("lorenz", &BTreeMap::new()).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let traj = integrate(
            &sys,
            &x0,
            InputSource::Signal(&SignalSpec::Zero),
            (0.0, 1.0),
            11,
            &OdeOptions::default(),
        )
        .unwrap();
        let csv = trajectory_to_csv(&traj);
        let meta = trajectory_meta_from_json(&trajectory_meta_to_json(&traj.meta)).unwrap();
        let back = trajectory_from_csv(&csv, meta).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.outputs, traj.outputs);
        assert_eq!(back.inputs, traj.inputs);
        assert_eq!(back.meta.model, traj.meta.model);
    }

    fn load_from(map: &HashMap<String, String>) -> impl FnMut(&str) -> Result<String> + '_ {
        move |name: &str| {
            map.get(name)
                .cloned()
                .ok_or_else(|| Error::StageDependency(format!("missing bundle file '{name}'")))
        }
    }

    #[test]
    fn quadratic_system_bundle_round_trips() {
        let mut params = BTreeMap::new();
        params.insert("n".to_string(), 8.0);
        let sys = make_benchmark("burgers", &params).unwrap();
        let files: HashMap<String, String> = quadratic_system_files(&sys).into_iter().collect();
        let mut load = load_from(&files);
        let back = quadratic_system_from_files(&mut load).unwrap();
        assert_eq!(back.a0, sys.a0);
        assert_eq!(back.b, sys.b);
        assert_eq!(back.c, sys.c);
        assert_eq!(back.x_ss, sys.x_ss);
        assert_eq!(back.name, sys.name);
        let x = DVector::from_fn(8, |i, _| 0.1 * (i as f64 + 1.0));
        let u = DVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(
            quadratic_rhs(&sys, &x, &u).unwrap(),
            quadratic_rhs(&back, &x, &u).unwrap()
        );
    }

    #[test]
    fn lpv_bundle_round_trip_reproduces_rhs_exactly() {
        let sys = make_benchmark("lorenz", &BTreeMap::new()).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let traj = integrate(
            &sys,
            &x0,
            InputSource::Signal(&SignalSpec::Zero),
            (0.0, 4.0),
            101,
            &OdeOptions::default(),
        )
        .unwrap();
        let snaps = snapshot_matrix(&[&traj]).unwrap();
        let basis = pod_basis(&snaps, 3).unwrap();
        let model = build_affine_lpv(&sys, &basis, 3, 2).unwrap();
        let files: HashMap<String, String> = lpv_model_files(&model).into_iter().collect();
        let mut load = load_from(&files);
        let back = lpv_model_from_files(&mut load).unwrap();
        let rho = DVector::from_vec(vec![0.3, -0.7, 0.1]);
        let u = DVector::zeros(model.p());
        assert_eq!(lpv_rhs(&model, &rho, &u).unwrap(), lpv_rhs(&back, &rho, &u).unwrap());
        assert_eq!(back.v_k, model.v_k);
    }

    #[test]
    fn polytope_json_round_trips_with_rotation() {
        let pts = DMatrix::from_fn(3, 40, |i, j| ((i + 1) * (j + 3)) as f64 % 7.0 - 3.0);
        let (w, _) = pca_box(&pts, &[]).unwrap();
        let back = polytope_from_json(&polytope_to_json(&w)).unwrap();
        assert_eq!(back.vertices, w.vertices);
        assert_eq!(back.kind, w.kind);
        assert_eq!(back.u_pc, w.u_pc);
        assert_eq!(back.provenance, w.provenance);
        assert_eq!(back.fallback, w.fallback);
        assert_eq!(back.notes, w.notes);
    }

    #[test]
    fn controller_json_round_trips() {
        let cloud = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        let w = bounding_box(&cloud, 0.0).unwrap();
        let gain = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]);
        let ctrl = VertexControllerSet {
            ak: vec![gain.clone(); 2],
            bk: vec![DMatrix::from_element(2, 1, 0.25); 2],
            ck: vec![DMatrix::from_element(1, 2, -0.5); 2],
            dk: vec![DMatrix::zeros(1, 1); 2],
            gamma: 1.75,
            lyapunov: DMatrix::identity(4, 4) * 2.0,
            weights: PerformanceWeights::default(),
            k_c: 2,
            polytope: w,
            frozen_vertex_norms: vec![1.2, 1.3],
        };
        let back = controller_from_json(&controller_to_json(&ctrl)).unwrap();
        assert_eq!(back.ak, ctrl.ak);
        assert_eq!(back.bk, ctrl.bk);
        assert_eq!(back.ck, ctrl.ck);
        assert_eq!(back.dk, ctrl.dk);
        assert_eq!(back.gamma, ctrl.gamma);
        assert_eq!(back.lyapunov, ctrl.lyapunov);
        assert_eq!(back.frozen_vertex_norms, ctrl.frozen_vertex_norms);
        assert_eq!(back.polytope.vertices, ctrl.polytope.vertices);
    }

    #[test]
    fn exit_events_jsonl_round_trips() {
        let events = vec![
            ExitEvent { time: 0.5, magnitude: 1e-3, action: "projected".into() },
            ExitEvent { time: 0.75, magnitude: 2e-2, action: "hard_error".into() },
        ];
        let text = exit_events_to_jsonl(&events);
        let back = exit_events_from_jsonl(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].time, events[0].time);
        assert_eq!(back[1].action, events[1].action);
    }

    #[test]
    fn portrait_csv_round_trips() {
        let pts = vec![(0.1, -0.2), (1.0 / 3.0, 2.5e-14)];
        let text = portrait_to_csv(&pts, ("y1", "y5"));
        assert!(text.starts_with("y1,y5\n"));
        let back = portrait_from_csv(&text).unwrap();
        assert_eq!(back, pts);
    }
}
