//! JODIE-format CSV: a header line, then
//! `user_id,item_id,timestamp,state_label,f1,...,fk`.
//!
//! Users keep their ids; items are offset by the user count so both share one
//! contiguous id space. Node features, which the format cannot carry, go to
//! an optional sidecar `<stem>.nodes.csv` with rows `node,x0,...`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Event, EventStream};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

struct RawRow {
    user: usize,
    item: usize,
    t: f64,
    label: i64,
    feat: Vec<f64>,
}

fn parse_field<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} `{}`", s.trim()),
    })
}

fn parse_label(s: &str, line: usize) -> Result<i64> {
    let v: f64 = parse_field(s, "state_label", line)?;
    if v.fract() != 0.0 {
        return Err(Error::Parse {
            line,
            msg: format!("state_label `{}` is not an integer", s.trim()),
        });
    }
    Ok(v as i64)
}

/// Parse JODIE CSV text. Line numbers in errors are 1-based and count the header.
pub fn parse_jodie(reader: impl BufRead) -> Result<EventStream> {
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least 4 columns, found {}", fields.len()),
            });
        }
        if *width.get_or_insert(fields.len()) != fields.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} columns, found {}", width.unwrap(), fields.len()),
            });
        }
        let feat = fields[4..]
            .iter()
            .map(|f| parse_field(f, "feature", line_no))
            .collect::<Result<Vec<f64>>>()?;
        let t: f64 = parse_field(fields[2], "timestamp", line_no)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("timestamp {t} must be finite and non-negative"),
            });
        }
        rows.push(RawRow {
            user: parse_field(fields[0], "user_id", line_no)?,
            item: parse_field(fields[1], "item_id", line_no)?,
            t,
            label: parse_label(fields[3], line_no)?,
            feat,
        });
    }
    let num_users = rows.iter().map(|r| r.user + 1).max().unwrap_or(0);
    let num_items = rows.iter().map(|r| r.item + 1).max().unwrap_or(0);
    let events = rows
        .into_iter()
        .map(|r| Event {
            src: r.user,
            dst: num_users + r.item,
            t: r.t,
            edge_feat: r.feat,
            state_label: Some(r.label),
        })
        .collect();
    EventStream::new(events, num_users + num_items)?.with_bipartite(num_users)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.nodes.csv"))
}

/// Load a JODIE CSV, plus node features from its sidecar when one exists.
pub fn load_jodie_csv(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let stream = parse_jodie(BufReader::new(file))?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(stream);
    }
    let file = File::open(&side).map_err(|e| Error::io(&side, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&side, e))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let node: usize = parse_field(fields.next().unwrap_or(""), "node", i + 1)?;
        if node != rows.len() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("node rows must be dense and ordered, got {node}"),
            });
        }
        rows.push(
            fields
                .map(|f| parse_field(f, "node feature", i + 1))
                .collect::<Result<_>>()?,
        );
    }
    let d_x = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let feat = Tensor::new(n, d_x, flat).map_err(|_| Error::Parse {
        line: 0,
        msg: format!("ragged node feature rows in {}", side.display()),
    })?;
    stream.with_node_features(feat)
}

/// Write a bipartite stream in JODIE format (sources are users, destinations
/// items). Writes the node-feature sidecar when the stream has node features.
pub fn write_jodie_csv(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let num_users = stream
        .num_sources()
        .ok_or_else(|| Error::config("stream", "JODIE output requires a bipartite stream"))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..stream.d_e()).map(|i| format!("f{i}")).collect();
    let mut head = String::from("user_id,item_id,timestamp,state_label");
    for h in &header {
        head.push(',');
        head.push_str(h);
    }
    writeln!(w, "{head}").map_err(io)?;
    for e in stream.events() {
        if e.src >= num_users || e.dst < num_users {
            return Err(Error::config(
                "stream",
                format!("event {}->{} does not go user->item", e.src, e.dst),
            ));
        }
        write!(
            w,
            "{},{},{},{}",
            e.src,
            e.dst - num_users,
            e.t,
            e.state_label.unwrap_or(0)
        )
        .map_err(io)?;
        for f in &e.edge_feat {
            write!(w, ",{f}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;
    if let Some(feat) = stream.node_features() {
        write_node_features(feat, sidecar_path(path))?;
    }
    Ok(())
}

pub fn write_node_features(feat: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let cols: Vec<String> = (0..feat.cols()).map(|i| format!("x{i}")).collect();
    writeln!(w, "node,{}", cols.join(",")).map_err(io)?;
    for r in 0..feat.rows() {
        let vals: Vec<String> = feat.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{r},{}", vals.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}
