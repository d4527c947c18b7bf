//! Dataset text format: a JSON header object on the first line, then one
//! JSON array per transition laid out as `[s..., a..., r, s'..., done]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::numfmt::format_real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub count: usize,
    pub provenance: String,
}

pub fn write_dataset<W: Write>(dataset: &OfflineDataset, mut out: W) -> std::io::Result<()> {
    let header = DatasetHeader {
        obs_dim: dataset.obs_dim(),
        act_dim: dataset.act_dim(),
        count: dataset.len(),
        provenance: dataset.provenance().to_owned(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    let mut fields = Vec::with_capacity(2 * dataset.obs_dim() + dataset.act_dim() + 2);
    for t in dataset.iter() {
        fields.clear();
        fields.extend(t.s.iter().map(|v| format_real(*v)));
        fields.extend(t.a.iter().map(|v| format_real(*v)));
        fields.push(format_real(t.r));
        fields.extend(t.s_next.iter().map(|v| format_real(*v)));
        fields.push(if t.done { "1".into() } else { "0".into() });
        writeln!(out, "[{}]", fields.join(","))?;
    }
    out.flush()
}

fn parse_row(line: &str, header: &DatasetHeader, line_no: usize) -> Result<Transition> {
    let err = |message: String| Error::Parse { line: line_no, message };
    let inner = line
        .trim()
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| err("row must be a JSON array".into()))?;
    let values = inner
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| err(format!("bad number `{}`: {e}", f.trim()))))
        .collect::<Result<Vec<_>>>()?;
    let (o, a) = (header.obs_dim, header.act_dim);
    let expected = 2 * o + a + 2;
    if values.len() != expected {
        return Err(err(format!("expected {expected} fields, found {}", values.len())));
    }
    let done = match values[expected - 1] {
        0.0 => false,
        1.0 => true,
        d => return Err(err(format!("done flag must be 0 or 1, found {d}"))),
    };
    Ok(Transition {
        s: values[..o].to_vec(),
        a: values[o..o + a].to_vec(),
        r: values[o + a],
        s_next: values[o + a + 1..2 * o + a + 1].to_vec(),
        done,
    })
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<OfflineDataset> {
    let mut lines = input.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::Parse { line: 1, message: e.to_string() })?,
        None => return Err(Error::Parse { line: 1, message: "missing header".into() }),
    };
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Parse { line: 1, message: format!("bad header: {e}") })?;
    let mut transitions = Vec::with_capacity(header.count);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        transitions.push(parse_row(&line, &header, line_no)?);
    }
    if transitions.len() != header.count {
        return Err(Error::Parse {
            line: 1,
            message: format!("header declares {} transitions, file holds {}", header.count, transitions.len()),
        });
    }
    OfflineDataset::from_transitions(&transitions, header.obs_dim, header.act_dim, header.provenance)
}

pub fn save_dataset(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, BehaviorLevel, ScriptedPolicy};
    use crate::env::WorldConfig;

    #[test]
    fn save_then_load_is_identity() {
        let d = generate_dataset(&WorldConfig::default(), &ScriptedPolicy::for_level(BehaviorLevel::Random), 300, 1)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&d, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), d);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let text = "{\"obs_dim\":1,\"act_dim\":1,\"count\":2,\"provenance\":\"x\"}\n[0,0,0,0,1]\n";
        let err = read_dataset(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let text = "{\"obs_dim\":1,\"act_dim\":1,\"count\":2,\"provenance\":\"x\"}\n[0,0,0,0,1]\n[0,0,zz,0,0]\n";
        match read_dataset(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let text = "{\"obs_dim\":1,\"act_dim\":1,\"count\":1,\"provenance\":\"x\"}\n[0,0,0,0,2]\n";
        assert!(read_dataset(text.as_bytes()).is_err());
        assert!(read_dataset("not json\n".as_bytes()).is_err());
    }

    #[test]
    fn golden_fixture_loads() {
        let d = read_dataset(&include_bytes!("../../tests/fixtures/dataset_small.jsonl")[..]).unwrap();
        assert_eq!((d.len(), d.obs_dim(), d.act_dim(), d.provenance()), (3, 3, 2, "fixture"));
        let first = d.get(0);
        assert_eq!(first.s, vec![1.5, -0.25, 0.75]);
        assert_eq!(first.a, vec![0.5, -1.0]);
        assert_eq!(first.r, -3.125);
        assert_eq!(first.s_next, vec![1.25, 0.0, 1.0]);
        assert!(!first.done);
        assert!(d.get(2).done);
    }
}
