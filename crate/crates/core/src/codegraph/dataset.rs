//! Per-split graph files: concatenated `u64` length-prefixed serialized
//! graphs, plus a `.idx.jsonl` sidecar with one entry per graph.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::ProgramGraph;
use super::serialize::{deserialize_graph, serialize_graph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphIndexEntry {
    pub problem_id: String,
    pub solution_id: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecord {
    pub problem_id: String,
    pub solution_id: String,
    pub graph: ProgramGraph,
}

pub fn index_path(dataset: &Path) -> PathBuf {
    let mut s = dataset.as_os_str().to_owned();
    s.push(".idx.jsonl");
    PathBuf::from(s)
}

pub fn write_graph_dataset(path: &Path, records: &[GraphRecord]) -> Result<()> {
    let mut data = BufWriter::new(File::create(path)?);
    let mut index = BufWriter::new(File::create(index_path(path))?);
    let mut offset = 0u64;
    for r in records {
        let bytes = serialize_graph(&r.graph);
        data.write_all(&(bytes.len() as u64).to_le_bytes())?;
        data.write_all(&bytes)?;
        let entry = GraphIndexEntry {
            problem_id: r.problem_id.clone(),
            solution_id: r.solution_id.clone(),
            offset,
        };
        serde_json::to_writer(&mut index, &entry)?;
        index.write_all(b"\n")?;
        offset += 8 + bytes.len() as u64;
    }
    data.flush()?;
    index.flush()?;
    Ok(())
}

pub fn read_graph_index(path: &Path) -> Result<Vec<GraphIndexEntry>> {
    let idx = index_path(path);
    let file = File::open(&idx).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(idx.clone()),
        _ => e.into(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            file: idx.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_graph_dataset(path: &Path) -> Result<Vec<GraphRecord>> {
    let index = read_graph_index(path)?;
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    index
        .into_iter()
        .map(|entry| {
            let start = entry.offset as usize;
            let header = bytes
                .get(start..start + 8)
                .ok_or_else(|| Error::GraphFormat(format!("truncated dataset at offset {start}")))?;
            let len = u64::from_le_bytes(header.try_into().unwrap()) as usize;
            let payload = bytes
                .get(start + 8..(start + 8).saturating_add(len))
                .ok_or_else(|| Error::GraphFormat(format!("truncated dataset at offset {start}")))?;
            Ok(GraphRecord {
                problem_id: entry.problem_id,
                solution_id: entry.solution_id,
                graph: deserialize_graph(payload)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegraph::source_to_graph;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.graphs");
        let records: Vec<GraphRecord> = ["int a;", "int main(){return 0;}", ""]
            .iter()
            .enumerate()
            .map(|(i, s)| GraphRecord {
                problem_id: format!("p{}", i / 2),
                solution_id: format!("s{i}"),
                graph: source_to_graph(s),
            })
            .collect();
        write_graph_dataset(&path, &records).unwrap();
        assert_eq!(read_graph_dataset(&path).unwrap(), records);
        let idx = read_graph_index(&path).unwrap();
        assert_eq!(idx[0].offset, 0);
        assert!(idx[1].offset > 8);
    }
}
