//! Stratified splitting, batching and split manifests.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{GateError, Result};
use crate::rng::{self, GateRng};
use crate::task::Task;

/// How many of `n` items each fraction receives: floors first, then the
/// leftover items go to the largest fractional parts (earlier split on ties).
pub fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let ideal: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn check_fractions(fractions: &[f64; 3]) -> Result<()> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 || fractions[0] == 0.0 {
        return Err(GateError::InvalidConfig(vec![format!(
            "split fractions must be non-negative with a positive train share and sum to 1, got {fractions:?}"
        )]));
    }
    Ok(())
}

/// Row indices for `(train, val, test)`, each sorted. Classification keeps
/// per-class proportions; regression is a seeded shuffle split. A zero
/// fraction yields an empty split.
pub fn stratified_split(targets: &[f64], task: Task, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    check_fractions(&fractions)?;
    let mut rng = rng::seeded(seed);
    let mut out: [Vec<usize>; 3] = Default::default();
    let groups: Vec<(String, Vec<usize>)> = if task.is_classification() {
        (0..task.classes())
            .map(|k| {
                let rows = (0..targets.len()).filter(|&r| targets[r] == k as f64).collect();
                (k.to_string(), rows)
            })
            .collect()
    } else {
        vec![("all".to_string(), (0..targets.len()).collect())]
    };
    let splits = fractions.iter().filter(|f| **f > 0.0).count();
    for (name, mut rows) in groups {
        if task.is_classification() && rows.len() < splits {
            return Err(GateError::ClassTooSmall {
                class: name,
                rows: rows.len(),
                splits,
            });
        }
        rows.shuffle(&mut rng);
        let mut start = 0;
        for (split, count) in allocate(rows.len(), &fractions).into_iter().enumerate() {
            out[split].extend_from_slice(&rows[start..start + count]);
            start += count;
        }
    }
    for s in &mut out {
        s.sort_unstable();
    }
    Ok(out)
}

/// Mini-batches of `0..n` in a fresh random order drawn from `rng`; the
/// last batch may be short.
pub fn batch_iter(n: usize, batch_size: usize, rng: &mut GateRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub fn write_manifest(path: &Path, indices: &[usize]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| GateError::io(path, e))?);
    for i in indices {
        writeln!(file, "{i}").map_err(|e| GateError::io(path, e))?;
    }
    file.flush().map_err(|e| GateError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<usize>> {
    let file = std::fs::File::open(path).map_err(|e| GateError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GateError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(line.trim().parse().map_err(|_| {
            GateError::Data(format!("{}:{}: not a row index: {line:?}", path.display(), n + 1))
        })?);
    }
    Ok(out)
}
