//! On-disk formats. Structured data is JSON carrying `"format_version": 1`;
//! bulk arrays go to little-endian `f64` sidecar files named in the header.
//! Particle sets and plans are JSON Lines: a header line, then one particle
//! per line. Every write goes to a temporary file that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenized::CapacitanceDensityField;
use crate::inverse::AmplitudeTable;
use crate::manybody::{Particle, ParticleSet};
use crate::planner::ParticlePlan;
use crate::quadrature::{build_ball_grid, SphereQuadrature};

pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temporary file, syncs it, and renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
}

fn encode_f64(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

fn decode_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("sidecar length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn sidecar_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

fn resolve_sidecar(header: &Path, name: &str) -> PathBuf {
    header.parent().map(|d| d.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

fn check_version(found: u32, kind: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format(format!("{kind} file has format_version {found}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

fn check_kind(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!("expected a {expected} file, found kind \"{found}\"")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleHeader {
    degree: usize,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl RuleHeader {
    fn from_rule(q: &SphereQuadrature) -> Self {
        Self { degree: q.degree(), nodes: q.nodes().to_vec(), weights: q.weights().to_vec() }
    }

    fn into_rule(self) -> Result<SphereQuadrature> {
        SphereQuadrature::from_parts(self.nodes, self.weights, self.degree)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableHeader {
    format_version: u32,
    kind: String,
    k: f64,
    outgoing: RuleHeader,
    incoming: RuleHeader,
    /// Sidecar with `(re, im)` pairs, row-major over (outgoing, incoming).
    data: String,
}

pub fn write_amplitude_table(path: &Path, table: &AmplitudeTable) -> Result<()> {
    let side = sidecar_path(path);
    let header = TableHeader {
        format_version: FORMAT_VERSION,
        kind: "amplitude_table".into(),
        k: table.k(),
        outgoing: RuleHeader::from_rule(table.outgoing()),
        incoming: RuleHeader::from_rule(table.incoming()),
        data: side.file_name().unwrap().to_string_lossy().into_owned(),
    };
    write_atomic(&side, &encode_f64(table.values().iter().flat_map(|z| [z.re, z.im])))?;
    write_json(path, &header)
}

pub fn read_amplitude_table(path: &Path) -> Result<AmplitudeTable> {
    let h: TableHeader = read_json(path)?;
    check_version(h.format_version, "amplitude table")?;
    check_kind(&h.kind, "amplitude_table")?;
    let raw = decode_f64(&fs::read(resolve_sidecar(path, &h.data))?)?;
    let values: Vec<Complex64> = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    AmplitudeTable::new(h.k, h.outgoing.into_rule()?, h.incoming.into_rule()?, values)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityHeader {
    format_version: u32,
    kind: String,
    b0: f64,
    spacing: f64,
    points: usize,
    total: f64,
    data: String,
}

/// The grid itself is not stored: it is rebuilt from `b0` and the spacing.
pub fn write_density(path: &Path, density: &CapacitanceDensityField) -> Result<()> {
    let side = sidecar_path(path);
    let header = DensityHeader {
        format_version: FORMAT_VERSION,
        kind: "capacitance_density".into(),
        b0: density.b0(),
        spacing: density.spacing(),
        points: density.values().len(),
        total: density.total(),
        data: side.file_name().unwrap().to_string_lossy().into_owned(),
    };
    write_atomic(&side, &encode_f64(density.values().iter().copied()))?;
    write_json(path, &header)
}

pub fn read_density(path: &Path) -> Result<CapacitanceDensityField> {
    let h: DensityHeader = read_json(path)?;
    check_version(h.format_version, "density")?;
    check_kind(&h.kind, "capacitance_density")?;
    let values = decode_f64(&fs::read(resolve_sidecar(path, &h.data))?)?;
    let grid = build_ball_grid(h.b0, h.spacing)?;
    if values.len() != grid.len() || values.len() != h.points {
        return Err(Error::Format(format!(
            "density sidecar holds {} values but the grid for b0 = {}, h = {} has {} points",
            values.len(),
            h.b0,
            h.spacing,
            grid.len()
        )));
    }
    CapacitanceDensityField::new(grid, values, h.b0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticleRecord {
    position: [f64; 3],
    radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticlesHeader {
    format_version: u32,
    kind: String,
    count: usize,
}

/// Header fields of a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanHeader {
    pub format_version: u32,
    pub kind: String,
    pub count: usize,
    pub radius: f64,
    pub capacitance: f64,
    pub seed: u64,
    pub expected_count: f64,
    pub target_count: usize,
    pub hard_core_distance: f64,
    pub oversampling: f64,
    /// Path of the density the plan was drawn from, if known.
    pub target_reference: Option<String>,
}

fn particle_lines(out: &mut String, particles: &ParticleSet) -> Result<()> {
    for p in particles.particles() {
        out.push_str(&serde_json::to_string(&ParticleRecord { position: p.position, radius: p.radius })?);
        out.push('\n');
    }
    Ok(())
}

pub fn write_particles(path: &Path, particles: &ParticleSet) -> Result<()> {
    let mut s = serde_json::to_string(&ParticlesHeader {
        format_version: FORMAT_VERSION,
        kind: "particles".into(),
        count: particles.len(),
    })?;
    s.push('\n');
    particle_lines(&mut s, particles)?;
    write_atomic(path, s.as_bytes())
}

pub fn write_plan(path: &Path, plan: &ParticlePlan, target_reference: Option<String>) -> Result<()> {
    let header = PlanHeader {
        format_version: FORMAT_VERSION,
        kind: "plan".into(),
        count: plan.count(),
        radius: plan.radius,
        capacitance: plan.capacitance,
        seed: plan.seed,
        expected_count: plan.expected_count,
        target_count: plan.target_count,
        hard_core_distance: plan.hard_core_distance,
        oversampling: plan.oversampling,
        target_reference,
    };
    let mut s = serde_json::to_string(&header)?;
    s.push('\n');
    particle_lines(&mut s, &plan.particles)?;
    write_atomic(path, s.as_bytes())
}

fn parse_line<T: DeserializeOwned>(line: &str, number: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse { line: number, message: e.to_string() })
}

/// Reads a particle or plan file; plan headers are returned when present.
pub fn read_particles(path: &Path) -> Result<(ParticleSet, Option<PlanHeader>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty());
    let Some((n, first)) = lines.next() else {
        return Err(Error::Parse { line: 1, message: "empty file, expected a header line".into() });
    };
    let value: serde_json::Value = parse_line(first, n)?;
    let kind = value.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
    let (count, plan) = match kind.as_str() {
        "particles" => {
            let h: ParticlesHeader = serde_json::from_value(value).map_err(|e| Error::Parse { line: n, message: e.to_string() })?;
            check_version(h.format_version, "particle")?;
            (h.count, None)
        }
        "plan" => {
            let h: PlanHeader = serde_json::from_value(value).map_err(|e| Error::Parse { line: n, message: e.to_string() })?;
            check_version(h.format_version, "plan")?;
            (h.count, Some(h))
        }
        other => return Err(Error::Parse { line: n, message: format!("unknown file kind \"{other}\"") }),
    };
    let mut particles = Vec::with_capacity(count);
    let mut last = n;
    for (n, line) in lines {
        let r: ParticleRecord = parse_line(line, n)?;
        let p = Particle::sphere(r.position, r.radius).map_err(|e| Error::Parse { line: n, message: e.to_string() })?;
        particles.push(p);
        last = n;
    }
    if particles.len() != count {
        return Err(Error::Parse { line: last, message: format!("header announces {count} particles, found {}", particles.len()) });
    }
    Ok((ParticleSet::new(particles)?, plan))
}

/// Columnar text: a `#`-prefixed header line followed by whitespace
/// separated rows.
pub fn write_columns(path: &Path, names: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut s = format!("# {}\n", names.join(" "));
    for row in rows {
        if row.len() != names.len() {
            return Err(Error::Format(format!("row has {} columns, header has {}", row.len(), names.len())));
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = AmplitudeTable::from_fn(1.5, SphereQuadrature::new(4).unwrap(), SphereQuadrature::new(2).unwrap(), |o, a| {
            Complex64::new(o[0] - a[1], o[2] * a[2])
        })
        .unwrap();
        let p = dir.path().join("t.json");
        write_amplitude_table(&p, &t).unwrap();
        assert_eq!(read_amplitude_table(&p).unwrap(), t);
    }

    #[test]
    fn bad_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        fs::write(&p, "{\"format_version\":1,\"kind\":\"particles\",\"count\":2}\n{\"position\":[0,0,0],\"radius\":0.01}\n{\"position\":[1,0],\"radius\":0.01}\n").unwrap();
        match read_particles(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
