//! Binary solution checkpoints with a labeled ASCII header.
//!
//! ```text
//! INFHARM-CHECKPOINT
//! version 1
//! experiment triple
//! ...
//! end_header
//! <num_values little-endian f64, vertex-major, component-minor>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fespace::VectorField;
use crate::mesh::TriMesh;
use crate::solver::StageRecord;

pub const MAGIC: &str = "INFHARM-CHECKPOINT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub experiment: String,
    pub n_components: usize,
    pub mesh_m: usize,
    pub p: f64,
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub log_energy: f64,
    pub energy_root: f64,
    pub lift_energy_root: f64,
    pub inserted: bool,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn from_stage(experiment: &str, mesh_m: usize, record: &StageRecord, field: &VectorField) -> Self {
        Checkpoint {
            experiment: experiment.to_string(),
            n_components: field.n_components(),
            mesh_m,
            p: record.p,
            newton_iterations: record.newton_iterations,
            final_residual: record.final_residual,
            log_energy: record.log_energy,
            energy_root: record.energy_root,
            lift_energy_root: record.lift_energy_root,
            inserted: record.inserted,
            values: field.values().to_vec(),
        }
    }

    /// Rebuilds the field on the structured mesh of resolution `mesh_m`.
    pub fn to_field(&self) -> Result<VectorField> {
        let mesh = Arc::new(TriMesh::structured(self.mesh_m)?);
        self.to_field_on(&mesh)
    }

    pub fn to_field_on(&self, mesh: &Arc<TriMesh>) -> Result<VectorField> {
        if mesh.resolution() != Some(self.mesh_m) {
            return Err(Error::invalid(format!("checkpoint belongs to a mesh with m = {}", self.mesh_m)));
        }
        VectorField::from_values(mesh.clone(), self.n_components, self.values.clone())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "version {VERSION}")?;
        writeln!(w, "experiment {}", self.experiment)?;
        writeln!(w, "n_components {}", self.n_components)?;
        writeln!(w, "mesh_m {}", self.mesh_m)?;
        writeln!(w, "p {:?}", self.p)?;
        writeln!(w, "newton_iterations {}", self.newton_iterations)?;
        writeln!(w, "final_residual {:?}", self.final_residual)?;
        writeln!(w, "log_energy {:?}", self.log_energy)?;
        writeln!(w, "energy_root {:?}", self.energy_root)?;
        writeln!(w, "lift_energy_root {:?}", self.lift_energy_root)?;
        writeln!(w, "inserted {}", self.inserted)?;
        writeln!(w, "num_values {}", self.values.len())?;
        writeln!(w, "end_header")?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| match e {
            Error::Format { what, detail } => Error::Format { what: format!("{what} ({})", path.display()), detail },
            other => other,
        })
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let bad = |detail: String| Error::format("checkpoint", detail);
        let mut line = String::new();
        let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
            line.clear();
            let n = r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
            if n == 0 {
                return Err(bad("unexpected end of header".into()));
            }
            Ok(line.trim_end_matches(['\n', '\r']).to_string())
        };
        if next_line(r)? != MAGIC {
            return Err(bad("missing magic string".into()));
        }
        let mut fields = std::collections::HashMap::new();
        loop {
            let l = next_line(r)?;
            if l == "end_header" {
                break;
            }
            let (key, value) = l.split_once(' ').ok_or_else(|| bad(format!("malformed header line {l:?}")))?;
            fields.insert(key.to_string(), value.to_string());
        }
        fn get<T: std::str::FromStr>(fields: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
            let raw = fields.get(key).ok_or_else(|| Error::format("checkpoint", format!("missing header field {key}")))?;
            raw.parse().map_err(|_| Error::format("checkpoint", format!("bad value {raw:?} for {key}")))
        }
        let version: u32 = get(&fields, "version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let num_values: usize = get(&fields, "num_values")?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| bad(e.to_string()))?;
        if bytes.len() != 8 * num_values {
            return Err(bad(format!("expected {} data bytes, found {}", 8 * num_values, bytes.len())));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Checkpoint {
            experiment: get(&fields, "experiment")?,
            n_components: get(&fields, "n_components")?,
            mesh_m: get(&fields, "mesh_m")?,
            p: get(&fields, "p")?,
            newton_iterations: get(&fields, "newton_iterations")?,
            final_residual: get(&fields, "final_residual")?,
            log_energy: get(&fields, "log_energy")?,
            energy_root: get(&fields, "energy_root")?,
            lift_energy_root: get(&fields, "lift_energy_root")?,
            inserted: get(&fields, "inserted")?,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            experiment: "rank1".into(),
            n_components: 2,
            mesh_m: 1,
            p: 45.254833995939045,
            newton_iterations: 3,
            final_residual: 1.5e-13,
            log_energy: -0.1,
            energy_root: 0.7,
            lift_energy_root: 0.9,
            inserted: true,
            values: vec![0.1, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0, 1e300, -2.5, 7.0, 0.0],
        }
    }

    #[test]
    fn roundtrip_in_memory() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut &buf[..]).unwrap();
        assert_eq!(back, c);
        assert!(back.values.iter().zip(&c.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.to_field().unwrap().values(), &c.values[..]);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&mut &bad[..]).is_err());
        let text = String::from_utf8_lossy(&buf).replace("version 1", "version 9");
        assert!(Checkpoint::read_from(&mut text.as_bytes()).is_err());
    }
}
