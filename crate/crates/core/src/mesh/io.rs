use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::distance::triangle_indices;
use super::{Leaflet, QuadMesh, ValveMesh};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct LeafletRecord {
    name: String,
    rows: usize,
    cols: usize,
    points: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct MeshRecord {
    leaflets: Vec<LeafletRecord>,
    phase: usize,
}

fn to_record(m: &QuadMesh) -> LeafletRecord {
    LeafletRecord {
        name: m.leaflet().name().into(),
        rows: m.rows(),
        cols: m.cols(),
        points: m.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
    }
}

pub fn valve_to_json(v: &ValveMesh) -> Result<String> {
    let rec = MeshRecord {
        leaflets: vec![to_record(&v.anterior), to_record(&v.posterior)],
        phase: v.phase_index,
    };
    serde_json::to_string(&rec).map_err(|e| Error::format("mesh", e))
}

pub fn valve_from_json(text: &str) -> Result<ValveMesh> {
    let rec: MeshRecord = serde_json::from_str(text).map_err(|e| Error::format("mesh", e))?;
    let mut slots: [Option<QuadMesh>; 2] = [None, None];
    for l in rec.leaflets {
        let leaflet = Leaflet::from_name(&l.name)
            .ok_or_else(|| Error::format("mesh", format!("unknown leaflet {:?}", l.name)))?;
        let pts = l
            .points
            .iter()
            .map(|p| Vector3::new(p[0], p[1], p[2]))
            .collect();
        let slot = &mut slots[leaflet as usize];
        if slot.is_some() {
            return Err(Error::format(
                "mesh",
                format!("duplicate leaflet {}", l.name),
            ));
        }
        *slot = Some(QuadMesh::new(leaflet, l.rows, l.cols, pts)?);
    }
    match slots {
        [Some(a), Some(p)] => ValveMesh::new(a, p, rec.phase),
        _ => Err(Error::format("mesh", "both leaflets are required")),
    }
}

pub fn save_mesh(path: impl AsRef<Path>, v: &ValveMesh) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, valve_to_json(v)?).map_err(|e| Error::io(path, e))
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<ValveMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    valve_from_json(&text)
}

fn push_obj(out: &mut String, m: &QuadMesh, vertex_base: usize) -> Result<()> {
    let _ = writeln!(out, "o {}", m.leaflet().name());
    for p in m.points() {
        let _ = writeln!(out, "v {} {} {}", p.x, p.y, p.z);
    }
    for [a, b, c] in triangle_indices(m)? {
        let _ = writeln!(
            out,
            "f {} {} {}",
            vertex_base + a + 1,
            vertex_base + b + 1,
            vertex_base + c + 1
        );
    }
    Ok(())
}

/// Wavefront OBJ for one leaflet: row-major vertices, triangulated quads.
pub fn quadmesh_to_obj(m: &QuadMesh) -> Result<String> {
    let mut out = String::new();
    push_obj(&mut out, m, 0)?;
    Ok(out)
}

/// Wavefront OBJ with one object per leaflet.
pub fn valve_to_obj(v: &ValveMesh) -> Result<String> {
    let mut out = String::new();
    push_obj(&mut out, &v.anterior, 0)?;
    push_obj(&mut out, &v.posterior, v.anterior.points().len())?;
    Ok(out)
}

pub fn save_obj(path: impl AsRef<Path>, v: &ValveMesh) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, valve_to_obj(v)?).map_err(|e| Error::io(path, e))
}
