//! Marching cubes over a scalar field, inside where the field exceeds `iso`.
//!
//! The 256-entry case table is derived once from the cube topology. On every
//! face the crossing edges are paired so that inside corners are cut off
//! individually; because that choice depends only on the face's own corners,
//! neighbouring cells always produce matching segments and the mesh closes.

use std::sync::OnceLock;

use super::mesh::TriangleMesh;
use crate::volume::Field;

/// Corner offsets, conventional numbering.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("adjacent corners")
}

/// Triangles (as edge triples) for one corner configuration.
fn triangulate(config: u8) -> Vec<[u8; 3]> {
    let inside = |c: usize| config & (1 << c) != 0;
    // next[e] = edge the surface boundary walks to after edge e.
    let mut next = [usize::MAX; 12];
    for face in FACES {
        for k in 0..4 {
            let c = face[k];
            if !inside(c) {
                continue;
            }
            let prev = face[(k + 3) % 4];
            let succ = face[(k + 1) % 4];
            match (inside(prev), inside(succ)) {
                // Lone inside corner on this face (or one of two opposite ones).
                (false, false) => next[edge_between(prev, c)] = edge_between(c, succ),
                // Start of an inside run: entry edge before c, exit after the run.
                (false, true) => {
                    let mut j = (k + 1) % 4;
                    while inside(face[(j + 1) % 4]) {
                        j = (j + 1) % 4;
                    }
                    next[edge_between(prev, c)] = edge_between(face[j], face[(j + 1) % 4]);
                }
                _ => {}
            }
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut cycle = vec![start];
        seen[start] = true;
        let mut e = next[start];
        while e != start {
            seen[e] = true;
            cycle.push(e);
            e = next[e];
        }
        for i in 1..cycle.len() - 1 {
            tris.push([cycle[0] as u8, cycle[i] as u8, cycle[i + 1] as u8]);
        }
    }
    tris
}

fn table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(triangulate).collect())
}

/// Extracts the `iso` level set. The grid is virtually padded by one voxel
/// of value `iso − min_spacing` on every side so the surface always closes.
pub fn marching_cubes(field: &Field, iso: f64) -> TriangleMesh {
    let grid = *field.grid();
    let dims = grid.dims;
    let s = grid.spacing;
    let outside = iso - grid.min_spacing();
    let value = |p: [i64; 3]| field.get_signed(p).unwrap_or(outside);

    // Padded lattice of corner points: indices -1..=dims.
    let pd = [dims[0] + 2, dims[1] + 2, dims[2] + 2];
    let mut edge_vertex = vec![u32::MAX; pd[0] * pd[1] * pd[2] * 3];
    let slot = |p: [i64; 3], axis: usize| {
        let q = [(p[0] + 1) as usize, (p[1] + 1) as usize, (p[2] + 1) as usize];
        (q[0] + pd[0] * (q[1] + pd[1] * q[2])) * 3 + axis
    };

    let table = table();
    let mut mesh = TriangleMesh::default();
    for z in -1..dims[2] as i64 {
        for y in -1..dims[1] as i64 {
            for x in -1..dims[0] as i64 {
                let base = [x, y, z];
                let mut vals = [0.0; 8];
                let mut config = 0u8;
                for (c, off) in CORNERS.iter().enumerate() {
                    let p = [base[0] + off[0] as i64, base[1] + off[1] as i64, base[2] + off[2] as i64];
                    vals[c] = value(p);
                    if vals[c] > iso {
                        config |= 1 << c;
                    }
                }
                let tris = &table[config as usize];
                if tris.is_empty() {
                    continue;
                }
                let mut local = [u32::MAX; 12];
                for tri in tris {
                    let mut idx = [0u32; 3];
                    for (k, &e) in tri.iter().enumerate() {
                        let e = e as usize;
                        if local[e] == u32::MAX {
                            let [a, b] = EDGES[e];
                            let (lo, hi) = if CORNERS[a] < CORNERS[b] { (a, b) } else { (b, a) };
                            let axis = (0..3).find(|&i| CORNERS[lo][i] != CORNERS[hi][i]).expect("edge axis");
                            let origin = [
                                base[0] + CORNERS[lo][0] as i64,
                                base[1] + CORNERS[lo][1] as i64,
                                base[2] + CORNERS[lo][2] as i64,
                            ];
                            let key = slot(origin, axis);
                            if edge_vertex[key] == u32::MAX {
                                let (f0, f1) = (vals[lo], vals[hi]);
                                let t = ((iso - f0) / (f1 - f0)).clamp(0.0, 1.0);
                                let mut pos = [origin[0] as f64 * s[0], origin[1] as f64 * s[1], origin[2] as f64 * s[2]];
                                pos[axis] += t * s[axis];
                                edge_vertex[key] = mesh.vertices.len() as u32;
                                mesh.vertices.push(pos);
                            }
                            local[e] = edge_vertex[key];
                        }
                        idx[k] = local[e];
                    }
                    mesh.triangles.push(idx);
                }
            }
        }
    }
    mesh
}
