//! Write an icosphere as OBJ and PLY, read both back and validate them.

use meshgeo::mesh::{build_adjacency, load_mesh_file, save_mesh_file, shapes, validate_mesh};

fn main() -> meshgeo::Result<()> {
    let dir = std::env::temp_dir().join("meshgeo_mesh_io");
    std::fs::create_dir_all(&dir).map_err(|e| meshgeo::Error::io(&dir, e))?;
    let sphere = shapes::icosphere(2, 1.0);
    for name in ["sphere.obj", "sphere.ply"] {
        let path = dir.join(name);
        save_mesh_file(&sphere, &path)?;
        let back = load_mesh_file(&path)?;
        let report = validate_mesh(&back);
        println!(
            "{}: {} vertices, {} faces, faces identical: {}, {}",
            path.display(),
            back.vertex_count(),
            back.face_count(),
            back.faces == sphere.faces,
            report.summary()
        );
    }
    let adj = build_adjacency(&sphere);
    println!("{} undirected edges, vertex 0 has neighbours {:?}", adj.edges().len(), adj.neighbors(0));
    Ok(())
}
