use uvcloth_core::body::{build_dress_proxy, build_procedural_body, BodyModel, Pose, ShapeParams};
use uvcloth_core::garment::{build_garment, Template};
use uvcloth_core::transfer::{bake_offsets, bind_garment, compute_body_to_cloth, reconstruct_garment};
use uvcloth_core::uvbake::rasterize_uv_layout;
use uvcloth_core::TriMesh;

/// Mean distance between the garment and its reconstruction from offsets
/// baked on the garment itself, in the rest pose.
fn rest_residual(body: &BodyModel, garment: &TriMesh, template: Template, size: usize) -> f64 {
    let uv = rasterize_uv_layout(body.template(), size, size).unwrap();
    let t_bc = compute_body_to_cloth(template.name(), body.template(), &uv, garment).unwrap();
    let binding = bind_garment(garment, body.template(), &uv).unwrap();
    let rest = body.pose(&Pose::identity(body.skeleton().len())).unwrap();
    let offsets = bake_offsets(&t_bc, &rest, garment, &uv).unwrap();
    let r = reconstruct_garment(&binding, garment, &rest, &offsets).unwrap();
    assert!(r.unresolved.is_empty());
    r.mesh
        .vertices()
        .iter()
        .zip(garment.vertices())
        .map(|(a, b)| (a - b).norm())
        .sum::<f64>()
        / garment.vertex_count() as f64
}

#[test]
fn tops_round_trip_at_rest_is_rasterization_limited() {
    let body = build_procedural_body(ShapeParams::default()).unwrap();
    let tops = build_garment(Template::Tops, &body).unwrap();
    let coarse = rest_residual(&body, &tops.mesh, Template::Tops, 64);
    let fine = rest_residual(&body, &tops.mesh, Template::Tops, 256);
    assert!(fine < 1e-3, "{fine}");
    assert!(fine < coarse);
}

#[test]
fn every_template_round_trips_at_rest() {
    let body = build_procedural_body(ShapeParams::default()).unwrap();
    let proxy = build_dress_proxy(&body).unwrap();
    for t in Template::ALL {
        let g = build_garment(t, &body).unwrap();
        let b = if t == Template::Dress { &proxy } else { &body };
        let err = rest_residual(b, &g.mesh, t, 64);
        assert!(err < 0.01 * g.mesh.bounding_box_diagonal(), "{t}: {err}");
    }
}

#[test]
fn proxy_gives_the_dress_more_inter_leg_hits() {
    let body = build_procedural_body(ShapeParams::default()).unwrap();
    let proxy = build_dress_proxy(&body).unwrap();
    let dress = build_garment(Template::Dress, &body).unwrap();
    let hip = &body.skeleton().bones()[body.skeleton().index_of("upper_leg_l").unwrap()];
    let (knee_y, hip_y, hip_z) = (hip.tail.y, hip.head.y, hip.head.z.abs());
    let count = |b: &BodyModel| {
        let uv = rasterize_uv_layout(b.template(), 64, 64).unwrap();
        let t = compute_body_to_cloth("dress", b.template(), &uv, &dress.mesh).unwrap();
        t.hits()
            .iter()
            .zip(uv.samples())
            .filter(|(h, s)| {
                let (Some(_), Some(s)) = (h, s) else { return false };
                let p = b.template().interpolate_position(s.face as usize, s.barycentric);
                p.z.abs() < hip_z && p.y > knee_y && p.y < hip_y
            })
            .count()
    };
    let plain = count(&body);
    let bridged = count(&proxy);
    assert!(bridged > plain, "{bridged} vs {plain}");
}
