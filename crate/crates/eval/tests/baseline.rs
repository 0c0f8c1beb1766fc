use nalgebra::{Unit, UnitQuaternion};
use uvcloth_core::body::{procedural_motion, Pose};
use uvcloth_core::clothsim::simulate_sequence;
use uvcloth_core::dataset::{Rig, SimOverrides};
use uvcloth_core::garment::Template;
use uvcloth_core::transfer::bind_garment;
use uvcloth_core::{TriMesh, Vec3};
use uvcloth_eval::evaluate::{draped_rest, HEM_BAND, TORSO_BONE};
use uvcloth_eval::lbs::LbsGarment;
use uvcloth_eval::metrics::{hem_variance, hem_vertices};
use uvcloth_eval::{lbs_predict, EvalError};

fn rig() -> Rig {
    Rig::new(Default::default(), &SimOverrides::default(), 32).unwrap()
}

#[test]
fn identity_pose_leaves_the_garment_unchanged() {
    let rig = rig();
    for t in Template::ALL {
        let (body, uv) = rig.reference(t);
        let g = &rig.garments[t.index()].mesh;
        let binding = bind_garment(g, body.template(), uv).unwrap();
        let posed = lbs_predict(g, body, &binding, &Pose::identity(body.skeleton().len())).unwrap();
        for (a, b) in posed.vertices().iter().zip(g.vertices()) {
            assert!((a - b).norm() < 1e-9, "{t}");
        }
    }
}

#[test]
fn rigid_body_motion_moves_the_garment_rigidly() {
    let rig = rig();
    let body = &rig.body;
    let g = &rig.garments[Template::Tops.index()].mesh;
    let binding = bind_garment(g, body.template(), &rig.body_uv).unwrap();
    let mut pose = Pose::identity(body.skeleton().len());
    pose.root_translation = Vec3::new(0.3, -0.1, 0.2);
    pose.rotations[0] = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vec3::new(0.2, 1.0, 0.1)), 0.7);
    let xf = body.skeleton().skinning_transforms(&pose).unwrap();
    assert!(xf.iter().all(|x| (x.to_homogeneous() - xf[0].to_homogeneous()).norm() < 1e-12));
    let posed = lbs_predict(g, body, &binding, &pose).unwrap();
    for (a, b) in posed.vertices().iter().zip(g.vertices()) {
        assert!((a - xf[0].transform_point(&(*b).into()).coords).norm() < 1e-9);
    }
}

#[test]
fn unbound_vertex_is_an_error() {
    let rig = rig();
    let g = &rig.garments[Template::Tops.index()].mesh;
    let mut v = g.vertices().to_vec();
    v[0] += Vec3::new(2.0, 0.0, 0.0);
    let far = g.with_positions(v).unwrap();
    let binding = bind_garment(&far, rig.body.template(), &rig.body_uv).unwrap();
    let err = LbsGarment::new(&far, &rig.body, &binding).unwrap_err();
    assert!(matches!(err, EvalError::Unbound { vertex: 0 }), "{err}");
}

/// Under a fast punch the skinned hem stays put relative to the pelvis
/// while the simulated hem swings.
#[test]
fn punch_hem_moves_in_simulation_but_not_under_lbs() {
    let rig = rig();
    let t = Template::Tops;
    let motion = procedural_motion("punch", 30, 30.0, 1.2).unwrap();
    let sim = simulate_sequence(&rig.garments[0], &rig.body, &motion, &rig.params[0]).unwrap();
    let draped = draped_rest(&rig, t, 30.0).unwrap();
    let binding = bind_garment(&draped, rig.body.template(), &rig.body_uv).unwrap();
    let lbs = LbsGarment::new(&draped, &rig.body, &binding).unwrap();
    let pelvis = rig.body.skeleton().index_of(TORSO_BONE).unwrap();
    let torso: Vec<_> = motion.frames.iter().map(|p| rig.body.skeleton().skinning_transforms(p).unwrap()[pelvis]).collect();
    let skinned: Vec<TriMesh> = motion.frames.iter().map(|p| lbs.pose(&rig.body, p).unwrap()).collect();
    let hem = hem_vertices(&rig.garments[0].mesh, HEM_BAND);
    assert!(!hem.is_empty());
    let v_sim = hem_variance(&sim, &hem, &torso).unwrap();
    let v_lbs = hem_variance(&skinned, &hem, &torso).unwrap();
    assert!(v_lbs < v_sim, "lbs {v_lbs} mm² vs simulation {v_sim} mm²");
}
