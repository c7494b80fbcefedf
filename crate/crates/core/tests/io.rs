use alphatablets::io::{load_ground_truth, load_planes, load_scene, write_synth};
use alphatablets::io::export::export_planes;
use alphatablets::synth::box_room;
use alphatablets::tablet::{Tablet, Texture};
use alphatablets::Vec3;

#[test]
fn synthetic_scene_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scene = box_room(3, 40, 30);
    write_synth(dir.path(), &scene).unwrap();
    let (views, manifest) = load_scene(dir.path()).unwrap();
    assert_eq!(views.len(), 3);
    assert_eq!(manifest.frames.len(), 3);
    for (a, b) in views.iter().zip(&scene.views) {
        assert_eq!(a.intrinsics, b.intrinsics);
        assert!((a.pose.to_matrix() - b.pose.to_matrix()).abs().max() < 1e-12);
        let (da, db) = (a.depth.as_ref().unwrap(), b.depth.as_ref().unwrap());
        for (x, y) in da.data.iter().zip(&db.data) {
            assert_eq!(*x, *y as f32 as f64);
        }
        for (ca, cb) in a.image.data.iter().zip(&b.image.data) {
            for k in 0..3 {
                assert!((ca[k] - cb[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
    let gt = load_ground_truth(dir.path()).unwrap();
    assert_eq!(gt.planes.len(), 5);
    assert!(!gt.points.points.is_empty());
}

#[test]
fn planes_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let scene = box_room(2, 32, 24);
    let planes: Vec<Tablet> = scene
        .planes
        .iter()
        .map(|p| {
            let mut texture = Texture::solid(3, 2, p.color, 0.75);
            texture.color[4] = [0.1, 1.0 / 3.0, 0.7];
            Tablet {
                anchor: Vec3::new(0.1, 0.2, 0.3),
                ray_dir: (p.center - Vec3::new(0.1, 0.2, 0.3)).normalize(),
                distance: (p.center - Vec3::new(0.1, 0.2, 0.3)).norm(),
                normal: p.normal,
                up: p.axis_v,
                lambda_u: p.half_u / 1.5,
                lambda_v: p.half_v,
                texture,
                source_camera: p.label,
            }
        })
        .collect();
    export_planes(dir.path(), &planes).unwrap();
    let back = load_planes(dir.path()).unwrap();
    assert_eq!(back.len(), planes.len());
    for (a, b) in back.iter().zip(&planes) {
        assert_eq!(a.normal, b.normal);
        assert_eq!(a.center(), b.center());
        assert_eq!((a.lambda_u, a.lambda_v), (b.lambda_u, b.lambda_v));
        assert_eq!(a.texture.color, b.texture.color);
        assert_eq!(a.texture.alpha, b.texture.alpha);
    }
}
