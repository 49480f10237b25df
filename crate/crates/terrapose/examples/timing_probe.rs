use nalgebra::Vector3;
use terrapose::align::refine;
use terrapose::config::{EngineSection, RunConfig};
use terrapose::engine::{make_bundle, query_render, Degradation};
use terrapose::metrics::pose_error;
use terrapose::se3::Pose;
use terrapose::trajectory::camera_attitude;
use terrapose::world::Scene;

fn main() {
    let w = 128usize; let f = 128.0f64;
    let mut cfg = RunConfig::default();
    cfg.engine = EngineSection { fx: f, fy: f, cx: 63.5, cy: 63.5, width: w, height: w, rng_seed: 1 };
    let scene = Scene::build(&cfg.scene);
    let k = cfg.intrinsics();
    for seed in [5u64, 6, 7] {
        let pose = Pose::from_parts(camera_attitude(0.1 * seed as f64, 50f64.to_radians()), Vector3::new(30.0 * seed as f64 - 90.0, -15.0, 200.0));
        let bundle = make_bundle(&scene, &pose, &k, 500, seed, 0, -1).unwrap();
        let start = Pose::from_parts(*pose.rotation(), pose.translation() + Vector3::new(0.4, -0.2, 0.1));
        for (name, deg) in [
            ("gain 1.1        ", Degradation { gain: 1.1, bias: 0.0, noise_sigma: 0.0 }),
            ("bias 0.02       ", Degradation { gain: 1.0, bias: 0.02, noise_sigma: 0.0 }),
            ("noise 0.02      ", Degradation { gain: 1.0, bias: 0.0, noise_sigma: 0.02 }),
            ("std 1.05/.02/.02", Degradation { gain: 1.05, bias: 0.02, noise_sigma: 0.02 }),
        ] {
            let query = query_render(&scene, &pose, &k, &deg, 11 + seed).unwrap();
            let hyp = refine(&start, &bundle, &query, &cfg.schedule());
            let (t, r) = pose_error(&hyp.pose, &pose);
            println!("seed {seed} {name}: {t:.4} m / {r:.4} deg");
        }
    }
}
