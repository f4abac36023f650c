mod common;

use std::fs;

use common::Fixture;
use splatgen::config::{validate_config, AlignmentMethod};
use splatgen::PipelineError;

fn minimal() -> String {
    r#"
[assets]
scene = "scene.ply"
clouds = "clouds"
demo = "demo"

[assets.robot]
urdf = "robot.urdf"

[generation]
episodes = 3

[[cameras]]
eye = [1.2, 0.0, 0.8]
target = [0.4, 0.0, 0.1]
"#
    .to_string()
}

fn issues_of(text: &str, fx: &Fixture) -> Vec<(String, String)> {
    let p = fx.path().join("case.toml");
    fs::write(&p, text).unwrap();
    match validate_config(&p) {
        Err(e @ PipelineError::Validation(_)) => {
            assert_eq!(e.exit_code(), 2);
            e.issues().iter().map(|i| (i.path.clone(), i.message.clone())).collect()
        }
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn minimal_config_gets_defaults() {
    let fx = Fixture::small();
    let p = fx.path().join("minimal.toml");
    fs::write(&p, minimal()).unwrap();
    let c = validate_config(&p).unwrap();
    assert_eq!(c.generation.episodes, 3);
    assert_eq!(c.generation.workers, 1);
    assert_eq!((c.generation.image_width, c.generation.image_height), (128, 128));
    assert_eq!(c.generation.max_retries, 20);
    assert_eq!(c.generation.seed, 0);
    assert_eq!(c.cameras[0].fov_deg, 60.0);
    assert_eq!(c.alignment.method, AlignmentMethod::Fixed);
    assert_eq!(c.task.velocity_epsilon, 0.02);
    assert_eq!(c.planning.rate_hz, 10.0);
    assert!(c.assets.scene.is_absolute() && c.assets.scene.exists());
    assert!(!c.augment.camera.enabled && c.augment.object_type.assets.is_empty());
}

#[test]
fn zero_episodes_is_reported_at_its_key() {
    let fx = Fixture::small();
    let issues = issues_of(&minimal().replace("episodes = 3", "episodes = 0"), &fx);
    assert_eq!(issues.len(), 1, "{issues:?}");
    assert_eq!(issues[0].0, "generation.episodes");
}

#[test]
fn radius_half_range_must_stay_below_radius() {
    let fx = Fixture::small();
    let text = minimal() + "\n[cameras.sampler]\nradius = 0.2\nradius_half_range = 0.2\n";
    let issues = issues_of(&text, &fx);
    assert_eq!(issues.len(), 1, "{issues:?}");
    assert_eq!(issues[0].0, "cameras[0].sampler");
    assert!(issues[0].1.contains("radius"));
}

#[test]
fn all_problems_are_collected() {
    let fx = Fixture::small();
    let text = minimal()
        .replace("episodes = 3", "episodes = 0\nimage_width = 0")
        .replace("scene.ply", "missing.ply")
        + "\n[cameras.sampler]\npolar = 0.1\npolar_half_range = 0.2\n";
    let paths: Vec<String> = issues_of(&text, &fx).into_iter().map(|i| i.0).collect();
    for key in ["generation.episodes", "generation.image_width", "assets.scene", "cameras[0].sampler"] {
        assert!(paths.iter().any(|p| p == key), "{key} missing from {paths:?}");
    }
}

#[test]
fn unknown_keys_and_bad_references_are_rejected() {
    let fx = Fixture::small();
    let issues = issues_of(&(minimal() + "\n[surprise]\nx = 1\n"), &fx);
    assert_eq!(issues[0].0, "<config>");

    let mut c = fx.config.clone();
    c.task.targets[0].object = "mug".into();
    c.task.targets[0].keyframes = [1, 9];
    c.augment.camera.enabled = true;
    c.cameras[1].sampler = None;
    let p = fx.write_config("bad.toml", &c);
    let paths: Vec<String> = match validate_config(&p) {
        Err(e) => e.issues().iter().map(|i| i.path.clone()).collect(),
        Ok(_) => panic!("should fail"),
    };
    assert!(paths.contains(&"task.targets[0].object".to_string()), "{paths:?}");
    assert!(paths.contains(&"task.targets[0].keyframes".to_string()), "{paths:?}");
    assert!(paths.contains(&"cameras[1].sampler".to_string()), "{paths:?}");
}

#[test]
fn fixture_config_round_trips_and_hash_ignores_workers() {
    let fx = Fixture::small();
    let again = validate_config(fx.write_config("copy.toml", &fx.config)).unwrap();
    assert_eq!(again, fx.config);
    assert_eq!(again.content_hash(), fx.config.content_hash());
    let mut more = fx.config.clone();
    more.generation.workers = 8;
    assert_eq!(more.content_hash(), fx.config.content_hash());
    more.generation.seed += 1;
    assert_ne!(more.content_hash(), fx.config.content_hash());
}
