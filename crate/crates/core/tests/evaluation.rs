use depthtrack::baselines::{evaluate_baselines, BaselineConfig, BaselineRow, Method};
use depthtrack::depthio::CameraRig;
use depthtrack::metrics::{patch_sweep, random_error, DepthSeries, LabeledFrame, SweepTiming};
use depthtrack::synthcam::{
    orbit_trajectory, render_sequence, static_offset_pose, NoiseSpec, SceneSpec, BOUNDARY_RADIUS_PX,
};
use depthtrack::tracker::TrackerConfig;
use nalgebra::Matrix4;

fn rig() -> CameraRig {
    CameraRig::new(
        488,
        450,
        300.0,
        300.0,
        243.5,
        224.5,
        0.0,
        0.0,
        Matrix4::identity(),
    )
    .unwrap()
}

fn labeled(spec: &SceneSpec, n: usize, noise: NoiseSpec) -> Vec<LabeledFrame> {
    let poses = orbit_trajectory(spec, n, 300.0, 900.0);
    render_sequence(spec, &rig(), &noise, n, &poses)
        .unwrap()
        .into_iter()
        .zip(&poses)
        .map(|((frame, truth), pose)| LabeledFrame {
            frame,
            truth,
            rig: rig().with_pose(*pose).unwrap(),
        })
        .collect()
}

fn values<'a>(rows: &'a [BaselineRow], method: &'a str) -> impl Iterator<Item = f64> + 'a {
    rows.iter()
        .filter(move |r| r.method == method)
        .map(|r| r.accuracy_value.expect("method succeeded"))
}

#[test]
fn icp_and_ransac_on_arm_free_frames() {
    let mut bare = SceneSpec::po1();
    bare.arm_enabled = false;
    let frames = labeled(&bare, 6, NoiseSpec::none());
    let rows = evaluate_baselines(
        &frames,
        &[Method::Icp, Method::Ransac],
        &BaselineConfig::default(),
        &TrackerConfig::default(),
    );
    assert!(rows.iter().all(|r| r.error_code == "ok"));
    for mm in values(&rows, "icp") {
        assert!(mm < 1.0, "icp {mm}");
    }
    for d in values(&rows, "ransac") {
        assert!(d >= 0.99, "ransac {d}");
    }
}

#[test]
fn tracker_beats_ransac_when_the_arm_is_present() {
    let frames = labeled(
        &SceneSpec::po1(),
        6,
        NoiseSpec::new(1.8, 3.0, 0.005, 3).unwrap(),
    );
    let rows = evaluate_baselines(
        &frames,
        &[Method::Ransac, Method::Tracker],
        &BaselineConfig::default(),
        &TrackerConfig::default(),
    );
    let ransac: Vec<f64> = values(&rows, "ransac").collect();
    let tracker: Vec<f64> = values(&rows, "tracker").collect();
    for (r, t) in ransac.iter().zip(&tracker) {
        assert!(t > r, "tracker {t} ransac {r}");
    }
}

#[test]
fn sweep_accuracy_gain_flattens() {
    let frames = labeled(
        &SceneSpec::po1(),
        100,
        NoiseSpec::new(1.8, 3.0, 0.005, 42).unwrap(),
    );
    let r = patch_sweep(
        &frames,
        &[1, 3, 5, 7, 9, 11, 13],
        &TrackerConfig::default(),
        SweepTiming { repeats: 2 },
    )
    .unwrap();
    let work: Vec<usize> = r.summaries.iter().map(|s| s.work_per_frame).collect();
    assert!(work.windows(2).all(|w| w[0] < w[1]));
    let acc: Vec<f64> = r
        .summaries
        .iter()
        .map(|s| s.accuracy.as_ref().unwrap().mean)
        .collect();
    assert!(acc[0] - acc[1] > acc[1] - acc[2], "{acc:?}");
    assert!(
        r.summaries[0]
            .errors
            .get("sampling-failure")
            .copied()
            .unwrap_or(0)
            > 0
    );
}

#[test]
fn static_series_random_error_matches_sigma() {
    let spec = SceneSpec::po1();
    let n = 100;
    let poses = vec![static_offset_pose(&spec, 500.0, 142.0); n];
    let noise = NoiseSpec::new(1.8, 3.0, 0.0, 5).unwrap();
    let rendered = render_sequence(&spec, &rig(), &noise, n, &poses).unwrap();
    let mask = rendered[0].1.po_mask.eroded(BOUNDARY_RADIUS_PX + 1);
    let frames = rendered.into_iter().map(|(f, _)| f).collect();
    let report = random_error(&DepthSeries::new(frames, mask).unwrap()).unwrap();
    assert!((report.mean - 1.8).abs() <= 0.18, "{}", report.mean);
}
