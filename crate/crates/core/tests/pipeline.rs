use gaze_core::dataset::{load_manifest_file, load_samples, Origin};
use gaze_core::imaging::integral;
use gaze_core::preprocess::{frame_to_sample, Pipeline, PipelineConfig};
use gaze_core::synth::{gen_dataset, gen_eye_pair, scene_set_item, train_scene_cascade, CascadeRecipe, SubjectStyle};
use gaze_core::{cascade::detect_in, Exec, Label};

#[test]
fn dataset_on_disk_reloads_to_the_generated_composites() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(3, 2, 11, dir.path(), Exec::Parallel).unwrap();
    assert_eq!(m.len(), 18);
    let back = load_manifest_file(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(back, m);
    assert!(back.entries.iter().all(|e| e.origin == Origin::Original));
    let samples = load_samples(&back, dir.path(), Exec::Sequential).unwrap();
    for (e, s) in back.entries.iter().zip(&samples) {
        let subject: usize = e.subject[1..].parse().unwrap();
        let g = gen_eye_pair(e.label, &SubjectStyle::for_subject(11, subject), e.seed_tag);
        assert_eq!(s.gray(), Some(&g));
        assert_eq!(s.label, Some(e.label));
    }
}

#[test]
fn small_cascades_drive_the_frame_pipeline() {
    let mut face = CascadeRecipe::face(3);
    face.scenes = 120;
    face.train.max_stages = 4;
    let mut eye = CascadeRecipe::eye(4);
    eye.scenes = 120;
    eye.train.max_stages = 4;
    let (face, eye) = (train_scene_cascade(&face, Exec::Parallel).unwrap(), train_scene_cascade(&eye, Exec::Parallel).unwrap());
    let config = PipelineConfig::default();

    let mut found = 0;
    for i in 0..10 {
        let (img, truth) = scene_set_item(99, i);
        let ii = integral(&img);
        let seq = detect_in(&ii, &face, &img.bounds(), &config.face, Exec::Sequential);
        assert_eq!(seq, detect_in(&ii, &face, &img.bounds(), &config.face, Exec::Parallel));

        let p = Pipeline { face_model: &face, eye_model: &eye, config, exec: Exec::Parallel };
        if let Ok(r) = p.run(&img, Some(truth.label), None, "f") {
            found += 1;
            assert_eq!((r.sample.input().width(), r.sample.input().height()), (72, 72));
            assert!(r.face.contains(&r.eyes.right_box) && r.face.contains(&r.eyes.left_box));
            let s = frame_to_sample(&img, &face, &eye, &config, Some(Label::Vague), None).unwrap();
            assert_eq!(s.input(), r.sample.input());
        }
    }
    assert!(found >= 3, "pipeline produced a sample for only {found} of 10 scenes");
}
