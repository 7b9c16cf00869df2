use rdp_core::data::BatchSource;
use rdp_harness::dataset::{ingest_dataset, load_eval_images, load_image, save_image, synthesize_dataset};

#[test]
fn same_folder_and_seed_give_the_same_patches() {
    let t = tempfile::tempdir().unwrap();
    synthesize_dataset(t.path(), 10, 40, 48, 3).unwrap();
    let take = |seed| {
        let mut s = ingest_dataset(t.path(), 16, seed).unwrap();
        (0..5).map(|_| s.next_patch()).collect::<Vec<_>>()
    };
    assert_eq!(take(7), take(7));
    assert_ne!(take(7), take(8));
    let mut s = ingest_dataset(t.path(), 16, 7).unwrap();
    let b = s.next_batch(3).unwrap();
    assert_eq!(b.shape(), [3, 3, 16, 16]);
    assert!(b.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn too_small_images_are_an_error() {
    let t = tempfile::tempdir().unwrap();
    synthesize_dataset(t.path(), 3, 8, 8, 0).unwrap();
    assert!(ingest_dataset(t.path(), 16, 0).is_err());
    let empty = tempfile::tempdir().unwrap();
    assert!(ingest_dataset(empty.path(), 16, 0).is_err());
}

#[test]
fn grayscale_is_replicated() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path().join("g.png");
    let img = image::GrayImage::from_fn(5, 4, |x, y| image::Luma([(x * 40 + y * 7) as u8]));
    img.save(&p).unwrap();
    let n = load_image(&p).unwrap();
    assert_eq!(n.pixels.shape(), [1, 3, 4, 5]);
    let d = n.pixels.data();
    for i in 0..20 {
        assert_eq!(d[i], d[20 + i]);
        assert_eq!(d[i], d[40 + i]);
    }
    assert_eq!(d[1], 40.0 / 255.0);
}

#[test]
fn png_and_ppm_round_trip_eight_bit_values() {
    let t = tempfile::tempdir().unwrap();
    let x = rdp_core::data::synthetic_image(4, 12, 10).map(|v| (v * 255.0).round() / 255.0);
    for ext in ["png", "ppm"] {
        let p = t.path().join(format!("a.{ext}"));
        save_image(&p, &x).unwrap();
        assert_eq!(load_image(&p).unwrap().pixels, x);
    }
}

#[test]
fn eval_images_are_cropped_to_the_codec_factor() {
    let t = tempfile::tempdir().unwrap();
    synthesize_dataset(t.path(), 2, 37, 70, 0).unwrap();
    let imgs = load_eval_images(t.path(), 32).unwrap();
    assert_eq!(imgs.len(), 2);
    assert_eq!(imgs[0].pixels.shape(), [1, 3, 32, 64]);
    assert!(load_eval_images(t.path(), 128).is_err());
}
