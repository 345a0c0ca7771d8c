//! Transform properties on the bundled photographs.

use std::path::PathBuf;

use sidbench_core::imaging::{
    apply_chain, center_crop, decode_jpeg, encode_jpeg, gaussian_blur, jpeg_recompress, resize, Image, TransformChain,
};

fn corpus() -> Vec<(String, Image)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    ["astronaut.png", "coffee.png", "chelsea.png"]
        .iter()
        .map(|name| (name.to_string(), Image::load(&dir.join(name)).unwrap()))
        .collect()
}

fn mae(a: &Image, b: &Image) -> f64 {
    let total: u64 = a.data().iter().zip(b.data()).map(|(x, y)| u64::from(x.abs_diff(*y))).sum();
    total as f64 / a.data().len() as f64
}

#[test]
fn bundled_images_are_256_square() {
    for (name, img) in corpus() {
        assert_eq!((img.width(), img.height()), (256, 256), "{name}");
    }
}

#[test]
fn lower_quality_loses_more() {
    for (name, img) in corpus() {
        let q30 = mae(&img, &jpeg_recompress(&img, 30).unwrap());
        let q95 = mae(&img, &jpeg_recompress(&img, 95).unwrap());
        assert!(q30 >= q95, "{name}: q30 {q30} < q95 {q95}");
        assert!(q95 > 0.0, "{name}");
    }
}

#[test]
fn chain_order_matters_on_photographs() {
    let forward: TransformChain = "blur:sigma=2|jpeg:q=50".parse().unwrap();
    let backward: TransformChain = "jpeg:q=50|blur:sigma=2".parse().unwrap();
    let mut differing = 0;
    for (name, img) in corpus() {
        let a = apply_chain(&img, &forward).unwrap();
        let b = apply_chain(&img, &backward).unwrap();
        assert_eq!(a, jpeg_recompress(&gaussian_blur(&img, 2.0), 50).unwrap(), "{name}");
        if a != b {
            differing += 1;
        }
    }
    assert!(differing >= 1);
}

#[test]
fn jpeg_generations_stabilize_in_size() {
    for (name, img) in corpus() {
        for q in [30, 50, 90, 95] {
            let mut current = jpeg_recompress(&img, q).unwrap();
            let mut sizes = Vec::new();
            for _ in 0..4 {
                let bytes = encode_jpeg(&current, q).unwrap();
                sizes.push(bytes.len() as f64);
                current = decode_jpeg(&bytes).unwrap();
                assert_eq!((current.width(), current.height()), (256, 256));
            }
            // After three re-encodings the size moves by under 1%.
            let change = (sizes[3] - sizes[2]).abs() / sizes[2];
            assert!(change < 0.01, "{name} q{q}: sizes {sizes:?}");
        }
    }
}

#[test]
fn geometry_on_photographs() {
    for (name, img) in corpus() {
        let crop = center_crop(&img, 224, 224).unwrap();
        assert_eq!(crop.pixel(0, 0), img.pixel(16, 16), "{name}");
        assert_eq!(crop.pixel(223, 223), img.pixel(239, 239), "{name}");
        let small = resize(&img, 224, 224).unwrap();
        assert_eq!((small.width(), small.height()), (224, 224));
        let big = resize(&img, 300, 280).unwrap();
        assert_eq!((big.width(), big.height()), (300, 280));
        assert_eq!(gaussian_blur(&img, 0.0), img);
        assert_eq!(apply_chain(&img, &TransformChain::identity()).unwrap(), img);
    }
}
