mod common;

use oscnet::data::{
    encode_cifar, encode_idx_images, encode_idx_labels, load_cifar10, load_mnist, parse_cifar, parse_idx_images,
    parse_idx_labels, read_bytes, CIFAR_RECORD_BYTES,
};
use oscnet::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idx_round_trip(seed in any::<u64>(), n in 1usize..20) {
        let ds = common::synthetic(n, [1, 28, 28], 10, seed);
        let img = encode_idx_images(&ds.images).unwrap();
        let lbl = encode_idx_labels(&ds.labels);
        prop_assert_eq!(&parse_idx_images(&img, "i").unwrap(), &ds.images);
        prop_assert_eq!(&parse_idx_labels(&lbl, "l").unwrap(), &ds.labels);
        prop_assert_eq!(encode_idx_images(&parse_idx_images(&img, "i").unwrap()).unwrap(), img);
    }

    #[test]
    fn cifar_round_trip(seed in any::<u64>(), n in 1usize..8) {
        let ds = common::synthetic(n, [3, 32, 32], 10, seed);
        let bytes = encode_cifar(&ds).unwrap();
        prop_assert_eq!(bytes.len(), n * CIFAR_RECORD_BYTES);
        let back = parse_cifar(&bytes, "c").unwrap();
        prop_assert_eq!(&back.images, &ds.images);
        prop_assert_eq!(&back.labels, &ds.labels);
        prop_assert_eq!(encode_cifar(&back).unwrap(), bytes);
    }
}

#[test]
fn fixture_directories_load() {
    let dir = tempfile::tempdir().unwrap();
    common::write_mnist_fixture(&dir.path().join("mnist"), 30, 10, 1);
    let (train, test) = load_mnist(&dir.path().join("mnist")).unwrap();
    assert_eq!((train.len(), test.len()), (30, 10));
    assert_eq!(train.images.dims(), &[30, 1, 28, 28]);

    common::write_cifar_fixture(&dir.path().join("cifar"), 4, 2);
    let (train, test) = load_cifar10(&dir.path().join("cifar")).unwrap();
    assert_eq!((train.len(), test.len()), (20, 4));
    assert_eq!(train.images.dims(), &[20, 3, 32, 32]);
}

#[test]
fn loader_error_paths() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(matches!(load_mnist(p), Err(Error::DataMissing(_))));
    assert!(matches!(load_cifar10(p), Err(Error::DataMissing(_))));

    common::write_mnist_fixture(p, 5, 5, 3);
    std::fs::write(p.join("t10k-labels-idx1-ubyte"), encode_idx_labels(&[1, 2, 3])).unwrap();
    assert!(matches!(
        load_mnist(p),
        Err(Error::CountMismatch { images: 5, labels: 3 })
    ));
    let swapped = std::fs::read(p.join("train-labels-idx1-ubyte")).unwrap();
    std::fs::write(p.join("train-images-idx3-ubyte"), &swapped).unwrap();
    assert!(matches!(load_mnist(p), Err(Error::BadMagic { expected: 0x803, .. })));
}

/// Re-encoding the first 100 records of each real file reproduces its bytes.
#[test]
fn real_data_prefix_round_trip() {
    if common::mnist_present() {
        let dir = common::mnist_dir();
        for prefix in ["train", "t10k"] {
            let img = read_bytes(&dir.join(format!("{prefix}-images-idx3-ubyte"))).unwrap();
            let lbl = read_bytes(&dir.join(format!("{prefix}-labels-idx1-ubyte"))).unwrap();
            let head_img = [&img[..4], &100u32.to_be_bytes(), &img[8..16], &img[16..16 + 100 * 784]].concat();
            let head_lbl = [&lbl[..4], &100u32.to_be_bytes(), &lbl[8..108]].concat();
            let images = parse_idx_images(&head_img, prefix).unwrap();
            assert_eq!(encode_idx_images(&images).unwrap(), head_img);
            assert_eq!(encode_idx_labels(&parse_idx_labels(&head_lbl, prefix).unwrap()), head_lbl);
        }
    } else {
        eprintln!("MNIST not found at {}; skipping", common::mnist_dir().display());
    }
    if common::cifar_present() {
        let dir = common::cifar_dir();
        for name in ["data_batch_1.bin", "test_batch.bin"] {
            let bytes = std::fs::read(dir.join(name)).unwrap();
            let head = &bytes[..100 * CIFAR_RECORD_BYTES];
            assert_eq!(encode_cifar(&parse_cifar(head, name).unwrap()).unwrap(), head);
        }
    } else {
        eprintln!("CIFAR-10 not found at {}; skipping", common::cifar_dir().display());
    }
}
