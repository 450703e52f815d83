use std::collections::HashSet;
use std::fs;

use image::{GrayImage, Luma};
use spm_core::patchdata::{
    load_dataset, load_match_file, load_patch_sheet, load_ubc_subset, parse_matches, save_dataset, synth_dataset,
    SynthConfig,
};
use spm_core::{Error, ErrorKind};

fn sheet(side: usize, grid: usize, offset: u8) -> GrayImage {
    let n = (side * grid) as u32;
    GrayImage::from_fn(n, n, |x, y| {
        let patch = (y as usize / side) * grid + x as usize / side;
        Luma([offset.wrapping_add((patch * 10) as u8).wrapping_add((x % side as u32) as u8)])
    })
}

#[test]
fn sheet_is_cut_row_major() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bmp");
    sheet(4, 3, 0).save(&path).unwrap();
    let patches = load_patch_sheet(&path, 4, 3).unwrap();
    assert_eq!(patches.len(), 9);
    for (i, p) in patches.iter().enumerate() {
        assert_eq!(p.side(), 4);
        assert_eq!(p.pixels()[0], (i * 10) as f64 / 255.0);
        assert_eq!(p.pixels()[3], (i * 10 + 3) as f64 / 255.0);
    }
}

#[test]
fn wrong_sheet_size_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bmp");
    sheet(4, 3, 0).save(&path).unwrap();
    assert!(matches!(load_patch_sheet(&path, 4, 2), Err(Error::Format(_))));
    fs::write(dir.path().join("junk.bmp"), b"not an image").unwrap();
    assert_eq!(load_patch_sheet(&dir.path().join("junk.bmp"), 4, 3).unwrap_err().kind(), ErrorKind::Data);
}

#[test]
fn match_labels_follow_point_ids() {
    let ids = [7, 7, 9, 9, 3];
    let text = "0 7 0 1 7 0\n0 7 0 2 9 0\n\n3 9 0 4 3 0\n";
    let pairs = parse_matches(text, &ids).unwrap();
    assert_eq!(pairs.iter().map(|p| p.label).collect::<Vec<_>>(), [1, 0, 0]);
    assert_eq!((pairs[2].idx_a, pairs[2].idx_b), (3, 4));
}

#[test]
fn bad_match_lines_are_rejected() {
    let ids = [1, 2];
    assert!(matches!(parse_matches("0 1 0 5 2 0", &ids), Err(Error::Range(_))));
    assert!(matches!(parse_matches("0 1 0 1", &ids), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_matches("0 1 0 1 2 0\n0 x 0 1 2 0", &ids), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(parse_matches("0 2 0 1 2 0", &ids), Err(Error::Parse { .. })));
}

#[test]
fn ubc_layout_loads_across_sheets() {
    let dir = tempfile::tempdir().unwrap();
    for (i, name) in ["patches0000.bmp", "patches0001.bmp"].iter().enumerate() {
        let img = GrayImage::from_fn(1024, 1024, |x, y| Luma([((x / 64 + y / 64 + i as u32) % 256) as u8]));
        img.save(dir.path().join(name)).unwrap();
    }
    // 300 patches: the second sheet is only partly used.
    let info: String = (0..300).map(|i| format!("{} 0\n", i / 3)).collect();
    fs::write(dir.path().join("info.txt"), info).unwrap();
    fs::write(dir.path().join("m.txt"), "0 0 0 1 0 0\n3 1 0 299 99 0\n").unwrap();
    let ds = load_ubc_subset(dir.path(), "m.txt").unwrap();
    assert_eq!(ds.patches.len(), 300);
    assert_eq!(ds.dim(), 4096);
    assert_eq!(ds.pairs.len(), 2);
    assert_eq!(ds.positive_fraction(), 0.5);
    // Patch 256 is the first patch of the second sheet.
    assert_eq!(ds.patches[256].pixels()[0], 1.0 / 255.0);
    assert!(load_match_file(&dir.path().join("missing.txt"), &[]).is_err());
}

fn cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_prototypes: 10,
        pairs_per_class: 6,
        ..Default::default()
    }
}

#[test]
fn synthetic_data_is_balanced_and_deterministic() {
    let a = synth_dataset(&cfg(3)).unwrap();
    assert_eq!(a, synth_dataset(&cfg(3)).unwrap());
    assert_ne!(a.patches, synth_dataset(&cfg(4)).unwrap().patches);
    assert_eq!(a.pairs.len(), 60);
    assert_eq!(a.patches.len(), 120);
    assert_eq!(a.positive_fraction(), 0.5);
    let proto = a.prototype_of.as_ref().unwrap();
    for p in &a.pairs {
        assert_eq!(p.is_match(), proto[p.idx_a] == proto[p.idx_b]);
    }
    // No patch is reused across pairs.
    let used: HashSet<usize> = a.pairs.iter().flat_map(|p| [p.idx_a, p.idx_b]).collect();
    assert_eq!(used.len(), 120);
    assert!(a.patches.iter().all(|p| p.pixels().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn shared_prototype_seed_shares_prototypes_only() {
    let mut train = cfg(1);
    let mut test = cfg(2);
    train.noise_sigma = 0.0;
    train.shift_max = 0;
    test.noise_sigma = 0.0;
    test.shift_max = 0;
    train.prototype_seed = Some(77);
    test.prototype_seed = Some(77);
    let (a, b) = (synth_dataset(&train).unwrap(), synth_dataset(&test).unwrap());
    // Without noise or shift a view is its prototype, so both splits draw
    // from the same set of images.
    let bank = |d: &spm_core::patchdata::PatchDataset| {
        d.patches.iter().map(|p| p.pixels().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<HashSet<_>>()
    };
    assert_eq!(bank(&a).len(), 10);
    assert_eq!(bank(&a), bank(&b));
    test.prototype_seed = Some(78);
    assert!(bank(&a).is_disjoint(&bank(&synth_dataset(&test).unwrap())));
}

#[test]
fn invalid_synth_configs_are_config_errors() {
    for bad in [
        SynthConfig { n_prototypes: 1, ..cfg(0) },
        SynthConfig { side: 3, ..cfg(0) },
        SynthConfig { shift_max: 4, ..cfg(0) },
        SynthConfig { noise_sigma: -1.0, ..cfg(0) },
        SynthConfig { n_prototypes: 3, pairs_per_class: 3, ..cfg(0) },
    ] {
        assert_eq!(synth_dataset(&bad).unwrap_err().kind(), ErrorKind::Config);
    }
}

#[test]
fn container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&cfg(5)).unwrap();
    let (bin, csv) = (dir.path().join("t.spmp"), dir.path().join("t.csv"));
    save_dataset(&ds, &bin, &csv).unwrap();
    let back = load_dataset(&bin, &csv).unwrap();
    assert_eq!(back.patches, ds.patches);
    assert_eq!(back.pairs, ds.pairs);
    let x = ds.data_matrix(&[0, 5], true);
    assert_eq!(x.dim(), (64, 2));
    assert!(x.column(0).sum().abs() < 1e-10);
}
