use std::collections::{BTreeMap, HashSet};

use super::*;

fn small(per_class: usize) -> GeneratorConfig {
    GeneratorConfig {
        samples_per_class: per_class,
        seed: 7,
        ..GeneratorConfig::default()
    }
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.data().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn default_config_matches_table_scale() {
    let cfg = GeneratorConfig::default();
    let data = generate_dataset_parallel(&cfg).unwrap();
    assert_eq!(data.len(), 3600);
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &data {
        *per_class.entry(s.class_label).or_default() += 1;
        assert!(
            s.onset_frame >= 75 && s.onset_frame <= 135,
            "{} onset {}",
            s.id,
            s.onset_frame
        );
        assert_eq!(s.frames, 150);
        assert!(s.modality_features.iter().all(Matrix::is_finite));
    }
    assert_eq!(per_class.len(), 6);
    assert!(per_class.values().all(|&n| n == 600));

    let day = data.iter().filter(|s| s.metadata.daytime == Daytime::Day).count() as f64 / 3600.0;
    let clear = data.iter().filter(|s| s.metadata.weather == Weather::Clear).count() as f64 / 3600.0;
    assert!((day - 2.0 / 3.0).abs() < 0.03, "day fraction {day}");
    assert!((clear - 2.0 / 3.0).abs() < 0.03, "clear fraction {clear}");
}

#[test]
fn onsets_cluster_around_four_seconds() {
    let data = generate_dataset(&small(100)).unwrap();
    let mean = data.iter().map(|s| s.onset_frame as f64).sum::<f64>() / data.len() as f64;
    assert!((mean - 120.0).abs() < 2.0, "mean onset {mean}");
}

#[test]
fn presets_cover_twenty_five_classes() {
    let counts: Vec<usize> = Scenario::ALL
        .iter()
        .map(|s| GeneratorConfig::for_scenario(*s).num_classes)
        .collect();
    assert_eq!(counts, vec![6, 5, 4, 4, 6]);
    assert_eq!(counts.iter().sum::<usize>(), 25);
    for s in Scenario::ALL {
        assert_eq!(Scenario::from_tag(s.tag()), Some(s));
        let cfg = GeneratorConfig {
            samples_per_class: 2,
            ..GeneratorConfig::for_scenario(s)
        };
        let data = generate_dataset(&cfg).unwrap();
        assert_eq!(data.len(), 2 * cfg.num_classes);
        assert!(data[0].id.starts_with(s.tag()));
    }
    assert_eq!(Scenario::DriverManeuver.class_name(4), "CL");
    assert_eq!(Scenario::Accident.class_name(7), "C7");
}

#[test]
fn noiseless_features_are_ramped_templates() {
    let cfg = GeneratorConfig {
        noise_sigma: 0.0,
        steering_noise: 0.0,
        speed_noise: 0.0,
        ..small(3)
    };
    let bank = TemplateBank::new(&cfg);
    for (i, s) in generate_dataset(&cfg).unwrap().iter().enumerate() {
        let lat = Latents::draw(&cfg, i);
        let snr = lat.snr(&cfg);
        for m in 0..2 {
            let x = &s.modality_features[m];
            let k = cfg.template_index(m, s.class_label);
            for t in s.onset_frame..s.frames {
                let r = ((t - s.onset_frame + 1) as f64 / 15.0).min(1.0);
                for j in 0..x.cols() {
                    let expected = snr * ((1.0 - r) * bank.neutral[m][j] + r * bank.action[m][k][j]);
                    assert_eq!(x.get(t, j), expected as f32 as f64, "{} m{m} t{t} j{j}", s.id);
                }
            }
            // Well before the preparatory cue, every class shows the neutral vector.
            for j in 0..x.cols() {
                assert_eq!(x.get(0, j), (snr * bank.neutral[m][j]) as f32 as f64);
            }
        }
        for t in 0..s.onset_frame {
            assert_eq!(s.raw_steering[t], 0.0);
            assert_eq!(s.raw_speed[t], lat.base_speed as f32 as f64);
        }
    }
}

#[test]
fn preparatory_cues_are_orthogonal_to_templates() {
    for cross in [false, true] {
        let cfg = GeneratorConfig {
            cross_modal_coding: cross,
            ..small(1)
        };
        let bank = TemplateBank::new(&cfg);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for m in 0..2 {
            for p in &bank.precursor[m] {
                assert!(dot(p, &bank.neutral[m]).abs() < 1e-9);
                for a in &bank.action[m] {
                    assert!(dot(p, a).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn cross_modal_indices_pair_classes_within_each_modality() {
    for n in [4, 5, 6] {
        let cfg = GeneratorConfig {
            num_classes: n,
            cross_modal_coding: true,
            ..GeneratorConfig::default()
        };
        let joint: HashSet<(usize, usize)> = (0..n)
            .map(|c| (cfg.template_index(0, c), cfg.template_index(1, c)))
            .collect();
        assert_eq!(joint.len(), n, "joint code must identify the class");
        for m in 0..2 {
            let distinct: HashSet<usize> = (0..n).map(|c| cfg.template_index(m, c)).collect();
            assert!(distinct.len() < n, "modality {m} alone must confuse classes");
        }
    }
}

#[test]
fn generation_is_deterministic_serially_and_in_parallel() {
    let cfg = small(20);
    let a = generate_dataset(&cfg).unwrap();
    let b = generate_dataset(&cfg).unwrap();
    let c = generate_dataset_parallel(&cfg).unwrap();
    assert_eq!(a, b);
    for (x, y) in a.iter().zip(&c) {
        assert_eq!(x.id, y.id);
        for (p, q) in x.modality_features.iter().zip(&y.modality_features) {
            assert_eq!(bits(p), bits(q));
        }
        assert_eq!(x.raw_steering, y.raw_steering);
        assert_eq!(x.raw_speed, y.raw_speed);
    }
    let other = generate_dataset(&GeneratorConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn oracle_properties_under_cross_modal_coding() {
    let cfg = GeneratorConfig {
        cross_modal_coding: true,
        ..small(100)
    };
    let data = generate_dataset_parallel(&cfg).unwrap();
    let all = OracleModality::ALL;
    let chance = 1.0 / cfg.num_classes as f64;
    let pre = oracle_accuracy(&cfg, &data, &all, OracleWindow::PreOnset).unwrap();
    assert!((pre - chance).abs() <= 0.05, "pre-onset oracle {pre}");
    for m in all {
        let single = oracle_accuracy(&cfg, &data, &[m], OracleWindow::Full).unwrap();
        assert!(single <= 0.70, "{m:?} alone reaches {single}");
    }
    let joint = oracle_accuracy(
        &cfg,
        &data,
        &[OracleModality::Appearance, OracleModality::Motion],
        OracleWindow::Full,
    )
    .unwrap();
    assert!(joint > 0.95, "joint oracle {joint}");
    let everything = oracle_accuracy(&cfg, &data, &all, OracleWindow::Full).unwrap();
    assert!(everything > 0.95, "all-modality oracle {everything}");
}

#[test]
fn oracle_rejects_foreign_sequences() {
    let cfg = small(2);
    let mut data = generate_dataset(&cfg).unwrap();
    data.swap(0, 3);
    assert!(oracle_accuracy(&cfg, &data, &OracleModality::ALL, OracleWindow::Full).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        GeneratorConfig {
            num_classes: 1,
            ..small(1)
        },
        GeneratorConfig {
            samples_per_class: 0,
            ..small(1)
        },
        GeneratorConfig {
            night_snr_penalty: 0.0,
            ..small(1)
        },
        GeneratorConfig {
            adverse_weather_snr_penalty: 1.5,
            ..small(1)
        },
        GeneratorConfig {
            noise_sigma: -1.0,
            ..small(1)
        },
        GeneratorConfig {
            appearance_dim: 4,
            ..small(1)
        },
        GeneratorConfig { fps: 0.0, ..small(1) },
    ];
    for cfg in bad {
        assert!(matches!(generate_dataset(&cfg), Err(Error::Config(_))), "{cfg:?}");
    }
    // Tiny widths are fine without preparatory cues.
    let cfg = GeneratorConfig {
        appearance_dim: 2,
        motion_dim: 1,
        precursor_gain: 0.0,
        ..small(1)
    };
    assert_eq!(generate_dataset(&cfg).unwrap()[0].modality_features[1].cols(), 1);
}

mod files {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_dataset(&small(3)).unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.metadata, b.metadata);
            assert_eq!(a.onset_frame, b.onset_frame);
            for (p, q) in a.modality_features.iter().zip(&b.modality_features) {
                assert_eq!(bits(p), bits(q));
            }
            let to_bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(to_bits(&a.raw_steering), to_bits(&b.raw_steering));
            assert_eq!(to_bits(&a.raw_speed), to_bits(&b.raw_speed));
        }
        assert_eq!(back, data);
    }

    #[test]
    fn file_layout_is_little_endian() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig {
            appearance_dim: 2,
            motion_dim: 3,
            precursor_gain: 0.0,
            ..small(1)
        };
        let s = &generate_dataset(&cfg).unwrap()[0];
        let path = dir.path().join("one.vad");
        write_sequence_file(&path, s).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"VAD1");
        assert_eq!(bytes[4..8], 150u32.to_le_bytes());
        assert_eq!(bytes[8..12], 2u32.to_le_bytes());
        assert_eq!(bytes[12..16], 2u32.to_le_bytes());
        assert_eq!(bytes[16..20], 3u32.to_le_bytes());
        assert_eq!(bytes[20..24], (s.modality_features[0].get(0, 0) as f32).to_le_bytes());
        assert_eq!(bytes.len(), 20 + 4 * 150 * (2 + 3 + 2) + 4);
        assert_eq!(bytes[bytes.len() - 4..], (s.onset_frame as u32).to_le_bytes());
        let manifest = std::fs::read_to_string(dir.path().join("x")).err();
        assert!(manifest.is_some());
    }

    #[test]
    fn manifest_records_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_dataset(&small(1)).unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.ends_with('\n'));
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in [
            "id", "scenario", "class", "daytime", "weather", "user", "fps", "frames", "file",
        ] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(first["scenario"], "DM");
        assert_eq!(first["frames"], 150);
    }

    #[test]
    fn empty_dataset_has_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&[], dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap(), "");
        assert!(read_dataset(dir.path()).unwrap().is_empty());
    }

    fn written() -> (tempfile::TempDir, Vec<Sequence>) {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_dataset(&small(1)).unwrap();
        write_dataset(&data, dir.path()).unwrap();
        (dir, data)
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let (dir, data) = written();
        let path = dir.path().join(format!("{}.vad", data[0].id));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncation_is_reported() {
        let (dir, data) = written();
        let path = dir.path().join(format!("{}.vad", data[2].id));
        let bytes = std::fs::read(&path).unwrap();
        for cut in [2, 10, bytes.len() / 2, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            let err = read_dataset(dir.path()).unwrap_err();
            assert!(matches!(err, Error::Truncated { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn manifest_disagreement_is_reported() {
        let (dir, _) = written();
        let path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"frames\":150", "\"frames\":149", 1)).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::ManifestMismatch { .. })));

        let (dir, data) = written();
        std::fs::remove_file(dir.path().join(format!("{}.vad", data[1].id))).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::ManifestMismatch { .. })));
    }

    #[test]
    fn trailing_bytes_are_malformed() {
        let (dir, data) = written();
        let path = dir.path().join(format!("{}.vad", data[0].id));
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0, 0]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Malformed { .. })));
    }
}

mod splits {
    use super::*;

    #[test]
    fn random_split_is_seventy_thirty_per_class() {
        let data = generate_dataset(&small(10)).unwrap();
        let s = split(&data, &SplitSpec::random(3)).unwrap();
        for c in 0..6 {
            assert_eq!(s.train.iter().filter(|&&i| data[i].class_label == c).count(), 7);
            assert_eq!(s.test.iter().filter(|&&i| data[i].class_label == c).count(), 3);
        }
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60).collect::<Vec<_>>());
        assert_eq!(s, split(&data, &SplitSpec::random(3)).unwrap());
        assert_ne!(s, split(&data, &SplitSpec::random(4)).unwrap());
    }

    #[test]
    fn condition_splits_follow_tags() {
        let data = generate_dataset(&small(20)).unwrap();
        let s = split(&data, &SplitSpec::of_kind(SplitKind::Daytime, 0)).unwrap();
        assert!(s.train.iter().all(|&i| data[i].metadata.daytime == Daytime::Day));
        assert!(s.test.iter().all(|&i| data[i].metadata.daytime == Daytime::Night));
        assert_eq!(s.train.len() + s.test.len(), data.len());
        let w = split(&data, &SplitSpec::of_kind(SplitKind::Weather, 0)).unwrap();
        assert!(w.train.iter().all(|&i| data[i].metadata.weather == Weather::Clear));
        assert!(w.test.iter().all(|&i| data[i].metadata.weather == Weather::Adverse));
    }

    #[test]
    fn split_errors() {
        let data = generate_dataset(&GeneratorConfig {
            day_fraction: 1.0,
            ..small(3)
        })
        .unwrap();
        assert!(split(&data, &SplitSpec::of_kind(SplitKind::Daytime, 0)).is_err());
        assert!(split(&[], &SplitSpec::random(0)).is_err());
        let bad = SplitSpec {
            train_fraction: 1.0,
            ..SplitSpec::random(0)
        };
        assert!(split(&data, &bad).is_err());
    }
}
