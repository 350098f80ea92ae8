mod common;

use std::fs;
use std::path::Path;

use common::*;
use efddpm::harness::latent_file::{decode_latent, encode_latent, FORMAT_VERSION, MAGIC};
use efddpm::harness::{load_latent, load_latent_for, rerun, run, save_latent, ExperimentConfig, Kind, Manifest, MANIFEST_FILE};
use efddpm::inversion::{cyclediffusion_invert, ddim_invert, edit_friendly_invert};
use efddpm::sampler::{ddpm_sample, SampleOptions};
use efddpm::{Condition, Error, LatentCode, RngStream};
use proptest::prelude::*;

fn same_bits(a: &LatentCode, b: &LatentCode) -> bool {
    let bits = |c: &LatentCode| {
        let mut v: Vec<u64> = c.x_t().data().iter().map(|x| x.to_bits()).collect();
        for z in c.noise() {
            v.extend(z.data().iter().map(|x| x.to_bits()));
        }
        for x in c.aux_chain().into_iter().flatten() {
            v.extend(x.data().iter().map(|x| x.to_bits()));
        }
        v
    };
    a == b && bits(a) == bits(b)
}

fn sample_code(kind: u8, steps: usize, seed: u64, with_aux: bool) -> LatentCode {
    let s = schedule(steps, 1.0);
    let m = conditional();
    let mut rng = RngStream::new(seed);
    let cond = Condition::label("a");
    let x0 = m.sample(&mut rng, Some("a")).unwrap();
    let code = match kind % 4 {
        0 => edit_friendly_invert(&x0, &m, &s, &mut rng, &cond).unwrap(),
        1 => cyclediffusion_invert(&x0, &m, &s, &mut rng, &Condition::none()).unwrap(),
        2 => ddim_invert(&x0, &m, &s, &cond).unwrap(),
        _ => ddpm_sample(&m, &s, &mut rng, &Condition::none(), &SampleOptions::default()).unwrap().to_latent().unwrap(),
    };
    if with_aux {
        code
    } else {
        code.without_aux()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn latent_files_round_trip(kind in 0u8..4, steps in 1usize..30, seed in any::<u64>(), with_aux in any::<bool>()) {
        let code = sample_code(kind, steps, seed, with_aux);
        let bytes = encode_latent(&code).unwrap();
        let back = decode_latent(&bytes).unwrap();
        prop_assert!(same_bits(&code, &back));
        prop_assert_eq!(encode_latent(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_detected(cut in 1usize..200) {
        let bytes = encode_latent(&sample_code(0, 5, 1, true)).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_latent(&bytes[..keep]).is_err());
    }
}

#[test]
fn file_round_trip_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("code.efnz");
    let code = sample_code(0, 12, 9, true);
    save_latent(&code, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], &MAGIC);
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
    assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), code.fingerprint());
    assert!(same_bits(&load_latent(&path).unwrap(), &code));
}

#[test]
fn wrong_magic_is_a_format_error() {
    let mut bytes = encode_latent(&sample_code(1, 8, 2, true)).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_latent(&bytes), Err(Error::Format(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.efnz");
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_latent(&path), Err(Error::Format(_))));
}

#[test]
fn version_gate() {
    let code = sample_code(0, 6, 3, true);
    let mut bytes = encode_latent(&code).unwrap();
    // version 1 files stay readable by every later reader
    bytes[4..6].copy_from_slice(&1u16.to_le_bytes());
    assert!(same_bits(&decode_latent(&bytes).unwrap(), &code));
    bytes[4..6].copy_from_slice(&0u16.to_le_bytes());
    assert!(matches!(decode_latent(&bytes), Err(Error::Format(_))));
    bytes[4..6].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(decode_latent(&bytes), Err(Error::Format(_))));
}

#[test]
fn trailing_bytes_are_corruption() {
    let mut bytes = encode_latent(&sample_code(3, 4, 4, true)).unwrap();
    bytes.push(0);
    assert!(matches!(decode_latent(&bytes), Err(Error::Corrupt(_))));
}

#[test]
fn fingerprint_mismatch_at_use() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("code.efnz");
    save_latent(&sample_code(0, 10, 5, true), &path).unwrap();
    assert!(load_latent_for(&path, &schedule(10, 1.0)).is_ok());
    assert!(matches!(load_latent_for(&path, &schedule(10, 0.5)), Err(Error::IncompatibleLatent(_))));
    assert!(matches!(load_latent_for(&path, &schedule(11, 1.0)), Err(Error::IncompatibleLatent(_))));
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn rerun_from_manifest_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::preset(Kind::Shift);
    cfg.count = 3;
    cfg.seed = 17;
    cfg.out_dir = dir.path().join("first");
    let first = run(&cfg).unwrap();
    let manifest = Manifest::load(&first.out_dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.seed, 17);
    assert_eq!(manifest.kind, "shift");
    let second = rerun(&first.out_dir.join(MANIFEST_FILE), Some(&dir.path().join("second"))).unwrap();
    let (a, b) = (csv_files(&first.out_dir), csv_files(&second.out_dir));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn configs_round_trip_through_toml() {
    for kind in Kind::ALL {
        let cfg = ExperimentConfig::preset(kind);
        cfg.validate().unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg, "{kind}");
    }
}

#[test]
fn invalid_configs_exit_with_2() {
    let mut cfg = ExperimentConfig::preset(Kind::CondSwap);
    cfg.params.target = Some("nowhere".into());
    let err = run(&cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
    assert_eq!(err.exit_code(), 2);

    let mut cfg = ExperimentConfig::preset(Kind::NoiseStats);
    cfg.schedule.eta = 0.0;
    assert_eq!(run(&cfg).unwrap_err().exit_code(), 2);

    assert!(ExperimentConfig::from_toml("kind = \"sample\"\nseed = 1\nbogus = 3\n").is_err());
}
