//! The command-line pipeline end to end.

use hierarchy_core::cli::run;
use hierarchy_core::experiment::TraceSet;

fn argv(s: &str) -> Vec<String> {
    std::iter::once("hierarchy".to_string()).chain(s.split_whitespace().map(String::from)).collect()
}

#[test]
fn store_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("w2.toml");
    std::fs::write(&cfg, "l = 3\nfamily = \"W2\"\nt_max = 6\nshots = 2048\n[noise]\np1 = 0.005\np2 = 0.02\n").unwrap();
    let mut stores = Vec::new();
    for jobs in [1, 2] {
        let out = dir.path().join(format!("j{jobs}"));
        assert_eq!(run(argv(&format!("--jobs {jobs} simulate --config {} --out {}", cfg.display(), out.display()))), 0);
        stores.push(std::fs::read(out.join("traces.txt")).unwrap());
    }
    assert_eq!(stores[0], stores[1]);
    let set = TraceSet::parse(std::str::from_utf8(&stores[0]).unwrap()).unwrap();
    assert_eq!(set.sites(), Some(3));
    // 26 {I,X,Z} strings, 7 depths, one state per setting
    assert_eq!(set.traces().len() % 26, 0);
}

#[test]
fn default_w2_plan_covers_every_ixz_string() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("w2.toml");
    std::fs::write(&cfg, "l = 5\nfamily = \"W2\"\n").unwrap();
    let out = dir.path().join("o");
    let cli = format!("--dry-run simulate --config {} --out {}", cfg.display(), out.display());
    assert_eq!(run(argv(&cli)), 0);
    let p = hierarchy_core::experiment::ProtocolConfig::load(&cfg).unwrap().validate().unwrap();
    assert_eq!(p.observables.len(), 242);
    assert!(p.plan().contains("242 observables"));
    assert!(!out.exists());
}

#[test]
fn liouville_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut spectra = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let cmd = format!("liouville --l 3 --bodies 2 --topo chain:3 --seed 4 --out {}", out.display());
        assert_eq!(run(argv(&cmd)), 0);
        spectra.push(std::fs::read(out.join("spectrum.txt")).unwrap());
        let pred = std::fs::read_to_string(out.join("predictions.txt")).unwrap();
        assert!(pred.contains("# turnback_k:"), "{pred}");
    }
    assert_eq!(spectra[0], spectra[1]);
}
