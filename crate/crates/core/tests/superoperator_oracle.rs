//! The Pauli-phase superoperator against one assembled from dense Kronecker products.

use hierarchy_core::liouvillian::{apply_adjoint, build_adjoint_superoperator, KossakowskiMatrix, LindbladSet, SpectrumSpec};
use hierarchy_core::pauli::{Pauli, PauliString};
use hierarchy_core::topology::Topology;
use hierarchy_core::C64;

type Dense = Vec<Vec<C64>>;

fn zeros(n: usize) -> Dense {
    vec![vec![C64::new(0.0, 0.0); n]; n]
}

fn kron(a: &Dense, b: &Dense) -> Dense {
    let (na, nb) = (a.len(), b.len());
    let mut out = zeros(na * nb);
    for i in 0..na {
        for j in 0..na {
            for k in 0..nb {
                for l in 0..nb {
                    out[i * nb + k][j * nb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

fn mul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut out = zeros(n);
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == C64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn dagger(a: &Dense) -> Dense {
    let n = a.len();
    (0..n).map(|i| (0..n).map(|j| a[j][i].conj()).collect()).collect()
}

fn axpy(out: &mut Dense, s: C64, a: &Dense) {
    for (ro, ra) in out.iter_mut().zip(a) {
        for (o, v) in ro.iter_mut().zip(ra) {
            *o += s * v;
        }
    }
}

fn trace(a: &Dense) -> C64 {
    (0..a.len()).map(|i| a[i][i]).sum()
}

/// Site 0 is the leftmost tensor factor.
fn dense_string(s: &PauliString) -> Dense {
    let mut out = vec![vec![C64::new(1.0, 0.0)]];
    for p in s.paulis() {
        let m = p.matrix();
        let local = vec![vec![m[0], m[1]], vec![m[2], m[3]]];
        out = kron(&out, &local);
    }
    out
}

/// `𝖫_{yx} = Tr(S_y† 𝓛†[S_x])` from explicit matrices.
fn dense_superoperator(set: &LindbladSet, k: &KossakowskiMatrix) -> Vec<Vec<C64>> {
    let l = set.sites();
    let n = 1usize << l;
    let dim = n * n;
    let norm = 1.0 / (n as f64).sqrt();
    let basis: Vec<Dense> = (0..dim)
        .map(|i| {
            let mut d = dense_string(&PauliString::from_index(l, i).unwrap());
            d.iter_mut().flatten().for_each(|v| *v *= norm);
            d
        })
        .collect();
    let ops: Vec<Dense> = set.operators().iter().map(dense_string).collect();
    let mut out = vec![vec![C64::new(0.0, 0.0); dim]; dim];
    for (x, sx) in basis.iter().enumerate() {
        let mut image = zeros(n);
        for (a, la) in ops.iter().enumerate() {
            for (b, lb) in ops.iter().enumerate() {
                let kab = k.get(a, b);
                if kab.norm() == 0.0 {
                    continue;
                }
                // K_{nm}(L_m† S L_n − ½{L_m† L_n, S}) with n = a, m = b
                let lbd = dagger(lb);
                let sandwich = mul(&mul(&lbd, sx), la);
                let prod = mul(&lbd, la);
                axpy(&mut image, kab, &sandwich);
                axpy(&mut image, -0.5 * kab, &mul(&prod, sx));
                axpy(&mut image, -0.5 * kab, &mul(sx, &prod));
            }
        }
        for (y, sy) in basis.iter().enumerate() {
            out[y][x] = trace(&mul(&dagger(sy), &image));
        }
    }
    out
}

fn assert_matches(set: &LindbladSet, k: &KossakowskiMatrix) {
    let fast = build_adjoint_superoperator(set, k).unwrap();
    let oracle = dense_superoperator(set, k);
    let mut worst = 0.0f64;
    for (y, row) in oracle.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            worst = worst.max((fast.get(y, x) - v).norm());
        }
    }
    assert!(worst < 1e-12, "{}: max entry error {worst:e}", set.describe());
}

#[test]
fn two_site_sets_match_dense_kronecker_construction() {
    let chain = Topology::chain(2).unwrap();
    for set in [LindbladSet::one_body(2).unwrap(), LindbladSet::two_body(&chain).unwrap()] {
        assert_matches(&set, &KossakowskiMatrix::scaled_identity(set.count(), 2));
        for seed in 0..3 {
            let k = KossakowskiMatrix::sample(set.count(), 2, seed, &SpectrumSpec::default()).unwrap();
            assert_matches(&set, &k);
        }
    }
}

#[test]
fn three_site_random_sets_match_dense_construction() {
    let set = LindbladSet::one_body(3).unwrap();
    let k = KossakowskiMatrix::sample(set.count(), 3, 11, &SpectrumSpec::default()).unwrap();
    assert_matches(&set, &k);
    let set = LindbladSet::two_body(&Topology::chain(3).unwrap()).unwrap();
    let k = KossakowskiMatrix::sample(set.count(), 3, 12, &SpectrumSpec::default()).unwrap();
    assert_matches(&set, &k);
}

#[test]
fn matrix_free_action_matches_dense_product() {
    let set = LindbladSet::two_body(&Topology::chain(3).unwrap()).unwrap();
    let k = KossakowskiMatrix::sample(set.count(), 3, 5, &SpectrumSpec::default()).unwrap();
    let m = build_adjoint_superoperator(&set, &k).unwrap();
    let v: Vec<C64> = (0..64).map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
    let a = apply_adjoint(&set, &k, &v).unwrap();
    let b = m.apply(&v).unwrap();
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() <= 1e-12 * scale);
    }
}

#[test]
fn dense_strings_are_hermitian_unitaries() {
    let s = PauliString::from_paulis(&[Pauli::Y, Pauli::X]).unwrap();
    let d = dense_string(&s);
    let p = mul(&d, &d);
    for (i, row) in p.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - C64::new(want, 0.0)).norm() < 1e-15);
        }
    }
    assert_eq!(d, dagger(&d));
}
