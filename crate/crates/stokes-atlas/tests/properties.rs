//! Property tests for the exact transport algebra and the text formats.

use num_complex::Complex;
use proptest::prelude::*;
use stokes_atlas::io::{format_complex, parse_complex};
use stokes_atlas::transport::{
    apply_higher, apply_stokes, base_sigma, Automorphism, ConnectionState, LinearForm, StokesMatrix,
};

/// Random antisymmetric 4x4 integer matrix with small entries.
fn antisymmetric() -> impl Strategy<Value = StokesMatrix<i64>> {
    prop::collection::vec(-3i64..=3, 6).prop_map(|v| {
        let pairs = [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)];
        let entries: Vec<(usize, usize, i64)> =
            pairs.iter().zip(&v).flat_map(|(&(i, j), &s)| [(i, j, s), (j, i, -s)]).collect();
        StokesMatrix::from_entries(4, &entries).expect("labels in range")
    })
}

/// Random automorphism with distinct labels.
fn automorphism() -> impl Strategy<Value = Automorphism> {
    let perm = Just(vec![1usize, 2, 3, 4]).prop_shuffle();
    (perm, any::<bool>(), any::<bool>()).prop_map(|(p, higher, up)| {
        let direction = if up { 1 } else { -1 };
        if higher {
            Automorphism::Higher { i: p[0], k: p[1], j: p[2], direction }
        } else {
            Automorphism::Stokes { i: p[0], j: p[1], direction }
        }
    })
}

fn state(s: StokesMatrix<i64>) -> ConnectionState<i64> {
    ConnectionState::new(Complex::new(3.0, 0.5), base_sigma(4), s, true)
}

fn apply(st: ConnectionState<i64>, a: Automorphism) -> ConnectionState<i64> {
    match a {
        Automorphism::Stokes { i, j, direction } => apply_stokes(st, i, j, direction),
        Automorphism::Higher { i, k, j, direction } => apply_higher(st, i, k, j, direction),
    }
    .expect("valid labels")
}

proptest! {
    #[test]
    fn complex_literals_round_trip(re in -1e12f64..1e12, im in -1e12f64..1e12, tiny in -1e-9f64..1e-9) {
        for z in [Complex::new(re, im), Complex::new(tiny, re), Complex::new(im, tiny)] {
            let back = parse_complex(&format_complex(z)).expect("formatted literal parses");
            prop_assert_eq!(back, z);
        }
    }

    #[test]
    fn word_followed_by_inverse_word_is_identity(s in antisymmetric(), word in prop::collection::vec(automorphism(), 1..12)) {
        let start = state(s);
        let mut st = start.clone();
        for &a in &word {
            st = apply(st, a);
        }
        for a in word.iter().rev() {
            st = apply(st, a.inverse());
        }
        prop_assert_eq!(&st.sigma, &start.sigma);
        prop_assert_eq!(&st.stokes, &start.stokes);
    }

    #[test]
    fn antisymmetry_survives_every_step(s in antisymmetric(), word in prop::collection::vec(automorphism(), 1..12)) {
        let mut st = state(s);
        for &a in &word {
            st = apply(st, a);
            prop_assert!(st.stokes.is_antisymmetric(), "after {:?}", a);
        }
    }

    #[test]
    fn commuting_automorphisms_are_order_independent(s in antisymmetric(), a in automorphism(), b in automorphism()) {
        prop_assume!(a.commutes_with(&b));
        let ab = apply(apply(state(s.clone()), a), b);
        let ba = apply(apply(state(s), b), a);
        prop_assert_eq!(ab.sigma, ba.sigma);
        prop_assert_eq!(ab.stokes, ba.stokes);
    }

    #[test]
    fn sigma_update_is_linear_in_beta(s in antisymmetric(), word in prop::collection::vec(automorphism(), 1..8),
                                      x in prop::collection::vec(-5i64..=5, 4), y in prop::collection::vec(-5i64..=5, 4)) {
        let mut st = state(s);
        for &a in &word {
            st = apply(st, a);
        }
        let sum: Vec<i64> = x.iter().zip(&y).map(|(p, q)| p + q).collect();
        for f in &st.sigma {
            prop_assert_eq!(f.eval(&sum), f.eval(&x) + f.eval(&y));
        }
    }
}

#[test]
fn forms_print_in_reference_notation() {
    let st = apply_stokes(state(StokesMatrix::base()), 1, 2, 1).expect("valid labels");
    let st = apply_stokes(st, 2, 4, -1).expect("valid labels");
    let text: Vec<String> = st.sigma.iter().map(|f| f.to_string()).collect();
    assert_eq!(text, ["b1", "-b1+b2", "b3", "-b1+b2+b4"]);
    assert_eq!(LinearForm::<i64>::constant(0).to_string(), "0");
}
