//! Serialized forms of the configuration types accepted on the command line.

use conjlab_core::conjugacy::{ConjugacySettings, SampleSpec};
use conjlab_core::examples::PlanarRealization;
use conjlab_core::flows::{FieldBuiltin, MatrixBuiltin, ModulusKind};
use conjlab_core::regularity::PairMode;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn round_trip<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(v: &T) {
    let text = serde_json::to_string(v).unwrap();
    let back: T = serde_json::from_str(&text).unwrap();
    assert_eq!(&back, v, "{text}");
}

#[test]
fn field_builtins_are_tagged_by_name() {
    let f: FieldBuiltin = serde_json::from_str(r#"{"name": "planar_tanh", "sigma": 0.1}"#).unwrap();
    assert_eq!(f, FieldBuiltin::PlanarTanh { sigma: 0.1 });
    round_trip(&FieldBuiltin::SawtoothSine { c: 1.0, dim: 3 });
    round_trip(&FieldBuiltin::ScalarTime { eps: 0.1, delta: 0.5 });
}

#[test]
fn matrix_builtins_are_tagged_by_name() {
    let m: MatrixBuiltin =
        serde_json::from_str(r#"{"name": "sheared_saddle", "rate": 1, "shear": 0.5, "frequency": 2}"#).unwrap();
    assert_eq!(
        m,
        MatrixBuiltin::ShearedSaddle {
            rate: 1.0,
            shear: 0.5,
            frequency: 2.0
        }
    );
    round_trip(&MatrixBuiltin::PeriodicDiagonal {
        base: vec![-1.0, 1.0],
        amplitude: vec![0.2, 0.1],
        frequency: 1.5,
    });
}

#[test]
fn moduli_are_externally_tagged() {
    let m: ModulusKind = serde_json::from_str(r#"{"constant": 2.0}"#).unwrap();
    assert_eq!(m, ModulusKind::Constant(2.0));
    round_trip(&ModulusKind::Weighted {
        inner: Box::new(ModulusKind::Sawtooth { c: 1.0 }),
        eps: 0.1,
    });
    round_trip(&ModulusKind::Table {
        times: vec![0.0, 1.0],
        values: vec![0.5, 0.25],
    });
}

#[test]
fn settings_fill_defaults_and_reject_unknown_keys() {
    let s: ConjugacySettings = serde_json::from_str(r#"{"picard_tol": 1e-8}"#).unwrap();
    assert_eq!(s.picard_tol, 1e-8);
    assert_eq!(s.max_picard, ConjugacySettings::default().max_picard);
    round_trip(&s);
    assert!(serde_json::from_str::<ConjugacySettings>(r#"{"picard": 1}"#).is_err());
    let spec: SampleSpec = serde_json::from_str(r#"{"points": 7}"#).unwrap();
    assert_eq!(spec.points, 7);
    assert!(serde_json::from_str::<SampleSpec>(r#"{"pionts": 7}"#).is_err());
}

#[test]
fn enums_use_snake_case() {
    assert_eq!(
        serde_json::to_string(&PairMode::OriginAnchored).unwrap(),
        r#""origin_anchored""#
    );
    assert_eq!(
        serde_json::to_string(&PlanarRealization::default()).unwrap(),
        r#""tanh""#
    );
}
