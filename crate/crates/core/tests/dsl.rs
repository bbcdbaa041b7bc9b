use forge_core::dsl::{parse_bytes, serialize};
use forge_core::graph::{ErrorCategory, GraphError};
use forge_core::rng::SeededRng;
use forge_core::testing::{random_spec, SpecOptions};
use forge_core::{parse, validate};
use proptest::prelude::*;

const MNIST: &str = include_str!("../../../graphs/mnist_softmax.graph");

#[test]
fn reference_graphs_parse() {
    for (file, nodes) in [
        ("mnist_softmax.graph", 6),
        ("mlp_hidden.graph", 11),
        ("mlp_two_hidden.graph", 16),
        ("blobs_softmax.graph", 6),
        ("blobs_frozen.graph", 7),
    ] {
        let text = std::fs::read_to_string(format!("../../graphs/{file}")).unwrap();
        let g = validate(&parse(&text).unwrap()).unwrap();
        assert_eq!(g.node_count(), nodes, "{file}");
    }
}

#[test]
fn generated_specs_roundtrip() {
    let mut rng = SeededRng::new(500);
    for _ in 0..500 {
        let spec = random_spec(&mut rng, &SpecOptions::default());
        let text = serialize(&spec).unwrap();
        let back = parse(&text).unwrap_or_else(|e| panic!("{e:?}\n{text}"));
        assert!(back.same_structure(&spec), "{text}");
        assert_eq!(serialize(&back).unwrap(), text);
    }
}

#[test]
fn serialize_refuses_invalid_specs() {
    let mut spec = parse(MNIST).unwrap();
    spec.output = Some("nowhere".into());
    let errors: Vec<GraphError> = serialize(&spec).unwrap_err();
    assert_eq!(errors[0].category, ErrorCategory::MissingOutput);
}

#[test]
fn every_prefix_fails_with_a_position_or_parses() {
    let bytes = MNIST.as_bytes();
    for cut in 0..bytes.len() {
        if let Err(errors) = parse_bytes(&bytes[..cut]) {
            assert!(!errors.is_empty());
            for e in errors {
                assert!(e.line >= 1 && e.column >= 1, "{e}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Err(errors) = parse_bytes(&bytes) {
            prop_assert!(!errors.is_empty());
            for e in errors {
                prop_assert!(e.line >= 1 && e.column >= 1);
            }
        }
    }

    #[test]
    fn mutated_sources_never_panic(
        edits in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>(), 0u8..3), 1..8)
    ) {
        let mut bytes = MNIST.as_bytes().to_vec();
        for (at, byte, kind) in edits {
            let i = at.index(bytes.len() + 1);
            match kind {
                0 if i < bytes.len() => bytes[i] = byte,
                1 if i < bytes.len() => { bytes.remove(i); }
                _ => bytes.insert(i, byte),
            }
        }
        if let Err(errors) = parse_bytes(&bytes) {
            for e in errors {
                prop_assert!(e.line >= 1 && e.column >= 1);
            }
        }
    }

    #[test]
    fn declaration_order_is_irrelevant(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let spec = random_spec(&mut rng, &SpecOptions::default());
        let mut shuffled = spec.clone();
        rng.shuffle(&mut shuffled.params);
        rng.shuffle(&mut shuffled.nodes);
        prop_assert_eq!(serialize(&spec).unwrap(), serialize(&shuffled).unwrap());
    }
}
