use telesee::corpus::{synth_generate, to_jsonl};
use telesee::schema::{compile_schema, SchemaDef};

const GOLDEN: &str = include_str!("fixtures/synth_n1_seed7.jsonl");

#[test]
fn one_document_matches_fixture() {
    let schema = compile_schema(&SchemaDef::sixgtech()).unwrap();
    let got = to_jsonl(&synth_generate(&schema, 1, 7));
    if std::env::var_os("TELESEE_BLESS").is_some() {
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/synth_n1_seed7.jsonl"), &got).unwrap();
        return;
    }
    assert_eq!(got, GOLDEN);
}
