use std::fs;
use std::path::{Path, PathBuf};

use ltmlab::data::{load_corpus, load_corpus_with, Level, Split, SplitFiles, Vocab, EOS, UNK};
use ltmlab::Error;

fn write_fixture(dir: &Path) {
    // Nine words and one <eos> per file.
    fs::write(dir.join("train.txt"), "the cat sat on the mat with the hat\n").unwrap();
    fs::write(dir.join("valid.txt"), "the dog sat on the cat with the mat\n").unwrap();
    fs::write(dir.join("test.txt"), "a cat ate the hat on the mat today\n").unwrap();
}

#[test]
fn word_fixture_yields_thirty_ids() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let c = load_corpus(dir.path(), Level::Word, None).unwrap();
    assert_eq!(c.train.len() + c.valid.len() + c.test.len(), 30);
    for s in [Split::Train, Split::Valid, Split::Test] {
        assert_eq!(c.split(s).len(), 10);
        assert_eq!(*c.split(s).last().unwrap(), c.vocab.id_of(EOS));
    }
    // "dog", "a", "ate" and "today" never occur in train.
    let unk = c.vocab.unk_id();
    assert_eq!(c.valid.iter().filter(|&&i| i == unk).count(), 1);
    assert_eq!(c.test.iter().filter(|&&i| i == unk).count(), 3);
    assert_eq!(c.vocab.tokens().last().map(String::as_str), Some(UNK));
}

#[test]
fn word_round_trip_on_canonical_text() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let c = load_corpus(dir.path(), Level::Word, None).unwrap();
    let text = fs::read_to_string(dir.path().join("train.txt")).unwrap();
    let decoded = c.vocab.decode(&c.train).unwrap();
    assert_eq!(decoded.replace(" \n", "\n"), text);
}

#[test]
fn char_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let c = load_corpus(dir.path(), Level::Char, None).unwrap();
    let text = fs::read_to_string(dir.path().join("train.txt")).unwrap();
    assert_eq!(c.vocab.decode(&c.train).unwrap(), text);
    assert_eq!(c.train.len(), text.chars().count());
}

#[test]
fn missing_split_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    fs::remove_file(dir.path().join("valid.txt")).unwrap();
    match load_corpus(dir.path(), Level::Word, None) {
        Err(Error::MissingFile(p)) => assert_eq!(p, dir.path().join("valid.txt")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_utf8_reports_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let mut bytes = b"abc de".to_vec();
    bytes.push(0xff);
    bytes.extend_from_slice(b"xyz\n");
    fs::write(dir.path().join("test.txt"), bytes).unwrap();
    match load_corpus(dir.path(), Level::Char, None) {
        Err(Error::Utf8 { path, offset }) => {
            assert_eq!(path, dir.path().join("test.txt"));
            assert_eq!(offset, 6);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_training_text_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    fs::write(dir.path().join("train.txt"), "").unwrap();
    assert!(matches!(load_corpus(dir.path(), Level::Char, None), Err(Error::EmptyText)));
}

#[test]
fn content_hash_tracks_every_byte() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let a = load_corpus(dir.path(), Level::Word, None).unwrap().provenance.hash;
    let b = load_corpus(dir.path(), Level::Char, None).unwrap().provenance.hash;
    assert_eq!(a, b);
    fs::write(dir.path().join("test.txt"), "a cat ate the hat on the mat today!\n").unwrap();
    let c = load_corpus(dir.path(), Level::Word, None).unwrap().provenance.hash;
    assert_ne!(a, c);
}

#[test]
fn custom_split_names() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.txt"), "xy\n").unwrap();
    fs::write(dir.path().join("b.txt"), "yx\n").unwrap();
    fs::write(dir.path().join("c.txt"), "xx\n").unwrap();
    let files = SplitFiles {
        train: "a.txt".into(),
        valid: "b.txt".into(),
        test: "c.txt".into(),
    };
    let c = load_corpus_with(dir.path(), &files, Level::Char, None).unwrap();
    assert_eq!(c.vocab.len(), 4);
    assert_eq!(c.test.len(), 3);
}

#[test]
fn vocab_serializes_and_round_trips() {
    let v = Vocab::build("b a a\nc\n", Level::Word, None).unwrap();
    let json = serde_json::to_string(&v).unwrap();
    let back: Vocab = serde_json::from_str(&json).unwrap();
    assert_eq!(v, back);
}

fn ptb_dir() -> Option<PathBuf> {
    std::env::var_os("LTMLAB_PTB_DIR").map(PathBuf::from)
}

/// Runs only when `LTMLAB_PTB_DIR` points at the Mikolov PTB files.
#[test]
fn penn_treebank_word_statistics() {
    let Some(dir) = ptb_dir() else {
        eprintln!("LTMLAB_PTB_DIR not set; skipping");
        return;
    };
    let files = SplitFiles {
        train: "ptb.train.txt".into(),
        valid: "ptb.valid.txt".into(),
        test: "ptb.test.txt".into(),
    };
    let c = load_corpus_with(&dir, &files, Level::Word, Some(10_000)).unwrap();
    assert_eq!(c.vocab.len(), 10_000);
    assert_eq!(c.train.len(), 929_589);
    assert_eq!(c.valid.len(), 73_760);
    assert_eq!(c.test.len(), 82_430);
}
