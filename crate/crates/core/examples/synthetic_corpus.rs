//! Generate labeled synthetic forms and write them as OCR JSON plus PGM pages.
//!
//! `cargo run --example synthetic_corpus -- [out_dir] [n_docs]`

use std::path::PathBuf;

use docformer::docdata::{generate_synthetic_corpus, Corpus, Label, Split, SynthConfig};
use docformer::tensor::Rng;

fn main() -> docformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/example-corpus".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);

    let corpus = generate_synthetic_corpus(&Rng::new(42), n, &SynthConfig::default())?;
    corpus.write_to_dir(&dir)?;
    println!("wrote {} documents to {}", corpus.len(), dir.display());
    println!("train {} / test {}", corpus.split(Split::Train).len(), corpus.split(Split::Test).len());

    let mut counts = [0usize; Label::COUNT];
    for doc in corpus.docs() {
        for w in &doc.words {
            counts[w.label.unwrap_or(0)] += 1;
        }
    }
    for label in Label::ALL {
        println!("{:>9}: {} words", label.name(), counts[label.id()]);
    }

    let doc = corpus.docs().next().expect("at least one document");
    println!("\nfirst document {} ({}x{} page, class {:?}):", doc.id, doc.image.width, doc.image.height, doc.doc_class);
    for w in doc.words.iter().take(8) {
        let label = w.label.and_then(Label::from_id).map_or("-", Label::name);
        println!("  {:<12} at ({:>3},{:>3}) {label}", w.text, w.x1(), w.y1());
    }

    // The directory reads back to the same corpus.
    let again = Corpus::read_from_dir(&dir)?;
    assert_eq!(again, corpus);
    Ok(())
}
