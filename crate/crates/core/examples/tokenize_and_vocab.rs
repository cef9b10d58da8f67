//! Build a word-piece vocabulary from a corpus and inspect how one document
//! becomes a fixed-length token sequence.
//!
//! `cargo run --example tokenize_and_vocab`

use docformer::docdata::{generate_synthetic_corpus, Split, SynthConfig};
use docformer::features::{tokenize, Vocab, CONTINUATION, RESERVED};
use docformer::tensor::Rng;

fn main() -> docformer::Result<()> {
    let corpus = generate_synthetic_corpus(&Rng::new(5), 60, &SynthConfig::default())?;
    let full = Vocab::build(corpus.split(Split::Train), 1000)?;
    let capped = Vocab::build(corpus.split(Split::Train), 60)?;
    println!("uncapped vocabulary: {} entries; capped at 60: {}", full.len(), capped.len());
    println!("reserved: {RESERVED:?}, continuation marker `{CONTINUATION}`");

    // Unknown or rare words fall back to pieces, then to [UNK].
    for word in ["bill", "number", "zyzzyva"] {
        let ids = capped.tokenize_word(word);
        let pieces: Vec<&str> = ids.iter().map(|&i| capped.token(i).unwrap_or("?")).collect();
        println!("{word:>10} -> {pieces:?}");
    }

    let doc = corpus.split(Split::Test)[0];
    let tok = tokenize(&capped, doc, 24);
    println!("\n{}: {} words, {} word-piece positions out of {}", doc.id, doc.words.len(), tok.num_word_tokens(), tok.len());
    for k in 0..tok.len() {
        let word = tok.alignment[k].map(|w| doc.words[w].text.as_str()).unwrap_or("");
        println!("{k:>3} {:<12} mask={} word={word}", capped.token(tok.ids[k]).unwrap_or("?"), tok.mask[k]);
    }

    // Round trip through the on-disk format.
    let text = capped.to_file_string();
    assert_eq!(Vocab::from_file_string(&text)?, capped);
    Ok(())
}
