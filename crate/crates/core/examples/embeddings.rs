// Writes an embedding matrix in the EMB1 format, reads it back and
// normalizes the rows.

use avalign::embedding::{
    l2_normalize_rows, read_embeddings, write_embeddings, EmbeddingMatrix, Modality,
};

pub fn run_example() -> avalign::Result<()> {
    let dir = std::env::temp_dir().join(format!("avalign-embeddings-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| avalign::Error::io(&dir, e))?;
    let path = dir.join("video.emb");

    let video = EmbeddingMatrix::new(Modality::Video, 2, 3, vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0])?;
    write_embeddings(&path, &video)?;
    let bytes = std::fs::metadata(&path).map_err(|e| avalign::Error::io(&path, e))?.len();
    let back = read_embeddings(&path)?;
    assert_eq!(back, video);
    println!("{} rows x {} dims, {} ({bytes} bytes on disk)", back.rows(), back.dim(), back.modality().as_str());

    // zero rows are left as they are and reported
    let (unit, zero_rows) = l2_normalize_rows(&back);
    println!("normalized row 0: {:?}, zero rows: {zero_rows:?}", unit.row(0));

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

#[allow(dead_code)]
fn main() -> avalign::Result<()> {
    run_example()
}
