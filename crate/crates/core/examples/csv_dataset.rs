//! Round-trip a dataset through CSV, then load it with a fixed split column.

use todlab::data::{gen_two_moons, load_csv, write_csv, CsvOptions, SplitSource};

fn main() -> todlab::Result<()> {
    let dir = std::env::temp_dir().join("todlab-csv-example");
    std::fs::create_dir_all(&dir).map_err(|e| todlab::Error::Runtime(e.to_string()))?;
    let path = dir.join("moons.csv");

    let ds = gen_two_moons(200, 0.1, 0.25, 3)?;
    write_csv(&ds, &path)?;
    println!("wrote {} rows to {}", ds.len(), path.display());

    let back = load_csv(
        &path,
        &CsvOptions {
            label_column: "label".into(),
            split: SplitSource::Column("split".into()),
            normalize: true,
            seed: 0,
        },
    )?;
    println!(
        "loaded {} samples, {} features, {} classes, {} train / {} test",
        back.len(),
        back.dim(),
        back.n_classes,
        back.train_indices().len(),
        back.test_indices().len()
    );
    println!("metadata {}", back.metadata_json());
    Ok(())
}
