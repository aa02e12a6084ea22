//! Converts a directory of YOLO-format label files into a dataset file,
//! dropping a class and remapping the rest.
//!
//! ```bash
//! cargo run --release --example ingest_yolo
//! ```

use scopenav::data::{ingest_yolo_labels, write_dataset, ClassMap};

fn main() -> scopenav::Result<()> {
    // Fake detector output: 4 classes, class 3 is an instrument we drop.
    let dir = std::env::temp_dir().join("scopenav_example_yolo");
    std::fs::create_dir_all(&dir)?;
    let frames = [
        "0 0.42 0.55 0.20 0.18 0.91\n3 0.5 0.5 0.4 0.6 0.88\n",
        "0 0.44 0.54 0.21 0.19 0.93\n1 0.70 0.40 0.10 0.12 0.52\n",
        // Duplicate class 1: the higher-confidence line wins.
        "1 0.71 0.41 0.11 0.12 0.77\n1 0.2 0.2 0.1 0.1 0.30\n",
        "",
    ];
    for (i, text) in frames.iter().enumerate() {
        std::fs::write(dir.join(format!("{i:06}.txt")), text)?;
    }

    let map = ClassMap::new(4, [3])?;
    let records = ingest_yolo_labels(&dir, &map, 1)?;
    println!("ingested {} frames, {} classes kept", records.len(), map.n_kept());
    for r in &records {
        let present: Vec<usize> = r
            .detections
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.presence == 1.0)
            .map(|(i, _)| i)
            .collect();
        println!("  frame {}: present classes {:?}", r.frame_index, present);
    }

    let out = std::env::temp_dir().join("scopenav_example_ingested.tsv");
    write_dataset(&records, &out)?;
    println!("dataset written to {}", out.display());
    Ok(())
}
