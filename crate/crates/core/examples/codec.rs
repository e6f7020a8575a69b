//! Converts between grid labels, textual records and student IDs.

use idgrid::label::{GridLabel, StudentId, TextualRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let id: StudentId = "2024031587".parse()?;
    let mut label = GridLabel::from_student_id(&id);
    println!("{id} -> {} (cfmt {})", label.to_text(), label.is_cfmt());

    label.set(7, 2, true);
    label.clear_column(8);
    println!("edited -> {} (cfmt {})", label.to_text(), label.is_cfmt());
    match label.to_student_id() {
        Ok(id) => println!("id {id}"),
        Err(e) => println!("no id: {e}"),
    }

    let record: TextualRecord = "01[27]3X56789".parse()?;
    let parsed = record.to_label();
    println!("{record} has {} marks; round trip {}", parsed.count_ones(), parsed.to_text());
    for bad in ["0123", "01[72]3456789", "01234567a9"] {
        if let Err(e) = GridLabel::from_text(bad) {
            println!("{bad:?}: {e}");
        }
    }

    let cells = label.to_cells();
    for (digit, row) in cells.iter().enumerate() {
        let line: String = row.iter().map(|&c| if c == 1 { '#' } else { '.' }).collect();
        println!("{digit} {line}");
    }
    Ok(())
}
