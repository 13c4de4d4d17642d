//! Sequential data entry of one person's ratings.

use psci_core::domain::{validate_rating, AssessorKind};
use psci_core::ingestion::load_manifest;
use psci_core::runner::{append_rating_rows, load_ratings_csv, write_ratings_csv, RatingRow};

use crate::{CliError, CollectArgs, Io, EXIT_OK};

enum Entry {
    Rating(i64),
    Skip,
    Quit,
    Invalid(String),
}

fn read_entry(io: &mut Io<'_>) -> Result<Entry, CliError> {
    let mut line = String::new();
    let n = io
        .input
        .read_line(&mut line)
        .map_err(|e| CliError::Data(e.to_string()))?;
    if n == 0 {
        return Ok(Entry::Quit);
    }
    let text = line.trim();
    Ok(match text {
        "" => Entry::Skip,
        "q" | "Q" => Entry::Quit,
        _ => match text.parse::<i64>() {
            Ok(v) => Entry::Rating(v),
            Err(_) => Entry::Invalid(text.to_string()),
        },
    })
}

fn say(io: &mut Io<'_>, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    io.out
        .write_fmt(text)
        .and_then(|_| io.out.flush())
        .map_err(|e| CliError::Data(format!("write failed: {e}")))
}

/// Walks the manifest in order, saving each accepted rating immediately so an
/// abort keeps everything entered so far.
pub fn collect_ratings(args: &CollectArgs, io: &mut Io<'_>) -> Result<i32, CliError> {
    let manifest = load_manifest(&args.manifest).map_err(|e| CliError::Data(e.to_string()))?;
    let kind = AssessorKind::parse_human(&args.kind)
        .filter(AssessorKind::is_human)
        .ok_or_else(|| CliError::Usage(format!("--kind must be expert, intermediate or novice, got '{}'", args.kind)))?;
    let out = args
        .out
        .clone()
        .or_else(|| manifest.reference_ratings_path())
        .ok_or_else(|| CliError::Usage("no --out given and the manifest names no reference_ratings".into()))?;

    let mut rows = if out.exists() && std::fs::metadata(&out).map(|m| m.len() > 0).unwrap_or(false) {
        load_ratings_csv(&out).map_err(|e| CliError::Data(e.to_string()))?
    } else {
        Vec::new()
    };

    let total = manifest.images.len();
    let mut saved = 0usize;
    'images: for (i, rec) in manifest.images.iter().enumerate() {
        let location = rec
            .local_path()
            .map(|p| manifest.resolve(p).display().to_string())
            .unwrap_or_else(|| "(not fetched)".into());
        say(io, format_args!("[{}/{}] {}  {}\n", i + 1, total, rec.image_id, location))?;
        loop {
            say(io, format_args!("rating 1-10 (blank skips, q quits): "))?;
            let value = match read_entry(io)? {
                Entry::Quit => break 'images,
                Entry::Skip => continue 'images,
                Entry::Invalid(text) => {
                    say(io, format_args!("'{text}' is not a whole number\n"))?;
                    continue;
                }
                Entry::Rating(v) => v,
            };
            let rating = match validate_rating(value) {
                Ok(r) => r,
                Err(e) => {
                    say(io, format_args!("{e}\n"))?;
                    continue;
                }
            };
            let row = RatingRow {
                image_id: rec.image_id.clone(),
                assessor_id: args.assessor.clone(),
                kind: kind.clone(),
                rating,
            };
            let existing = rows
                .iter()
                .position(|r| r.image_id == row.image_id && r.assessor_id == row.assessor_id);
            match existing {
                Some(pos) => {
                    say(
                        io,
                        format_args!("already rated {} by {}; overwrite? [y/N] ", rows[pos].rating, args.assessor),
                    )?;
                    let mut answer = String::new();
                    io.input
                        .read_line(&mut answer)
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    if matches!(answer.trim(), "y" | "Y" | "yes") {
                        rows[pos] = row;
                        write_ratings_csv(&out, &rows).map_err(|e| CliError::Data(e.to_string()))?;
                        saved += 1;
                    }
                }
                None => {
                    append_rating_rows(&out, std::slice::from_ref(&row))
                        .map_err(|e| CliError::Data(e.to_string()))?;
                    rows.push(row);
                    saved += 1;
                }
            }
            continue 'images;
        }
    }
    say(io, format_args!("{saved} rating(s) saved to {}\n", out.display()))?;
    Ok(EXIT_OK)
}
