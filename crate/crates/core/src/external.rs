//! PNG-in/PNG-out external commands (editor adapters, purifier hooks).

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::image::{read_image, write_png, ImageTensor};

static COUNTER: AtomicU64 = AtomicU64::new(0);

fn scratch_path(tag: &str) -> PathBuf {
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("facelock-{}-{n}-{tag}.png", std::process::id()))
}

/// Single-quotes `s` for `sh`.
pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Runs `template` through `sh -c` after substituting `{input}`, `{output}` and
/// every `(key, value)` pair (values are shell-quoted). The output PNG is
/// resized back to the input's size.
pub fn run_png_command(
    template: &str,
    img: &ImageTensor,
    vars: &[(&str, String)],
) -> Result<ImageTensor> {
    let input = scratch_path("in");
    let output = scratch_path("out");
    write_png(&input, img)?;
    let mut cmd = template
        .replace("{input}", &shell_quote(&input.to_string_lossy()))
        .replace("{output}", &shell_quote(&output.to_string_lossy()));
    for (k, v) in vars {
        cmd = cmd.replace(&format!("{{{k}}}"), &shell_quote(v));
    }
    let status = Command::new("sh").arg("-c").arg(&cmd).status();
    let _ = std::fs::remove_file(&input);
    let status = status?;
    if !status.success() {
        let _ = std::fs::remove_file(&output);
        return Err(Error::Io(std::io::Error::other(format!(
            "external command exited with {status}"
        ))));
    }
    let result = read_image(&output);
    let _ = std::fs::remove_file(&output);
    Ok(result?.resized(img.height(), img.width()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoting_survives_single_quotes() {
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
    }

    #[cfg(unix)]
    #[test]
    fn copy_command_round_trips_through_png() {
        let img = crate::synthetic::portrait(8, 8, 0);
        let out = run_png_command("cp {input} {output}", &img, &[]).unwrap();
        assert_eq!(out, img.quantized());
    }

    #[cfg(unix)]
    #[test]
    fn failing_command_is_an_error() {
        let img = crate::synthetic::portrait(8, 8, 0);
        assert!(run_png_command("exit 3", &img, &[]).is_err());
    }
}
