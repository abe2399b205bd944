//! Adapter for external point-cloud codecs driven by shell commands.
//!
//! A codec is a pair of commands with `{in}`, `{bin}`, `{out}` placeholders:
//! the encode command reads the PLY at `{in}` and writes a compressed file
//! to `{bin}`; the decode command reads `{bin}` and writes a PLY to `{out}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::cloud::Voxel;
use crate::error::{Error, Result};
use crate::ply;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCodec {
    pub encode_cmd: String,
    pub decode_cmd: String,
}

impl ExternalCodec {
    /// Parse the CLI template form `"<encode cmd>;<decode cmd>"`.
    pub fn from_template(template: &str) -> Result<ExternalCodec> {
        let (enc, dec) = template.split_once(';').ok_or(Error::BadCodecTemplate {
            placeholder: "; separating encode and decode commands",
        })?;
        let codec = ExternalCodec {
            encode_cmd: enc.trim().to_string(),
            decode_cmd: dec.trim().to_string(),
        };
        codec.validate()?;
        Ok(codec)
    }

    pub fn validate(&self) -> Result<()> {
        for (cmd, placeholder) in [
            (&self.encode_cmd, "{in}"),
            (&self.encode_cmd, "{bin}"),
            (&self.decode_cmd, "{bin}"),
            (&self.decode_cmd, "{out}"),
        ] {
            if !cmd.contains(placeholder) {
                return Err(Error::BadCodecTemplate {
                    placeholder: match placeholder {
                        "{in}" => "{in}",
                        "{bin}" => "{bin}",
                        _ => "{out}",
                    },
                });
            }
        }
        Ok(())
    }

    /// Run only the decode half on an existing compressed stream.
    pub fn decode_stream(&self, bin: &Path, out: &Path) -> Result<Vec<Voxel>> {
        let decode = self
            .decode_cmd
            .replace("{bin}", &shell_quote(bin))
            .replace("{out}", &shell_quote(out));
        run_command(&decode)?;
        let decoded = fs::File::open(out).map_err(|_| Error::ExternalOutputMissing {
            command: decode,
            path: out.to_path_buf(),
        })?;
        ply::read_ply(decoded)
    }

    /// Run encode then decode on one PLY file inside `workdir`.
    /// Returns the decoded points and the compressed size in bytes.
    pub fn run(&self, input_ply: &Path, workdir: &Path) -> Result<(Vec<Voxel>, u64)> {
        let bin_path = workdir.join("stream.bin");
        let out_path = workdir.join("decoded.ply");

        let encode = substitute(&self.encode_cmd, input_ply, &bin_path, &out_path);
        run_command(&encode)?;
        let bin_size = fs::metadata(&bin_path)
            .map_err(|_| Error::ExternalOutputMissing {
                command: encode.clone(),
                path: bin_path.clone(),
            })?
            .len();

        let decode = substitute(&self.decode_cmd, input_ply, &bin_path, &out_path);
        run_command(&decode)?;
        let decoded = fs::File::open(&out_path).map_err(|_| Error::ExternalOutputMissing {
            command: decode.clone(),
            path: out_path.clone(),
        })?;
        let points = ply::read_ply(decoded)?;
        Ok((points, bin_size))
    }
}

fn substitute(template: &str, input: &Path, bin: &Path, out: &Path) -> String {
    template
        .replace("{in}", &shell_quote(input))
        .replace("{bin}", &shell_quote(bin))
        .replace("{out}", &shell_quote(out))
}

fn shell_quote(path: &Path) -> String {
    let s = path.display().to_string();
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn run_command(command: &str) -> Result<()> {
    let output = Command::new("sh")
        .arg("-c")
        .arg(command)
        .output()
        .map_err(|e| Error::io(PathBuf::from("sh"), e))?;
    if !output.status.success() {
        return Err(Error::ExternalCommandFailed {
            command: command.to_string(),
            status: output.status.code().unwrap_or(-1),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::EventPointCloud;
    use crate::event::Polarity;

    fn identity_codec() -> ExternalCodec {
        ExternalCodec {
            encode_cmd: "cp {in} {bin}".into(),
            decode_cmd: "cp {bin} {out}".into(),
        }
    }

    #[test]
    fn template_parsing_and_validation() {
        let c = ExternalCodec::from_template("enc {in} {bin}; dec {bin} {out}").unwrap();
        assert_eq!(c.encode_cmd, "enc {in} {bin}");
        assert!(ExternalCodec::from_template("only one command {in} {bin} {out}").is_err());
        assert!(ExternalCodec::from_template("enc {in}; dec {bin} {out}").is_err());
    }

    #[test]
    fn identity_codec_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = EventPointCloud::from_points(
            Polarity::Pos,
            vec![Voxel::new(1, 2, 3), Voxel::new(4, 5, 6)],
        );
        let input = dir.path().join("input.ply");
        fs::write(&input, ply::cloud_to_ply(&cloud)).unwrap();

        let (points, size) = identity_codec().run(&input, dir.path()).unwrap();
        assert_eq!(points, cloud.points());
        assert_eq!(size, fs::metadata(&input).unwrap().len());
    }

    #[test]
    fn failing_command_reports_the_command_line() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.ply");
        fs::write(
            &input,
            b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n",
        )
        .unwrap();
        let codec = ExternalCodec {
            encode_cmd: "false # {in} {bin}".into(),
            decode_cmd: "cp {bin} {out}".into(),
        };
        let err = codec.run(&input, dir.path()).unwrap_err();
        match err {
            Error::ExternalCommandFailed { command, .. } => assert!(command.contains("false")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_bin_output_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.ply");
        fs::write(
            &input,
            b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n",
        )
        .unwrap();
        let codec = ExternalCodec {
            encode_cmd: "true # {in} {bin}".into(),
            decode_cmd: "cp {bin} {out}".into(),
        };
        assert!(matches!(
            codec.run(&input, dir.path()),
            Err(Error::ExternalOutputMissing { .. })
        ));
    }

    #[test]
    fn truncating_codec_loses_points() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = EventPointCloud::from_points(
            Polarity::Pos,
            vec![
                Voxel::new(0, 0, 0),
                Voxel::new(1, 1, 1),
                Voxel::new(2, 2, 2),
            ],
        );
        let input = dir.path().join("input.ply");
        fs::write(&input, ply::cloud_to_ply(&cloud)).unwrap();
        // Keeps the header and first vertex row only.
        let codec = ExternalCodec {
            encode_cmd: "cp {in} {bin}".into(),
            decode_cmd: "head -n 8 {bin} | sed 's/element vertex 3/element vertex 1/' > {out}"
                .into(),
        };
        let (points, _) = codec.run(&input, dir.path()).unwrap();
        assert_eq!(points.len(), 1);
        assert!(points.len() < cloud.len());
    }
}
