use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::process::Command;
use tokio::sync::Semaphore;

use crate::crawl::DocExtension;

/// What a converter writes to `{output}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Markdown,
    PlainText,
    /// A PDF that is then handed to the `pdf` converter.
    PdfIntermediate,
}

/// One external conversion command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConverterSpec {
    pub format: DocExtension,
    /// Run through `sh -c` with `{input}` and `{output}` replaced by quoted
    /// paths.
    pub command_template: String,
    pub timeout: Duration,
    pub output_kind: OutputKind,
}

impl ConverterSpec {
    pub fn new(
        format: DocExtension,
        command_template: impl Into<String>,
        timeout: Duration,
        output_kind: OutputKind,
    ) -> Result<Self, ConvertError> {
        let command_template = command_template.into();
        if !command_template.contains("{input}") || !command_template.contains("{output}") {
            return Err(ConvertError::InvalidSpec(format!(
                "template for {format} must contain {{input}} and {{output}}"
            )));
        }
        if timeout.is_zero() {
            return Err(ConvertError::InvalidSpec(format!("timeout for {format} must be positive")));
        }
        if format == DocExtension::Pdf && output_kind == OutputKind::PdfIntermediate {
            return Err(ConvertError::InvalidSpec("pdf converter cannot emit pdf".into()));
        }
        Ok(ConverterSpec {
            format,
            command_template,
            timeout,
            output_kind,
        })
    }

    /// Program name used as the `extraction_tool` identifier.
    pub fn tool_name(&self) -> String {
        let first = self.command_template.split_whitespace().next().unwrap_or("converter");
        Path::new(first)
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| first.to_string())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConvertError {
    #[error("invalid converter spec: {0}")]
    InvalidSpec(String),
    #[error("no converter configured for {0}")]
    NoConverter(DocExtension),
    #[error("converter for {format} timed out after {timeout:?}")]
    ConverterTimeout { format: DocExtension, timeout: Duration },
    #[error("converter for {format} exited with {code:?}: {stderr}")]
    ConverterNonZeroExit {
        format: DocExtension,
        code: Option<i32>,
        stderr: String,
    },
    #[error("converter for {0} produced no output file")]
    MissingOutput(DocExtension),
    #[error("converter I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub text: String,
    /// Tools in the order they ran, joined with `+`.
    pub tool: String,
    pub warnings: Vec<String>,
}

/// The configured converters plus a cap on concurrent processes.
#[derive(Debug, Clone)]
pub struct Converters {
    specs: BTreeMap<DocExtension, ConverterSpec>,
    workdir: PathBuf,
    permits: Arc<Semaphore>,
}

pub const DEFAULT_CONVERTER_PROCESSES: usize = 2;

impl Converters {
    pub fn new(specs: impl IntoIterator<Item = ConverterSpec>, workdir: impl Into<PathBuf>) -> Self {
        Converters {
            specs: specs.into_iter().map(|s| (s.format, s)).collect(),
            workdir: workdir.into(),
            permits: Arc::new(Semaphore::new(DEFAULT_CONVERTER_PROCESSES)),
        }
    }

    pub fn with_max_processes(mut self, n: usize) -> Self {
        self.permits = Arc::new(Semaphore::new(n.max(1)));
        self
    }

    pub fn get(&self, format: DocExtension) -> Option<&ConverterSpec> {
        self.specs.get(&format)
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }
}

/// Converts `bytes` of the given format to text, chaining through the pdf
/// converter when the format's converter emits a PDF.
pub async fn convert_external(
    bytes: &[u8],
    format: DocExtension,
    converters: &Converters,
) -> Result<Conversion, ConvertError> {
    let spec = converters.get(format).ok_or(ConvertError::NoConverter(format))?;
    let mut warnings = Vec::new();
    let first = run_stage(bytes, spec, &converters.workdir, &converters.permits, &mut warnings).await?;
    if spec.output_kind != OutputKind::PdfIntermediate {
        return Ok(Conversion {
            text: decode_output(first, &mut warnings),
            tool: spec.tool_name(),
            warnings,
        });
    }
    let pdf = converters
        .get(DocExtension::Pdf)
        .ok_or(ConvertError::NoConverter(DocExtension::Pdf))?;
    let second = run_stage(&first, pdf, &converters.workdir, &converters.permits, &mut warnings).await?;
    Ok(Conversion {
        text: decode_output(second, &mut warnings),
        tool: format!("{}+{}", spec.tool_name(), pdf.tool_name()),
        warnings,
    })
}

fn decode_output(bytes: Vec<u8>, warnings: &mut Vec<String>) -> String {
    match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => {
            warnings.push("converter output was not valid UTF-8; decoded lossily".into());
            String::from_utf8_lossy(e.as_bytes()).into_owned()
        }
    }
}

fn shell_quote(path: &Path) -> String {
    format!("'{}'", path.to_string_lossy().replace('\'', r"'\''"))
}

fn output_extension(kind: OutputKind) -> &'static str {
    match kind {
        OutputKind::Markdown => "md",
        OutputKind::PlainText => "txt",
        OutputKind::PdfIntermediate => "pdf",
    }
}

/// Runs one converter in its own temp directory, which is removed however
/// the run ends.
async fn run_stage(
    bytes: &[u8],
    spec: &ConverterSpec,
    workdir: &Path,
    permits: &Semaphore,
    warnings: &mut Vec<String>,
) -> Result<Vec<u8>, ConvertError> {
    let _permit = permits.acquire().await.expect("semaphore never closed");
    tokio::fs::create_dir_all(workdir).await?;
    let tmp = tempfile::Builder::new().prefix("convert-").tempdir_in(workdir)?;
    let input = tmp.path().join(format!("input.{}", spec.format));
    let output = tmp
        .path()
        .join(format!("output.{}", output_extension(spec.output_kind)));
    tokio::fs::write(&input, bytes).await?;

    let command = spec
        .command_template
        .replace("{input}", &shell_quote(&input))
        .replace("{output}", &shell_quote(&output));
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&command)
        .current_dir(tmp.path())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true);
    #[cfg(unix)]
    cmd.process_group(0);
    let child = cmd.spawn()?;
    let pid = child.id();

    let out = match tokio::time::timeout(spec.timeout, child.wait_with_output()).await {
        Ok(out) => out?,
        Err(_) => {
            #[cfg(unix)]
            if let Some(pid) = pid {
                // The shell may have forked helpers; take the whole group down.
                unsafe {
                    libc::kill(-(pid as i32), libc::SIGKILL);
                }
            }
            return Err(ConvertError::ConverterTimeout {
                format: spec.format,
                timeout: spec.timeout,
            });
        }
    };
    let stderr = String::from_utf8_lossy(&out.stderr).trim().to_string();
    if !out.status.success() {
        return Err(ConvertError::ConverterNonZeroExit {
            format: spec.format,
            code: out.status.code(),
            stderr,
        });
    }
    if !stderr.is_empty() {
        warnings.push(format!("{}: {}", spec.tool_name(), stderr));
    }
    match tokio::fs::read(&output).await {
        Ok(data) => Ok(data),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ConvertError::MissingOutput(spec.format))
        }
        Err(e) => Err(e.into()),
    }
}
