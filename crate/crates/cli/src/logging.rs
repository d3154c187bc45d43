use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

pub const RUN_LOG: &str = "run.log";

/// Copies every log line to stderr and to `run.log`.
struct Tee(File);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stderr().write_all(buf)?;
        self.0.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stderr().flush()?;
        self.0.flush()
    }
}

/// Logs at `info` (or `RUST_LOG`) to stderr and `<out_dir>/run.log`.
pub fn init(out_dir: &Path) -> io::Result<()> {
    let mut builder =
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    builder.write_style(env_logger::WriteStyle::Never);
    let result = fs::create_dir_all(out_dir).and_then(|_| {
        File::options()
            .create(true)
            .append(true)
            .open(out_dir.join(RUN_LOG))
    });
    match result {
        Ok(file) => {
            builder.target(env_logger::Target::Pipe(Box::new(Tee(file))));
            builder.init();
            Ok(())
        }
        Err(e) => {
            builder.init();
            Err(e)
        }
    }
}
