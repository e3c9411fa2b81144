//! Subprocess helpers shared by the build, test, and disassembly steps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

/// How a shell command finished.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Code(i32),
    Signal(i32),
    TimedOut,
}

impl Exit {
    pub fn success(self) -> bool {
        self == Exit::Code(0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Finished {
    pub exit: Exit,
    pub wall: Duration,
}

/// Runs `script` through `sh -c` in `cwd` with `env` layered over the
/// inherited environment. The child gets its own process group so a timeout
/// kills everything it spawned.
pub fn run_shell(
    script: &str,
    cwd: &Path,
    env: &BTreeMap<String, String>,
    stdout: File,
    stderr: File,
    timeout: Option<Duration>,
) -> io::Result<Finished> {
    let start = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(script)
        .current_dir(cwd)
        .envs(env)
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr)
        .process_group(0)
        .spawn()?;

    let status = match timeout {
        Some(limit) => match child.wait_timeout(limit)? {
            Some(status) => status,
            None => {
                // SAFETY: plain kill(2) on the child's process group.
                unsafe {
                    libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
                }
                let _ = child.wait();
                return Ok(Finished { exit: Exit::TimedOut, wall: start.elapsed() });
            }
        },
        None => child.wait()?,
    };

    let exit = match status.code() {
        Some(code) => Exit::Code(code),
        None => Exit::Signal(status.signal().unwrap_or(-1)),
    };
    Ok(Finished { exit, wall: start.elapsed() })
}

/// Runs a command with stdout and stderr interleaved into one log file.
pub fn run_logged(
    script: &str,
    cwd: &Path,
    env: &BTreeMap<String, String>,
    log_path: &Path,
    timeout: Option<Duration>,
) -> io::Result<Finished> {
    let log = File::create(log_path)?;
    let err = log.try_clone()?;
    run_shell(script, cwd, env, log, err, timeout)
}

/// Single-quotes `s` for safe interpolation into a `sh -c` script.
pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}
