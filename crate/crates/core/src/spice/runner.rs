//! Running an external simulator as a batch subprocess.

use std::fs;
use std::io;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use thiserror::Error;

pub const DEFAULT_CONVERGENCE_MARKERS: [&str; 2] = ["Gmin stepping failed", "no convergence"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulator not found: {0}")]
    SimulatorNotFound(PathBuf),
    #[error("simulator failed: {0}")]
    SimulatorError(String),
    #[error("simulator exceeded {0:?}")]
    Timeout(Duration),
    #[error("simulator reported a convergence failure: {0}")]
    ConvergenceFailure(String),
    #[error("i/o error in simulator workdir: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct SimJob {
    pub simulator_path: PathBuf,
    pub timeout: Duration,
    pub workdir: PathBuf,
    /// Substrings of the simulator's console output that signal a
    /// convergence failure.
    pub convergence_markers: Vec<String>,
}

impl SimJob {
    pub fn new(simulator_path: impl Into<PathBuf>, workdir: impl Into<PathBuf>) -> Self {
        SimJob {
            simulator_path: simulator_path.into(),
            timeout: Duration::from_secs(60),
            workdir: workdir.into(),
            convergence_markers: DEFAULT_CONVERGENCE_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn excerpt(text: &str) -> String {
    const KEEP: usize = 2000;
    let t = text.trim();
    if t.len() <= KEEP {
        return t.to_string();
    }
    let mut cut = t.len() - KEEP;
    while !t.is_char_boundary(cut) {
        cut += 1;
    }
    format!("...{}", &t[cut..])
}

fn kill_group(pid: u32) {
    // SAFETY: plain syscall on a process group id we created.
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

/// Writes `netlist` to `workdir/in.cir`, runs `<sim> -b -r out.raw in.cir`
/// with ASCII raw output requested, and returns the raw file text.
///
/// The simulator runs in its own process group, which is killed as a whole
/// on timeout.
pub fn run_simulation(netlist: &str, job: &SimJob) -> Result<String, SimError> {
    fs::create_dir_all(&job.workdir)?;
    let input = job.workdir.join("in.cir");
    let raw = job.workdir.join("out.raw");
    let stdout_path = job.workdir.join("stdout.log");
    let stderr_path = job.workdir.join("stderr.log");
    fs::write(&input, netlist)?;
    let _ = fs::remove_file(&raw);

    let mut child = match Command::new(&job.simulator_path)
        .arg("-b")
        .arg("-r")
        .arg(&raw)
        .arg(&input)
        .current_dir(&job.workdir)
        .env("SPICE_ASCIIRAWFILE", "1")
        .stdin(Stdio::null())
        .stdout(fs::File::create(&stdout_path)?)
        .stderr(fs::File::create(&stderr_path)?)
        .process_group(0)
        .spawn()
    {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied) => {
            return Err(SimError::SimulatorNotFound(job.simulator_path.clone()))
        }
        Err(e) => return Err(e.into()),
    };

    let started = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if started.elapsed() >= job.timeout {
            kill_group(child.id());
            let _ = child.wait();
            return Err(SimError::Timeout(job.timeout));
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    // Stray grandchildren must not outlive a finished run either.
    kill_group(child.id());

    let stdout = read_lossy(&stdout_path);
    let stderr = read_lossy(&stderr_path);
    for marker in &job.convergence_markers {
        if stderr.contains(marker.as_str()) || stdout.contains(marker.as_str()) {
            return Err(SimError::ConvergenceFailure(marker.clone()));
        }
    }
    if !status.success() {
        let msg = if stderr.trim().is_empty() { &stdout } else { &stderr };
        return Err(SimError::SimulatorError(format!("{status}: {}", excerpt(msg))));
    }
    fs::read_to_string(&raw).map_err(|e| {
        SimError::SimulatorError(format!("no raw output at {}: {e}", raw.display()))
    })
}

fn read_lossy(p: &Path) -> String {
    fs::read(p)
        .map(|b| String::from_utf8_lossy(&b).into_owned())
        .unwrap_or_default()
}
