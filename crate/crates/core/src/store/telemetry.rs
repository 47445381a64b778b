//! Process-level facts the store reports about itself.

/// Established TCP connections owned by this process whose local port is not
/// `listen_port`, i.e. connections this process initiated. `None` where
/// `/proc` is unavailable.
pub fn outbound_connections(listen_port: u16) -> Option<usize> {
    let inodes = socket_inodes()?;
    let mut count = 0;
    for table in ["/proc/net/tcp", "/proc/net/tcp6"] {
        let Ok(text) = std::fs::read_to_string(table) else {
            continue;
        };
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() < 10 || cols[3] != "01" {
                continue;
            }
            let Ok(inode) = cols[9].parse::<u64>() else {
                continue;
            };
            let local_port = cols[1]
                .rsplit(':')
                .next()
                .and_then(|p| u16::from_str_radix(p, 16).ok());
            if inodes.contains(&inode) && local_port != Some(listen_port) {
                count += 1;
            }
        }
    }
    Some(count)
}

fn socket_inodes() -> Option<Vec<u64>> {
    let dir = std::fs::read_dir("/proc/self/fd").ok()?;
    Some(
        dir.filter_map(|e| e.ok())
            .filter_map(|e| std::fs::read_link(e.path()).ok())
            .filter_map(|p| {
                let s = p.to_string_lossy().into_owned();
                s.strip_prefix("socket:[")?.strip_suffix(']')?.parse().ok()
            })
            .collect(),
    )
}

/// Pins the calling thread (and threads it spawns later) to `cpus`, keeping
/// only CPUs that exist. Returns the CPUs actually applied; empty when the
/// platform does not support affinity or none of the CPUs exist.
#[cfg(target_os = "linux")]
pub fn apply_cpu_affinity(cpus: &[usize]) -> Vec<usize> {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    // SAFETY: cpu_set_t is plain data; CPU_ZERO/CPU_SET only write inside it.
    unsafe {
        let mut current: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut current) != 0 {
            return Vec::new();
        }
        let usable: Vec<usize> = cpus
            .iter()
            .copied()
            .filter(|&c| c < libc::CPU_SETSIZE as usize && libc::CPU_ISSET(c, &current))
            .collect();
        if usable.is_empty() {
            let _ = available;
            return Vec::new();
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_ZERO(&mut set);
        for &c in &usable {
            libc::CPU_SET(c, &mut set);
        }
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
            return Vec::new();
        }
        usable
    }
}

#[cfg(not(target_os = "linux"))]
pub fn apply_cpu_affinity(_cpus: &[usize]) -> Vec<usize> {
    Vec::new()
}

/// Parses `0,2,4-7` style CPU lists.
pub fn parse_cpu_list(s: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| format!("bad cpu range {part:?}"))?;
                let b: usize = b.trim().parse().map_err(|_| format!("bad cpu range {part:?}"))?;
                if a > b {
                    return Err(format!("bad cpu range {part:?}"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad cpu {part:?}"))?),
        }
    }
    Ok(out)
}
