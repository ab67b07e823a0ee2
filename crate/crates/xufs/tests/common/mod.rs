//! Shared harness: an in-process server plus mounts over the simulated
//! network, each test in its own temp tree.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempfile::TempDir;

use xufs::config::Knobs;
use xufs::net::{LinkProfile, SimNet, Transport};
use xufs::server::{Server, ServerConfig, ServerHandle};
use xufs::vfs::{Mount, MountConfig, MountOptions};
use xufs::wire::auth::AuthCredential;

pub const KEY: &str = "k1";
pub const PHRASE: &[u8] = b"correct horse battery staple";
pub const SERVER_ADDR: &str = "server";

pub struct SimEnv {
    pub net: SimNet,
    pub server: Option<ServerHandle>,
    pub dir: TempDir,
    pub knobs: Knobs,
}

pub fn cred() -> AuthCredential {
    AuthCredential::long_lived(KEY, PHRASE.to_vec())
}

impl SimEnv {
    /// Starts a server over a fresh simulated network. The export root is
    /// `<dir>/export`; client caches go under `<dir>/cache-<id>`.
    pub async fn start(profile: LinkProfile, seed: u64) -> SimEnv {
        SimEnv::start_with_knobs(profile, seed, Knobs::default()).await
    }

    pub async fn start_with_knobs(profile: LinkProfile, seed: u64, knobs: Knobs) -> SimEnv {
        let dir = TempDir::new().expect("tempdir");
        std::fs::create_dir(dir.path().join("export")).unwrap();
        let mut env = SimEnv { net: SimNet::new(profile, seed), server: None, dir, knobs };
        env.start_server().await;
        env
    }

    pub fn export_root(&self) -> PathBuf {
        self.dir.path().join("export")
    }

    pub fn cache_root(&self, client_id: &str) -> PathBuf {
        self.dir.path().join(format!("cache-{client_id}"))
    }

    pub async fn start_server(&mut self) {
        let listener = Transport::Sim(self.net.clone())
            .listen(SERVER_ADDR)
            .await
            .expect("bind sim listener");
        let server = Server::new(ServerConfig {
            root: self.export_root(),
            export_id: "home".into(),
            credential: cred(),
            knobs: self.knobs.clone(),
            seed: self.net.seed(),
        })
        .expect("server");
        self.server = Some(server.spawn(listener));
    }

    pub async fn stop_server(&mut self) {
        if let Some(handle) = self.server.take() {
            handle.stop().await;
        }
    }

    /// Abrupt server death: no graceful persistence, connections die.
    pub fn kill_server(&mut self) {
        if let Some(handle) = self.server.take() {
            handle.kill();
        }
        // Existing sim connections to the server must observe loss.
        self.net.partition_host(SERVER_ADDR, true);
        self.net.partition_host(SERVER_ADDR, false);
    }

    pub fn mount_cfg(&self, client_id: &str, localized: Vec<String>) -> MountConfig {
        MountConfig {
            server_addr: SERVER_ADDR.into(),
            export_id: "home".into(),
            cache_root: self.cache_root(client_id),
            localized,
            client_id: client_id.into(),
            knobs: self.knobs.clone(),
        }
    }

    pub async fn mount(&self, client_id: &str) -> Mount {
        Mount::mount(Transport::Sim(self.net.clone()), self.mount_cfg(client_id, vec![]), cred())
            .await
            .expect("mount")
    }

    pub async fn mount_localized(&self, client_id: &str, localized: Vec<String>) -> Mount {
        Mount::mount(
            Transport::Sim(self.net.clone()),
            self.mount_cfg(client_id, localized),
            cred(),
        )
        .await
        .expect("mount")
    }

    pub async fn try_mount(&self, client_id: &str) -> xufs::Result<Mount> {
        Mount::mount(Transport::Sim(self.net.clone()), self.mount_cfg(client_id, vec![]), cred())
            .await
    }

    pub async fn mount_no_drain(&self, client_id: &str) -> xufs::Result<Mount> {
        Mount::mount_with(
            Transport::Sim(self.net.clone()),
            self.mount_cfg(client_id, vec![]),
            cred(),
            MountOptions { auto_drain: false },
        )
        .await
    }
}

/// Writes a file under a root, creating parents.
pub fn put_file(root: &Path, rel: &str, content: &[u8]) {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).unwrap();
    }
    std::fs::write(path, content).unwrap();
}

/// Polls (in virtual time) until the mount's queue is empty.
pub async fn wait_queue_empty(mount: &Mount) {
    for _ in 0..10_000 {
        if mount.queue_len() == 0 {
            return;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    panic!("queue never drained: {} ops left", mount.queue_len());
}

/// Deterministic pseudo-random content of a given size.
pub fn patterned(len: usize, seed: u8) -> Vec<u8> {
    (0..len).map(|i| (i as u64 * 31 + seed as u64 * 17 + (i >> 11) as u64) as u8).collect()
}
