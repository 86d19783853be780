//! Newline-delimited JSON control protocol for an artificial world.
//!
//! Each line carries one command object tagged by `op`; each reply is one
//! line `{"ok":bool,"id"?,"events":[...],"error"?}`. Snapshot replies add a
//! `frame` with the images either inline (base64 PPM/PGM) or as file paths.
//!
//! [`Endpoint`] answers commands against any [`WorldChannel`] in process;
//! on Unix, [`serve`] exposes it on a stream socket and [`SocketWorld`] is
//! the matching client.

use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::WorldError;
use crate::geometry::Pose6D;
use crate::render::{pnm, CameraIntrinsics, SensorFrame};
use crate::world::{AwId, PhysicsEvent, WorldChannel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    Spawn {
        label: String,
        pose: Pose6D,
    },
    SetPose {
        id: AwId,
        pose: Pose6D,
    },
    Delete {
        id: AwId,
    },
    Snapshot {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        camera: Option<Pose6D>,
    },
    DrainEvents,
}

/// How image payloads travel in snapshot replies.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Base64,
    /// Payload fields hold paths of files written by the server.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub intrinsics: CameraIntrinsics,
    pub camera: Pose6D,
    pub timestamp: u64,
    pub encoding: Encoding,
    /// P6 color image.
    pub rgb: String,
    /// 16-bit P5 depth in millimeters.
    pub depth: String,
    /// 16-bit P5 object ids.
    pub mask: String,
}

/// Machine-readable error class so clients can rebuild typed errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownLabel,
    UnknownId,
    BadRequest,
    Internal,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<AwId>,
    #[serde(default)]
    pub events: Vec<PhysicsEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<ErrorCode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<WireFrame>,
}

impl Reply {
    fn ok() -> Self {
        Self {
            ok: true,
            ..Self::default()
        }
    }

    fn failure(code: ErrorCode, message: String) -> Self {
        Self {
            ok: false,
            error: Some(message),
            code: Some(code),
            ..Self::default()
        }
    }

    fn from_world_error(e: &WorldError) -> Self {
        let code = match e {
            WorldError::UnknownLabel(_) => ErrorCode::UnknownLabel,
            WorldError::UnknownId(_) => ErrorCode::UnknownId,
            WorldError::Protocol(_) => ErrorCode::BadRequest,
            WorldError::Unreachable(_) => ErrorCode::Internal,
        };
        Self::failure(code, e.to_string())
    }

    /// The typed error carried by a failed reply.
    pub fn world_error(&self) -> WorldError {
        let msg = self.error.clone().unwrap_or_else(|| "request failed".into());
        match self.code {
            Some(ErrorCode::UnknownLabel) => {
                let label = msg.strip_prefix("unknown model label ").unwrap_or(&msg);
                WorldError::UnknownLabel(label.to_string())
            }
            Some(ErrorCode::UnknownId) => msg
                .strip_prefix("unknown object id ")
                .and_then(|s| s.parse().ok())
                .map(WorldError::UnknownId)
                .unwrap_or(WorldError::Protocol(msg)),
            _ => WorldError::Protocol(msg),
        }
    }
}

/// Serves protocol commands against a world, one at a time.
#[derive(Debug)]
pub struct Endpoint<W> {
    world: W,
    encoding: Encoding,
    /// Where file-mode snapshots are written.
    frame_dir: Option<PathBuf>,
    snapshots: u64,
}

impl<W: WorldChannel> Endpoint<W> {
    pub fn new(world: W) -> Self {
        Self {
            world,
            encoding: Encoding::Base64,
            frame_dir: None,
            snapshots: 0,
        }
    }

    /// Snapshot images are written under `dir` and replies carry their paths.
    pub fn with_frame_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.encoding = Encoding::File;
        self.frame_dir = Some(dir.into());
        self
    }

    pub fn world(&self) -> &W {
        &self.world
    }

    pub fn into_world(self) -> W {
        self.world
    }

    /// Answers one request line with one reply line (without the newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let reply = match serde_json::from_str::<Command>(line) {
            Ok(cmd) => self.handle(cmd),
            Err(e) => Reply::failure(ErrorCode::BadRequest, format!("malformed command: {e}")),
        };
        serde_json::to_string(&reply).expect("replies serialize")
    }

    pub fn handle(&mut self, cmd: Command) -> Reply {
        let result = match cmd {
            Command::Spawn { label, pose } => self.world.spawn(&label, &pose).map(|(id, events)| Reply {
                id: Some(id),
                events,
                ..Reply::ok()
            }),
            Command::SetPose { id, pose } => self.world.set_pose(id, &pose).map(|events| Reply {
                id: Some(id),
                events,
                ..Reply::ok()
            }),
            Command::Delete { id } => self.world.delete(id).map(|()| Reply {
                id: Some(id),
                ..Reply::ok()
            }),
            Command::DrainEvents => self.world.drain_events().map(|events| Reply { events, ..Reply::ok() }),
            Command::Snapshot { camera } => match self.world.snapshot(camera.as_ref()) {
                Ok(frame) => {
                    return match self.encode(&frame) {
                        Ok(wire) => Reply {
                            frame: Some(wire),
                            ..Reply::ok()
                        },
                        Err(e) => Reply::failure(ErrorCode::Internal, e),
                    }
                }
                Err(e) => Err(e),
            },
        };
        result.unwrap_or_else(|e| Reply::from_world_error(&e))
    }

    fn encode(&mut self, frame: &SensorFrame) -> Result<WireFrame, String> {
        let images = [pnm::rgb_ppm(frame), pnm::depth_pgm(frame), pnm::mask_pgm(frame)];
        let [rgb, depth, mask] = match (&self.encoding, &self.frame_dir) {
            (Encoding::File, Some(dir)) => {
                self.snapshots += 1;
                let n = self.snapshots;
                let mut paths = Vec::with_capacity(3);
                for (bytes, name) in images.iter().zip(["rgb.ppm", "depth.pgm", "mask.pgm"]) {
                    let path = dir.join(format!("snapshot_{n:06}_{name}"));
                    std::fs::write(&path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
                    paths.push(path.display().to_string());
                }
                let [a, b, c]: [String; 3] = paths.try_into().expect("three images");
                [a, b, c]
            }
            _ => images.map(|b| BASE64.encode(b)),
        };
        Ok(WireFrame {
            intrinsics: frame.intrinsics,
            camera: frame.camera,
            timestamp: frame.timestamp,
            encoding: self.encoding.clone(),
            rgb,
            depth,
            mask,
        })
    }
}

impl WireFrame {
    /// Rebuilds the frame. Depth comes back quantized to millimeters.
    pub fn decode(&self) -> Result<SensorFrame, WorldError> {
        let bytes = |field: &str| -> Result<Vec<u8>, WorldError> {
            match self.encoding {
                Encoding::Base64 => BASE64
                    .decode(field)
                    .map_err(|e| WorldError::Protocol(format!("bad base64 payload: {e}"))),
                Encoding::File => std::fs::read(Path::new(field))
                    .map_err(|e| WorldError::Protocol(format!("cannot read {field}: {e}"))),
            }
        };
        pnm::decode_frame(
            &bytes(&self.rgb)?,
            &bytes(&self.depth)?,
            &bytes(&self.mask)?,
            self.intrinsics,
            self.camera,
            self.timestamp,
        )
        .map_err(WorldError::Protocol)
    }
}

#[cfg(unix)]
pub use socket::{serve, SocketWorld};

#[cfg(unix)]
mod socket {
    use std::io::{BufRead, BufReader, Write};
    use std::os::unix::net::{UnixListener, UnixStream};
    use std::sync::{Arc, Mutex};

    use super::*;

    /// Accepts connections forever; each connection gets its own thread and
    /// commands from all of them are applied one at a time.
    pub fn serve<W>(listener: UnixListener, endpoint: Endpoint<W>) -> std::io::Result<()>
    where
        W: WorldChannel + Send + 'static,
    {
        let shared = Arc::new(Mutex::new(endpoint));
        for stream in listener.incoming() {
            let stream = stream?;
            let shared = Arc::clone(&shared);
            std::thread::spawn(move || {
                // a dropped client is not an error for the server
                let _ = serve_connection(stream, &shared);
            });
        }
        Ok(())
    }

    fn serve_connection<W: WorldChannel>(stream: UnixStream, endpoint: &Mutex<Endpoint<W>>) -> std::io::Result<()> {
        let mut writer = stream.try_clone()?;
        for line in BufReader::new(stream).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = endpoint.lock().unwrap_or_else(|p| p.into_inner()).handle_line(&line);
            writer.write_all(reply.as_bytes())?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// A world on the other end of a protocol socket.
    #[derive(Debug)]
    pub struct SocketWorld {
        reader: BufReader<UnixStream>,
        writer: UnixStream,
    }

    impl SocketWorld {
        pub fn connect(path: impl AsRef<Path>) -> Result<Self, WorldError> {
            let path = path.as_ref();
            let stream = UnixStream::connect(path)
                .map_err(|e| WorldError::Unreachable(format!("{}: {e}", path.display())))?;
            let writer = stream.try_clone().map_err(|e| WorldError::Unreachable(e.to_string()))?;
            Ok(Self {
                reader: BufReader::new(stream),
                writer,
            })
        }

        pub fn request(&mut self, cmd: &Command) -> Result<Reply, WorldError> {
            let mut line = serde_json::to_string(cmd).expect("commands serialize");
            line.push('\n');
            let lost = |e: std::io::Error| WorldError::Unreachable(e.to_string());
            self.writer.write_all(line.as_bytes()).map_err(lost)?;
            let mut answer = String::new();
            if self.reader.read_line(&mut answer).map_err(lost)? == 0 {
                return Err(WorldError::Unreachable("connection closed".into()));
            }
            let reply: Reply =
                serde_json::from_str(&answer).map_err(|e| WorldError::Protocol(format!("malformed reply: {e}")))?;
            if reply.ok {
                Ok(reply)
            } else {
                Err(reply.world_error())
            }
        }
    }

    impl WorldChannel for SocketWorld {
        fn spawn(&mut self, label: &str, pose: &Pose6D) -> Result<(AwId, Vec<PhysicsEvent>), WorldError> {
            let r = self.request(&Command::Spawn {
                label: label.to_string(),
                pose: *pose,
            })?;
            let id = r.id.ok_or_else(|| WorldError::Protocol("spawn reply without id".into()))?;
            Ok((id, r.events))
        }

        fn set_pose(&mut self, id: AwId, pose: &Pose6D) -> Result<Vec<PhysicsEvent>, WorldError> {
            Ok(self.request(&Command::SetPose { id, pose: *pose })?.events)
        }

        fn delete(&mut self, id: AwId) -> Result<(), WorldError> {
            self.request(&Command::Delete { id }).map(|_| ())
        }

        fn snapshot(&mut self, camera: Option<&Pose6D>) -> Result<SensorFrame, WorldError> {
            let r = self.request(&Command::Snapshot { camera: camera.copied() })?;
            r.frame
                .ok_or_else(|| WorldError::Protocol("snapshot reply without frame".into()))?
                .decode()
        }

        fn drain_events(&mut self) -> Result<Vec<PhysicsEvent>, WorldError> {
            Ok(self.request(&Command::DrainEvents)?.events)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::map::{SemanticMap, SurfaceRegion};
    use crate::mesh::{box_mesh, BoxFaces, ModelLibrary, ObjectModel};
    use crate::world::ArtificialWorld;

    fn world() -> ArtificialWorld {
        let mut lib = ModelLibrary::new();
        let mesh = box_mesh(Vec3::new(0.1, 0.1, 0.1), BoxFaces::uniform([0.8, 0.1, 0.1]));
        lib.insert(ObjectModel::new("red", mesh).unwrap()).unwrap();
        let map = SemanticMap {
            static_geometry: vec![],
            surfaces: vec![SurfaceRegion {
                name: "table".into(),
                point: Vec3::zeros(),
                normal: Vec3::z(),
                bounds: [-1.0, -1.0, 1.0, 1.0],
                height_band: 0.3,
            }],
        };
        ArtificialWorld::new(lib, map, CameraIntrinsics::centered(32, 24, 25.0))
    }

    fn reply(endpoint: &mut Endpoint<ArtificialWorld>, line: &str) -> Reply {
        serde_json::from_str(&endpoint.handle_line(line)).unwrap()
    }

    #[test]
    fn spawn_reply_carries_id_and_events() {
        let mut e = Endpoint::new(world());
        let r = reply(&mut e, r#"{"op":"spawn","label":"red","pose":[0,0,0.1,1,0,0,0]}"#);
        assert!(r.ok);
        assert_eq!(r.id, Some(1));
        assert_eq!(r.events.len(), 1, "floating spawn falls");
        let r = reply(&mut e, r#"{"op":"drain_events"}"#);
        assert_eq!(r.events.len(), 1);
        let r = reply(&mut e, r#"{"op":"drain_events"}"#);
        assert!(r.events.is_empty());
    }

    #[test]
    fn failures_are_typed() {
        let mut e = Endpoint::new(world());
        let r = reply(&mut e, r#"{"op":"spawn","label":"blue","pose":[0,0,0,1,0,0,0]}"#);
        assert!(!r.ok);
        assert_eq!(r.world_error(), WorldError::UnknownLabel("blue".into()));
        let r = reply(&mut e, r#"{"op":"delete","id":9}"#);
        assert_eq!(r.world_error(), WorldError::UnknownId(9));
        let r = reply(&mut e, r#"{"op":"jump"}"#);
        assert_eq!(r.code, Some(ErrorCode::BadRequest));
        let r = reply(&mut e, "not json");
        assert!(!r.ok && r.error.is_some());
    }

    #[test]
    fn inline_snapshot_round_trips() {
        let mut e = Endpoint::new(world());
        reply(&mut e, r#"{"op":"spawn","label":"red","pose":[0,0,0,1,0,0,0]}"#);
        let camera = Pose6D::look_at(Vec3::new(0.6, 0.0, 0.4), Vec3::zeros(), Vec3::z());
        let direct = WorldChannel::snapshot(&mut e.world, Some(&camera)).unwrap();
        let line = serde_json::to_string(&Command::Snapshot { camera: Some(camera) }).unwrap();
        let r = reply(&mut e, &line);
        let frame = r.frame.unwrap().decode().unwrap();
        assert_eq!(frame.rgb, direct.rgb);
        assert_eq!(frame.mask, direct.mask);
        for (a, b) in frame.depth.iter().zip(&direct.depth) {
            assert!((a - b).abs() <= 0.0005 + 1e-12);
        }
    }

    #[test]
    fn file_snapshot_writes_three_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = Endpoint::new(world()).with_frame_dir(dir.path());
        let r = reply(&mut e, r#"{"op":"snapshot"}"#);
        let wire = r.frame.unwrap();
        assert_eq!(wire.encoding, Encoding::File);
        for p in [&wire.rgb, &wire.depth, &wire.mask] {
            assert!(Path::new(p).starts_with(dir.path()));
        }
        assert_eq!(wire.decode().unwrap().rgb.len(), 32 * 24);
    }

    #[test]
    fn commands_use_documented_wire_names() {
        let cmd = Command::SetPose {
            id: 3,
            pose: Pose6D::identity(),
        };
        let v: serde_json::Value = serde_json::to_value(&cmd).unwrap();
        assert_eq!(v["op"], "set_pose");
        assert_eq!(v["pose"].as_array().unwrap().len(), 7);
        let v = serde_json::to_value(Reply::ok()).unwrap();
        assert_eq!(v, serde_json::json!({"ok": true, "events": []}));
    }
}
