//! Newline-delimited JSON wire adapter for externally hosted backends.
//!
//! Every message is one JSON document on one line. The client opens with a
//! handshake record, the endpoint answers with its own, and each request
//! `{"role": .., "request": {..}}` gets exactly one role-specific response.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::orchestrator::{Attribution, Goal, MonitorVerdict, Outcome, Subtask};
use crate::screen::{Action, AppModel, Observation};
use crate::trajectory::Trajectory;

use super::{
    ExecutorBackend, MonitorBackend, PlannerBackend, ReflectorBackend, RuleMonitor, RuleReflector, ScriptedExecutor,
    ScriptedPlanner, ScriptedProfile,
};

pub const WIRE_SCHEMA: &str = "agent_wire_v1";
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_RETRIES: u32 = 2;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Planner,
    Executor,
    Monitor,
    Reflector,
    Judge,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Planner => "planner",
            Role::Executor => "executor",
            Role::Monitor => "monitor",
            Role::Reflector => "reflector",
            Role::Judge => "judge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub role: Role,
    pub schema: String,
    pub reentrant: bool,
    pub temperature: f64,
}

impl Handshake {
    pub fn new(role: Role, temperature: f64) -> Self {
        Self { role, schema: WIRE_SCHEMA.to_owned(), reentrant: false, temperature }
    }
}

/// Line-oriented byte stream.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<()>;
    /// Next line, or `None` when the read timed out.
    fn receive(&mut self) -> Result<Option<String>>;
}

pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpTransport {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self> {
        let addr = endpoint
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Input(format!("endpoint `{endpoint}` does not resolve")))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        Self::from_stream(stream, timeout)
    }

    pub fn from_stream(stream: TcpStream, timeout: Duration) -> Result<Self> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: stream })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive(&mut self) -> Result<Option<String>> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(Error::Io(std::io::Error::new(ErrorKind::UnexpectedEof, "endpoint closed the connection"))),
            Ok(_) => Ok(Some(line.trim_end_matches(['\r', '\n']).to_owned())),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

type Responder = Box<dyn FnMut(&str) -> Option<String> + Send>;

/// In-process transport: every sent line is answered by a closure.
/// Returning `None` simulates a timeout.
pub struct Loopback {
    responder: Responder,
    inbox: VecDeque<Option<String>>,
}

impl Loopback {
    pub fn new(responder: impl FnMut(&str) -> Option<String> + Send + 'static) -> Self {
        Self { responder: Box::new(responder), inbox: VecDeque::new() }
    }

    /// Answers the handshake and echoes each request payload back unchanged.
    pub fn echo() -> Self {
        Self::new(|line| {
            let v: Value = serde_json::from_str(line).ok()?;
            if v.get("schema").is_some() {
                return Some(line.to_owned());
            }
            v.get("request").map(Value::to_string)
        })
    }

    /// Serves requests with `server`, as a remote endpoint would.
    pub fn serving(mut server: impl Server + 'static) -> Self {
        Self::new(move |line| Some(server.handle_line(line)))
    }
}

impl Transport for Loopback {
    fn send(&mut self, line: &str) -> Result<()> {
        let reply = (self.responder)(line);
        self.inbox.push_back(reply);
        Ok(())
    }

    fn receive(&mut self) -> Result<Option<String>> {
        Ok(self.inbox.pop_front().flatten())
    }
}

/// Client side of one role's connection. Admits one in-flight request.
pub struct RemoteAdapter {
    role: Role,
    transport: Box<dyn Transport>,
    retries: u32,
    temperature: f64,
    peer: Option<Handshake>,
    protocol_log: Vec<String>,
}

impl RemoteAdapter {
    pub fn new(role: Role, transport: impl Transport + 'static) -> Self {
        Self {
            role,
            transport: Box::new(transport),
            retries: DEFAULT_RETRIES,
            temperature: DEFAULT_TEMPERATURE,
            peer: None,
            protocol_log: Vec::new(),
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// The endpoint's handshake, once exchanged.
    pub fn peer(&self) -> Option<&Handshake> {
        self.peer.as_ref()
    }

    /// Raw payloads of rejected responses.
    pub fn protocol_log(&self) -> &[String] {
        &self.protocol_log
    }

    fn exchange(&mut self, line: &str) -> Result<String> {
        let attempts = self.retries + 1;
        for _ in 0..attempts {
            self.transport.send(line)?;
            if let Some(reply) = self.transport.receive()? {
                return Ok(reply);
            }
        }
        Err(Error::Timeout { role: self.role.as_str().to_owned(), attempts })
    }

    pub fn handshake(&mut self) -> Result<&Handshake> {
        if self.peer.is_none() {
            let ours = serde_json::to_string(&Handshake::new(self.role, self.temperature))?;
            let reply = self.exchange(&ours)?;
            let peer: Handshake =
                serde_json::from_str(&reply).map_err(|e| self.protocol(format!("bad handshake: {e}"), &reply))?;
            if peer.schema != WIRE_SCHEMA {
                return Err(Error::Schema { expected: WIRE_SCHEMA, found: peer.schema });
            }
            self.peer = Some(peer);
        }
        Ok(self.peer.as_ref().expect("set above"))
    }

    fn protocol(&mut self, message: String, raw: &str) -> Error {
        self.protocol_log.push(raw.to_owned());
        Error::Protocol { role: self.role.as_str().to_owned(), message, raw: raw.to_owned() }
    }

    /// Sends one request and returns the schema-checked response document.
    pub fn call(&mut self, request: Value) -> Result<Value> {
        self.handshake()?;
        let line = json!({ "role": self.role, "request": request }).to_string();
        let reply = self.exchange(&line)?;
        let value: Value = serde_json::from_str(&reply).map_err(|e| self.protocol(format!("not JSON: {e}"), &reply))?;
        if let Err(message) = validate_response(self.role, &value) {
            return Err(self.protocol(message, &reply));
        }
        Ok(value)
    }

    fn call_as<T: for<'de> Deserialize<'de>>(&mut self, request: Value, field: Option<&str>) -> Result<T> {
        let v = self.call(request)?;
        let inner = match field {
            Some(f) => v[f].clone(),
            None => v,
        };
        serde_json::from_value(inner).map_err(|e| Error::Protocol {
            role: self.role.as_str().to_owned(),
            message: e.to_string(),
            raw: String::new(),
        })
    }
}

/// Checks a response document against the role's schema.
pub fn validate_response(role: Role, v: &Value) -> std::result::Result<(), String> {
    let obj = v.as_object().ok_or("response is not an object")?;
    let need = |k: &str| obj.get(k).ok_or_else(|| format!("missing field `{k}`"));
    match role {
        Role::Planner => {
            let plan: Vec<Subtask> = serde_json::from_value(need("plan")?.clone()).map_err(|e| format!("plan: {e}"))?;
            if let Some(s) = plan.iter().find(|s| !s.is_well_formed()) {
                return Err(format!("subtask `{}` mixes kind and intent pattern", s.id));
            }
        }
        Role::Executor => {
            let a: Action = serde_json::from_value(need("action")?.clone()).map_err(|e| format!("action: {e}"))?;
            a.validate().map_err(|e| e.to_string())?;
        }
        Role::Monitor => {
            serde_json::from_value::<MonitorVerdict>(v.clone()).map_err(|e| format!("verdict: {e}"))?;
        }
        Role::Reflector => {
            serde_json::from_value::<Attribution>(need("attribution")?.clone())
                .map_err(|e| format!("attribution: {e}"))?;
        }
        Role::Judge => {
            for k in ["precondition_ok", "trigger_ok", "result_ok"] {
                need(k)?.as_bool().ok_or_else(|| format!("`{k}` must be a boolean"))?;
            }
        }
    }
    Ok(())
}

pub struct RemotePlanner(pub RemoteAdapter);
pub struct RemoteExecutor(pub RemoteAdapter);
pub struct RemoteMonitor(pub RemoteAdapter);
pub struct RemoteReflector(pub RemoteAdapter);

impl PlannerBackend for RemotePlanner {
    fn plan(
        &mut self,
        goal: &Goal,
        observation: &Observation,
        history: &[Outcome],
        reflection: Option<&Attribution>,
    ) -> Result<Vec<Subtask>> {
        let req = json!({ "goal": goal, "observation": observation, "history": history, "reflection": reflection });
        self.0.call_as(req, Some("plan"))
    }
}

impl ExecutorBackend for RemoteExecutor {
    fn act(&mut self, subtask: &Subtask, observation: &Observation, tau: &Trajectory) -> Result<Action> {
        let req = json!({ "mode": "orchestrated", "subtask": subtask, "observation": observation, "trajectory": tau });
        self.0.call_as(req, Some("action"))
    }

    fn navigate_task(&mut self, goal: &Goal, observation: &Observation, history: &Trajectory) -> Result<Action> {
        let req = json!({ "mode": "baseline", "goal": goal, "observation": observation, "trajectory": history });
        self.0.call_as(req, Some("action"))
    }
}

impl MonitorBackend for RemoteMonitor {
    fn check(
        &mut self,
        subtask: &Subtask,
        pre: &Observation,
        action: &Action,
        post: &Observation,
    ) -> Result<MonitorVerdict> {
        let req = json!({
            "subtask": subtask,
            "pre_digest": pre.state_digest,
            "action": action,
            "post_digest": post.state_digest,
            "pre": pre,
            "post": post,
        });
        self.0.call_as(req, None)
    }
}

impl ReflectorBackend for RemoteReflector {
    fn reflect(
        &mut self,
        subtask: &Subtask,
        tau: &Trajectory,
        observation: &Observation,
        history: &[Outcome],
    ) -> Result<Attribution> {
        let req = json!({ "subtask": subtask, "trajectory": tau, "observation": observation, "history": history });
        self.0.call_as(req, Some("attribution"))
    }
}

/// Endpoint side of the protocol.
pub trait Server: Send {
    fn handshake(&self, client: &Handshake) -> Handshake;
    fn respond(&mut self, role: Role, request: Value) -> Result<Value>;

    /// Answers one wire line; errors become `{"error": ..}` documents.
    fn handle_line(&mut self, line: &str) -> String {
        let reply = (|| -> Result<Value> {
            let v: Value = serde_json::from_str(line)?;
            if v.get("schema").is_some() {
                let hs: Handshake = serde_json::from_value(v)?;
                return Ok(serde_json::to_value(self.handshake(&hs))?);
            }
            let role: Role = serde_json::from_value(v.get("role").cloned().unwrap_or(Value::Null))?;
            self.respond(role, v.get("request").cloned().unwrap_or(Value::Null))
        })();
        match reply {
            Ok(v) => v.to_string(),
            Err(e) => json!({ "error": e.to_string() }).to_string(),
        }
    }
}

/// Serves the scripted backends over the wire, for tests and local endpoints.
pub struct ScriptedServer {
    planner: ScriptedPlanner,
    executor: ScriptedExecutor,
    monitor: RuleMonitor,
    reflector: RuleReflector,
}

impl ScriptedServer {
    pub fn new(model: Arc<AppModel>, profile: ScriptedProfile) -> Self {
        Self {
            planner: ScriptedPlanner::new(model.clone()),
            executor: ScriptedExecutor::new(model.clone(), profile),
            monitor: RuleMonitor::new(Some(model.clone())),
            reflector: RuleReflector::new(Some(model)),
        }
    }
}

fn field<T: for<'de> Deserialize<'de>>(req: &Value, k: &str) -> Result<T> {
    Ok(serde_json::from_value(req.get(k).cloned().unwrap_or(Value::Null))?)
}

impl Server for ScriptedServer {
    fn handshake(&self, client: &Handshake) -> Handshake {
        Handshake { reentrant: false, ..client.clone() }
    }

    fn respond(&mut self, role: Role, req: Value) -> Result<Value> {
        Ok(match role {
            Role::Planner => {
                let reflection: Option<Attribution> = field(&req, "reflection")?;
                let history: Vec<Outcome> = field(&req, "history")?;
                let plan = self.planner.plan(
                    &field(&req, "goal")?,
                    &field(&req, "observation")?,
                    &history,
                    reflection.as_ref(),
                )?;
                json!({ "plan": plan })
            }
            Role::Executor => {
                let obs: Observation = field(&req, "observation")?;
                let tau: Trajectory = field(&req, "trajectory")?;
                let action = if req.get("mode").and_then(Value::as_str) == Some("baseline") {
                    self.executor.navigate_task(&field(&req, "goal")?, &obs, &tau)?
                } else {
                    self.executor.act(&field(&req, "subtask")?, &obs, &tau)?
                };
                json!({ "action": action })
            }
            Role::Monitor => {
                let v = self.monitor.check(
                    &field(&req, "subtask")?,
                    &field(&req, "pre")?,
                    &field(&req, "action")?,
                    &field(&req, "post")?,
                )?;
                serde_json::to_value(v)?
            }
            Role::Reflector => {
                let history: Vec<Outcome> = field(&req, "history")?;
                let a = self.reflector.reflect(
                    &field(&req, "subtask")?,
                    &field(&req, "trajectory")?,
                    &field(&req, "observation")?,
                    &history,
                )?;
                json!({ "attribution": a })
            }
            Role::Judge => return Err(Error::Misuse("the scripted server has no judge".into())),
        })
    }
}

/// Serves one TCP connection until the peer hangs up.
pub fn serve_stream(stream: TcpStream, server: &mut dyn Server) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let reply = server.handle_line(line.trim_end());
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::Verdict;
    use crate::screen::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canned(reply: &'static str) -> Loopback {
        Loopback::new(move |line| {
            if line.contains("\"schema\"") && !line.contains("\"request\"") {
                Some(line.to_owned())
            } else {
                Some(reply.to_owned())
            }
        })
    }

    #[test]
    fn monitor_verdict_parses() {
        let mut a = RemoteAdapter::new(Role::Monitor, canned(r#"{"verdict":"FAIL"}"#));
        let v = a.call(json!({})).unwrap();
        assert_eq!(serde_json::from_value::<MonitorVerdict>(v).unwrap().value, Verdict::Fail);
        assert_eq!(a.peer().unwrap().schema, WIRE_SCHEMA);
        assert_eq!(a.peer().unwrap().temperature, DEFAULT_TEMPERATURE);
    }

    #[test]
    fn missing_verdict_is_protocol_error() {
        let mut a = RemoteAdapter::new(Role::Monitor, canned(r#"{"note":"x"}"#));
        match a.call(json!({})) {
            Err(Error::Protocol { raw, .. }) => assert!(raw.contains("note")),
            other => panic!("{other:?}"),
        }
        assert_eq!(a.protocol_log().len(), 1);
    }

    #[test]
    fn judge_ranges_checked() {
        let mut a =
            RemoteAdapter::new(Role::Judge, canned(r#"{"precondition_ok":true,"trigger_ok":1,"result_ok":true}"#));
        assert!(matches!(a.call(json!({})), Err(Error::Protocol { .. })));
    }

    #[test]
    fn timeouts_are_bounded() {
        let mut calls = 0u32;
        let t = Loopback::new(move |line| {
            calls += 1;
            (calls == 1).then(|| line.to_owned())
        });
        let mut a = RemoteAdapter::new(Role::Executor, t).with_retries(2);
        match a.call(json!({})) {
            Err(e @ Error::Timeout { attempts: 3, .. }) => assert!(e.is_retryable()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_mismatch_rejected() {
        let t = Loopback::new(|_| {
            Some(r#"{"role":"planner","schema":"other","reentrant":false,"temperature":0.1}"#.into())
        });
        let mut a = RemoteAdapter::new(Role::Planner, t);
        assert!(matches!(a.handshake(), Err(Error::Schema { .. })));
    }

    #[test]
    fn echo_round_trip_of_random_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = RemoteAdapter::new(Role::Executor, Loopback::echo());
        for _ in 0..200 {
            let p = Point::new(rng.gen_range(0..1080), rng.gen_range(0..2400));
            let action = match rng.gen_range(0..4) {
                0 => Action::click(p),
                1 => Action::long_press(p).with_target("e"),
                2 => Action::type_text(p, format!("t{}", rng.gen::<u16>())),
                _ => Action::answer("GUI_BUG"),
            };
            let back = a.call(json!({ "action": action })).unwrap();
            assert_eq!(serde_json::from_value::<Action>(back["action"].clone()).unwrap(), action);
        }
    }
}
