//! Text scenario format.
//!
//! Line oriented: `[section]` headers, `key = value` pairs in the scalar
//! sections, and one `record key=value ...` line per entry in the table
//! sections (`[topology]`, `[scus]`, `[flows]`). `#` starts a comment.
//! [`print_scenario`] writes the canonical form, which parses back to the
//! same [`Scenario`].

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use scenic_core::cc::{DcqcnParams, SwapPolicy};
use scenic_core::harness::{
    CcAlgorithm, CollectiveMode, CollectiveOp, CollectiveSpec, ConfigError, DataMode, FirewallSpec, FlowOp, FlowSpec,
    NodeSpec, Scenario, ScuKindSpec, ScuSpec,
};
use scenic_core::hostpath::DmaMode;
use scenic_core::scu::{AgentConfig, MAX_SCUS};
use scenic_core::transport::EcnFeedback;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based; 0 when the problem has no single location.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

/// Every problem found in one file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseErrors(pub Vec<ParseError>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseErrors {}

const SECTIONS: &[&str] =
    &["scenario", "link", "topology", "scus", "flows", "cc", "transport", "hostpath", "firewall", "collective"];

fn table_record(section: &str) -> Option<&'static str> {
    match section {
        "topology" => Some("node"),
        "scus" => Some("scu"),
        "flows" => Some("flow"),
        _ => None,
    }
}

#[derive(Default)]
struct Section {
    line: usize,
    pairs: Vec<(usize, String, String)>,
    rows: Vec<(usize, Vec<(String, String)>)>,
}

/// Key/value pairs of one scalar section or table row, consumed by key.
struct Fields<'a> {
    line: usize,
    items: Vec<(usize, &'a str, &'a str, bool)>,
}

impl<'a> Fields<'a> {
    fn from_section(s: &'a Section) -> Self {
        Fields { line: s.line, items: s.pairs.iter().map(|(l, k, v)| (*l, k.as_str(), v.as_str(), false)).collect() }
    }

    fn from_row(line: usize, row: &'a [(String, String)]) -> Self {
        Fields { line, items: row.iter().map(|(k, v)| (line, k.as_str(), v.as_str(), false)).collect() }
    }

    fn take(&mut self, key: &str) -> Option<(usize, &'a str)> {
        let item = self.items.iter_mut().find(|i| i.1 == key && !i.3)?;
        item.3 = true;
        Some((item.0, item.2))
    }

    fn get<T: FromStr>(&mut self, key: &str, errs: &mut Vec<ParseError>) -> Option<T> {
        let (line, v) = self.take(key)?;
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                errs.push(ParseError { line, message: format!("invalid value {v:?} for {key}") });
                None
            }
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T, errs: &mut Vec<ParseError>) {
        if let Some(v) = self.get(key, errs) {
            *slot = v;
        }
    }

    fn required<T: FromStr>(&mut self, key: &str, what: &str, errs: &mut Vec<ParseError>) -> Option<T> {
        if !self.items.iter().any(|i| i.1 == key) {
            errs.push(ParseError { line: self.line, message: format!("{what} is missing {key}") });
            return None;
        }
        self.get(key, errs)
    }

    fn word<T>(&mut self, key: &str, slot: &mut T, words: &[(&str, T)], errs: &mut Vec<ParseError>)
    where
        T: Copy,
    {
        if let Some((line, v)) = self.take(key) {
            match words.iter().find(|w| w.0 == v) {
                Some(w) => *slot = w.1,
                None => {
                    let allowed: Vec<_> = words.iter().map(|w| w.0).collect();
                    errs.push(ParseError {
                        line,
                        message: format!("{key} must be one of {}, got {v:?}", allowed.join("|")),
                    });
                }
            }
        }
    }

    fn finish(self, errs: &mut Vec<ParseError>) {
        for (line, k, _, used) in self.items {
            if !used {
                errs.push(ParseError { line, message: format!("unknown key {k}") });
            }
        }
    }
}

const FLOW_OPS: &[(&str, FlowOp)] =
    &[("write", FlowOp::Write), ("read", FlowOp::Read), ("stream", FlowOp::Stream), ("raw", FlowOp::Raw)];
const DATA_MODES: &[(&str, DataMode)] = &[("virtual", DataMode::Virtual), ("random", DataMode::Random)];
const CC_ALGOS: &[(&str, CcAlgorithm)] = &[("window", CcAlgorithm::Window), ("dcqcn", CcAlgorithm::Dcqcn)];
const SWAP_POLICIES: &[(&str, SwapPolicy)] = &[("defer", SwapPolicy::Defer), ("reject", SwapPolicy::Reject)];
const ECN_FEEDBACK: &[(&str, EcnFeedback)] = &[("cnp", EcnFeedback::Cnp), ("ack-echo", EcnFeedback::AckEcho)];
const DMA_MODES: &[(&str, DmaMode)] = &[("tagged", DmaMode::Tagged), ("two-transfer", DmaMode::TwoTransfer)];
const COLL_OPS: &[(&str, CollectiveOp)] = &[("broadcast", CollectiveOp::Broadcast), ("gather", CollectiveOp::Gather)];
const COLL_MODES: &[(&str, CollectiveMode)] = &[("flat", CollectiveMode::Flat), ("tree", CollectiveMode::BinaryTree)];

fn name_of<T: PartialEq + Copy>(words: &[(&'static str, T)], v: T) -> &'static str {
    words.iter().find(|w| w.1 == v).expect("every variant has a name").0
}

fn split_sections(text: &str, errs: &mut Vec<ParseError>) -> BTreeMap<&'static str, Section> {
    let mut sections: BTreeMap<&'static str, Section> = BTreeMap::new();
    let mut current: Option<&'static str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            match SECTIONS.iter().find(|s| **s == name) {
                Some(s) if sections.contains_key(s) => {
                    errs.push(ParseError { line, message: format!("section [{name}] appears twice") });
                    current = None;
                }
                Some(s) => {
                    sections.insert(s, Section { line, ..Section::default() });
                    current = Some(s);
                }
                None => {
                    errs.push(ParseError { line, message: format!("unknown section [{name}]") });
                    current = None;
                }
            }
            continue;
        }
        let Some(sec) = current else {
            if sections.is_empty() && errs.iter().all(|e| e.line != line) {
                errs.push(ParseError { line, message: "text before the first section".into() });
            }
            continue;
        };
        let s = sections.get_mut(sec).expect("current section exists");
        if let Some(record) = table_record(sec) {
            let mut words = body.split_whitespace();
            let head = words.next().unwrap_or("");
            if head != record {
                errs.push(ParseError { line, message: format!("[{sec}] rows start with {record:?}, got {head:?}") });
                continue;
            }
            let mut row = Vec::new();
            for w in words {
                match w.split_once('=') {
                    Some((k, v)) if !k.is_empty() => {
                        if row.iter().any(|(rk, _): &(String, String)| rk == k) {
                            errs.push(ParseError { line, message: format!("key {k} repeated") });
                        }
                        row.push((k.to_string(), v.to_string()));
                    }
                    _ => errs.push(ParseError { line, message: format!("expected key=value, got {w:?}") }),
                }
            }
            s.rows.push((line, row));
        } else {
            match body.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    let k = k.trim();
                    if s.pairs.iter().any(|p| p.1 == k) {
                        errs.push(ParseError { line, message: format!("key {k} repeated") });
                    }
                    s.pairs.push((line, k.to_string(), v.trim().to_string()));
                }
                _ => errs.push(ParseError { line, message: format!("expected key = value, got {body:?}") }),
            }
        }
    }
    sections
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str, errs: &mut Vec<ParseError>) -> Vec<T> {
    let mut out = Vec::new();
    for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.parse() {
            Ok(x) => out.push(x),
            Err(_) => errs.push(ParseError { line, message: format!("invalid {key} entry {item:?}") }),
        }
    }
    out
}

/// Where each record was declared, for locating validation failures.
#[derive(Default)]
struct Lines {
    sections: BTreeMap<&'static str, usize>,
    nodes: Vec<usize>,
    flows: BTreeMap<u32, usize>,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ParseErrors> {
    let mut errs = Vec::new();
    let sections = split_sections(text, &mut errs);
    let mut lines = Lines::default();
    for (name, s) in &sections {
        lines.sections.insert(name, s.line);
    }
    for required in ["scenario", "topology"] {
        if !sections.contains_key(required) {
            errs.push(ParseError { line: 0, message: format!("missing section [{required}]") });
        }
    }
    let empty = Section::default();
    let section = |n: &str| sections.get(n).unwrap_or(&empty);

    let mut f = Fields::from_section(section("scenario"));
    let name: String = f.required("name", "[scenario]", &mut errs).unwrap_or_default();
    let mut sc = Scenario::new(&name);
    f.set("duration_ns", &mut sc.duration_ns, &mut errs);
    f.set("seed", &mut sc.seed, &mut errs);
    f.set("sample_period_ns", &mut sc.sample_period_ns, &mut errs);
    f.set("tcp_offload", &mut sc.tcp_offload, &mut errs);
    f.finish(&mut errs);

    let mut f = Fields::from_section(section("link"));
    let link = &mut sc.link;
    f.set("gbps", &mut link.gbps, &mut errs);
    f.set("prop_delay_ns", &mut link.prop_delay_ns, &mut errs);
    f.set("mtu_bytes", &mut link.mtu_bytes, &mut errs);
    f.set("queue_cap_bytes", &mut link.queue_cap_bytes, &mut errs);
    f.set("ecn_threshold_bytes", &mut link.ecn_threshold_bytes, &mut errs);
    f.set("lossless", &mut link.lossless, &mut errs);
    f.finish(&mut errs);
    sc.cc.dcqcn = DcqcnParams::for_line_rate(sc.link.bits_per_second());

    for (line, row) in &section("topology").rows {
        let mut f = Fields::from_row(*line, row);
        let name: Option<String> = f.required("name", "node", &mut errs);
        let mut node = NodeSpec { name: name.unwrap_or_default(), subnet: 0, scus: 1 };
        f.set("subnet", &mut node.subnet, &mut errs);
        f.set("scus", &mut node.scus, &mut errs);
        f.finish(&mut errs);
        if node.scus as usize > MAX_SCUS || node.scus == 0 {
            errs.push(ParseError { line: *line, message: format!("scus must be 1..={MAX_SCUS}, got {}", node.scus) });
        }
        if sc.nodes.iter().any(|n| n.name == node.name) {
            errs.push(ParseError { line: *line, message: format!("node {} declared twice", node.name) });
        }
        sc.nodes.push(node);
        lines.nodes.push(*line);
    }
    let node_ref = |line: usize, v: Option<String>, errs: &mut Vec<ParseError>, sc: &Scenario| -> Option<usize> {
        let v = v?;
        let idx = sc.node_index(&v);
        if idx.is_none() {
            errs.push(ParseError { line, message: format!("unknown node {v}") });
        }
        idx
    };
    let scu_check = |line: usize, node: usize, scu: u8, errs: &mut Vec<ParseError>, sc: &Scenario| -> bool {
        let n = &sc.nodes[node];
        if scu >= n.scus {
            errs.push(ParseError {
                line,
                message: format!("scu index {scu} out of range: node {} has {} SCUs", n.name, n.scus),
            });
        }
        scu < n.scus
    };

    for (line, row) in &section("scus").rows {
        let mut f = Fields::from_row(*line, row);
        let node = node_ref(*line, f.required("node", "scu", &mut errs), &mut errs, &sc);
        let index: Option<u8> = f.required("index", "scu", &mut errs);
        let kind: Option<String> = f.required("kind", "scu", &mut errs);
        let kind = match kind.as_deref() {
            Some("passthrough") => Some(ScuKindSpec::Passthrough),
            Some("hashpart") => {
                let dests = f.required("dests", "hashpart scu", &mut errs);
                let row_width = f.required("row_width", "hashpart scu", &mut errs);
                let key_columns = f.get("key_columns", &mut errs).unwrap_or(1);
                let batch_rows = f.get("batch_rows", &mut errs).unwrap_or(0);
                match (dests, row_width) {
                    (Some(dests), Some(row_width)) => {
                        Some(ScuKindSpec::HashPartition { dests, row_width, key_columns, batch_rows })
                    }
                    _ => None,
                }
            }
            Some("firewall") => Some(ScuKindSpec::Firewall {
                burst_bytes: f.get("burst_bytes", &mut errs).unwrap_or(64 * 1024),
                queue_limit_bytes: f.get("queue_limit_bytes", &mut errs).unwrap_or(256 * 1024),
            }),
            Some(other) => {
                errs.push(ParseError {
                    line: *line,
                    message: format!("kind must be one of passthrough|hashpart|firewall, got {other:?}"),
                });
                None
            }
            None => None,
        };
        f.finish(&mut errs);
        if let (Some(node), Some(index)) = (node, index) {
            scu_check(*line, node, index, &mut errs, &sc);
            if sc.scus.iter().any(|s| s.node == node && s.index == index) {
                errs.push(ParseError { line: *line, message: format!("scu {index} configured twice") });
            }
            if let Some(kind) = kind {
                sc.scus.push(ScuSpec { node, index, kind });
            }
        }
    }

    for (line, row) in &section("flows").rows {
        let mut f = Fields::from_row(*line, row);
        let id = f.required("id", "flow", &mut errs);
        let src = node_ref(*line, f.required("src", "flow", &mut errs), &mut errs, &sc);
        let dst = node_ref(*line, f.required("dst", "flow", &mut errs), &mut errs, &sc);
        let mut op = FlowOp::Write;
        if !row.iter().any(|(k, _)| k == "op") {
            errs.push(ParseError { line: *line, message: "flow is missing op".into() });
        }
        f.word("op", &mut op, FLOW_OPS, &mut errs);
        let size = f.required("size", "flow", &mut errs);
        let mut spec = FlowSpec::new(id.unwrap_or(0), src.unwrap_or(0), dst.unwrap_or(0), op, size.unwrap_or(0));
        f.set("start_ns", &mut spec.start_ns, &mut errs);
        f.set("scu", &mut spec.scu, &mut errs);
        f.set("count", &mut spec.count, &mut errs);
        f.set("depth", &mut spec.depth, &mut errs);
        f.set("rate_bps", &mut spec.rate_bps, &mut errs);
        f.set("poisson", &mut spec.poisson, &mut errs);
        f.word("data", &mut spec.data, DATA_MODES, &mut errs);
        f.finish(&mut errs);
        if let (Some(id), Some(src), Some(dst)) = (id, src, dst) {
            match op {
                FlowOp::Write | FlowOp::Read => {
                    // One report per record even when both ends are too small.
                    if scu_check(*line, src, spec.scu, &mut errs, &sc) {
                        scu_check(*line, dst, spec.scu, &mut errs, &sc);
                    }
                }
                FlowOp::Stream => {
                    scu_check(*line, dst, spec.scu, &mut errs, &sc);
                }
                FlowOp::Raw => {}
            }
            if lines.flows.insert(id, *line).is_some() {
                errs.push(ParseError { line: *line, message: format!("flow id {id} used twice") });
            }
            sc.flows.push(spec);
        }
    }

    let mut f = Fields::from_section(section("cc"));
    let cc = &mut sc.cc;
    f.word("algorithm", &mut cc.algorithm, CC_ALGOS, &mut errs);
    f.set("window_bytes", &mut cc.window_bytes, &mut errs);
    cc.load_at_ns = f.get("load_at_ns", &mut errs);
    cc.swap_at_ns = f.get("swap_at_ns", &mut errs);
    f.word("swap_to", &mut cc.swap_to, CC_ALGOS, &mut errs);
    f.word("swap_policy", &mut cc.swap_policy, SWAP_POLICIES, &mut errs);
    f.set("reconfig_delay_ns", &mut cc.reconfig_delay_ns, &mut errs);
    f.set("tick_ns", &mut cc.tick_ns, &mut errs);
    let d = &mut cc.dcqcn;
    f.set("dcqcn.line_rate_bps", &mut d.line_rate_bps, &mut errs);
    f.set("dcqcn.g", &mut d.g, &mut errs);
    f.set("dcqcn.alpha_timer_ns", &mut d.alpha_timer_ns, &mut errs);
    f.set("dcqcn.rate_timer_ns", &mut d.rate_timer_ns, &mut errs);
    f.set("dcqcn.byte_counter_bytes", &mut d.byte_counter_bytes, &mut errs);
    f.set("dcqcn.fast_recovery_steps", &mut d.fast_recovery_steps, &mut errs);
    f.set("dcqcn.additive_step_bps", &mut d.additive_step_bps, &mut errs);
    f.set("dcqcn.hyper_step_bps", &mut d.hyper_step_bps, &mut errs);
    f.set("dcqcn.min_rate_bps", &mut d.min_rate_bps, &mut errs);
    f.set("dcqcn.echo_holdoff_ns", &mut d.echo_holdoff_ns, &mut errs);
    f.finish(&mut errs);

    let mut f = Fields::from_section(section("transport"));
    let t = &mut sc.transport;
    f.set("ack_every", &mut t.ack_every, &mut errs);
    f.set("cnp_interval_ns", &mut t.cnp_interval_ns, &mut errs);
    f.word("ecn_feedback", &mut t.ecn_feedback, ECN_FEEDBACK, &mut errs);
    f.set("rto_ns", &mut t.rto_ns, &mut errs);
    f.set("tlb_capacity", &mut t.tlb_capacity, &mut errs);
    f.set("page_size", &mut t.page_size, &mut errs);
    f.set("tlb_miss_ns", &mut t.tlb_miss_ns, &mut errs);
    f.finish(&mut errs);

    let mut f = Fields::from_section(section("hostpath"));
    let h = &mut sc.hostpath;
    f.set("ring_bytes", &mut h.ring_bytes, &mut errs);
    f.word("dma_mode", &mut h.dma_mode, DMA_MODES, &mut errs);
    f.set("irq_count", &mut h.irq_count, &mut errs);
    f.set("irq_timeout_ns", &mut h.irq_timeout_ns, &mut errs);
    f.set("irq_latency_ns", &mut h.irq_latency_ns, &mut errs);
    f.set("poll_budget", &mut h.poll_budget, &mut errs);
    f.set("poll_interval_ns", &mut h.poll_interval_ns, &mut errs);
    f.set("tx_queue_bytes", &mut h.tx_queue_bytes, &mut errs);
    f.finish(&mut errs);

    if let Some(s) = sections.get("firewall") {
        let mut f = Fields::from_section(s);
        let node = node_ref(s.line, f.required("node", "[firewall]", &mut errs), &mut errs, &sc);
        let scu = f.get("scu", &mut errs).unwrap_or(0);
        let threshold = f.required("threshold_bps", "[firewall]", &mut errs);
        let defaults = AgentConfig::new(0, Vec::new());
        let mut spec = FirewallSpec {
            node: node.unwrap_or(0),
            scu,
            threshold_bps: threshold.unwrap_or(0),
            timer_period_ns: defaults.timer_period_ns,
            axi_access_ns: defaults.axi_access_ns,
            irq_trip_ns: defaults.irq_trip_ns,
            subnets: Vec::new(),
        };
        f.set("timer_period_ns", &mut spec.timer_period_ns, &mut errs);
        f.set("axi_access_ns", &mut spec.axi_access_ns, &mut errs);
        f.set("irq_trip_ns", &mut spec.irq_trip_ns, &mut errs);
        match f.take("subnets") {
            Some((line, v)) => spec.subnets = parse_list(line, "subnets", v, &mut errs),
            None => errs.push(ParseError { line: s.line, message: "[firewall] is missing subnets".into() }),
        }
        f.finish(&mut errs);
        if let Some(node) = node {
            scu_check(s.line, node, scu, &mut errs, &sc);
            sc.firewall = Some(spec);
        }
    }

    if let Some(s) = sections.get("collective") {
        let mut f = Fields::from_section(s);
        let mut op = CollectiveOp::Broadcast;
        let mut mode = CollectiveMode::Flat;
        f.word("op", &mut op, COLL_OPS, &mut errs);
        f.word("mode", &mut mode, COLL_MODES, &mut errs);
        let bytes = f.required("bytes", "[collective]", &mut errs).unwrap_or(0);
        let start_ns = f.get("start_ns", &mut errs).unwrap_or(0);
        let scu = f.get("scu", &mut errs).unwrap_or(0);
        let mut ranks = Vec::new();
        match f.take("ranks") {
            Some((line, v)) => {
                for name in parse_list::<String>(line, "ranks", v, &mut errs) {
                    if let Some(i) = node_ref(line, Some(name), &mut errs, &sc) {
                        scu_check(line, i, scu, &mut errs, &sc);
                        ranks.push(i);
                    }
                }
            }
            None => errs.push(ParseError { line: s.line, message: "[collective] is missing ranks".into() }),
        }
        f.finish(&mut errs);
        sc.collective = Some(CollectiveSpec { op, mode, ranks, bytes, start_ns, scu });
    }

    if errs.is_empty() {
        if let Err(e) = sc.validate() {
            errs.push(ParseError { line: locate(&e, &sc, &lines), message: e.to_string() });
        }
    }
    if errs.is_empty() {
        Ok(sc)
    } else {
        errs.sort_by_key(|e| e.line);
        Err(ParseErrors(errs))
    }
}

fn locate(e: &ConfigError, sc: &Scenario, lines: &Lines) -> usize {
    let section = |s: &str| lines.sections.get(s).copied().unwrap_or(0);
    match e {
        ConfigError::Link => section("link"),
        ConfigError::Range { section: s, .. } => section(s),
        ConfigError::Flow { id, .. }
        | ConfigError::DuplicateFlow(id)
        | ConfigError::Loopback(id)
        | ConfigError::StartAfterEnd(id) => lines.flows.get(id).copied().unwrap_or(0),
        ConfigError::DuplicateNode(name) | ConfigError::TooManyScus { node: name, .. } => {
            sc.nodes.iter().position(|n| &n.name == name).map_or(0, |i| lines.nodes[i])
        }
        _ => section("scenario"),
    }
}

/// Canonical text form: every field written, sections in a fixed order.
pub fn print_scenario(sc: &Scenario) -> String {
    let mut o = String::new();
    let node = |i: usize| sc.nodes[i].name.as_str();
    let w = &mut o;
    let _ = writeln!(w, "[scenario]");
    let _ = writeln!(w, "name = {}", sc.name);
    let _ = writeln!(w, "duration_ns = {}", sc.duration_ns);
    let _ = writeln!(w, "seed = {}", sc.seed);
    let _ = writeln!(w, "sample_period_ns = {}", sc.sample_period_ns);
    let _ = writeln!(w, "tcp_offload = {}", sc.tcp_offload);
    let l = &sc.link;
    let _ = writeln!(w, "\n[link]");
    let _ = writeln!(w, "gbps = {}", l.gbps);
    let _ = writeln!(w, "prop_delay_ns = {}", l.prop_delay_ns);
    let _ = writeln!(w, "mtu_bytes = {}", l.mtu_bytes);
    let _ = writeln!(w, "queue_cap_bytes = {}", l.queue_cap_bytes);
    let _ = writeln!(w, "ecn_threshold_bytes = {}", l.ecn_threshold_bytes);
    let _ = writeln!(w, "lossless = {}", l.lossless);
    let _ = writeln!(w, "\n[topology]");
    for n in &sc.nodes {
        let _ = writeln!(w, "node name={} subnet={} scus={}", n.name, n.subnet, n.scus);
    }
    if !sc.scus.is_empty() {
        let _ = writeln!(w, "\n[scus]");
        for s in &sc.scus {
            let _ = write!(w, "scu node={} index={} kind=", node(s.node), s.index);
            let _ = match s.kind {
                ScuKindSpec::Passthrough => writeln!(w, "passthrough"),
                ScuKindSpec::HashPartition { dests, row_width, key_columns, batch_rows } => writeln!(
                    w,
                    "hashpart dests={dests} row_width={row_width} key_columns={key_columns} batch_rows={batch_rows}"
                ),
                ScuKindSpec::Firewall { burst_bytes, queue_limit_bytes } => {
                    writeln!(w, "firewall burst_bytes={burst_bytes} queue_limit_bytes={queue_limit_bytes}")
                }
            };
        }
    }
    if !sc.flows.is_empty() {
        let _ = writeln!(w, "\n[flows]");
        for f in &sc.flows {
            let _ = writeln!(
                w,
                "flow id={} src={} dst={} op={} size={} start_ns={} scu={} count={} depth={} rate_bps={} poisson={} data={}",
                f.id,
                node(f.src),
                node(f.dst),
                name_of(FLOW_OPS, f.op),
                f.size,
                f.start_ns,
                f.scu,
                f.count,
                f.depth,
                f.rate_bps,
                f.poisson,
                name_of(DATA_MODES, f.data),
            );
        }
    }
    let c = &sc.cc;
    let _ = writeln!(w, "\n[cc]");
    let _ = writeln!(w, "algorithm = {}", name_of(CC_ALGOS, c.algorithm));
    let _ = writeln!(w, "window_bytes = {}", c.window_bytes);
    if let Some(t) = c.load_at_ns {
        let _ = writeln!(w, "load_at_ns = {t}");
    }
    if let Some(t) = c.swap_at_ns {
        let _ = writeln!(w, "swap_at_ns = {t}");
    }
    let _ = writeln!(w, "swap_to = {}", name_of(CC_ALGOS, c.swap_to));
    let _ = writeln!(w, "swap_policy = {}", name_of(SWAP_POLICIES, c.swap_policy));
    let _ = writeln!(w, "reconfig_delay_ns = {}", c.reconfig_delay_ns);
    let _ = writeln!(w, "tick_ns = {}", c.tick_ns);
    let d = &c.dcqcn;
    let _ = writeln!(w, "dcqcn.line_rate_bps = {}", d.line_rate_bps);
    let _ = writeln!(w, "dcqcn.g = {}", d.g);
    let _ = writeln!(w, "dcqcn.alpha_timer_ns = {}", d.alpha_timer_ns);
    let _ = writeln!(w, "dcqcn.rate_timer_ns = {}", d.rate_timer_ns);
    let _ = writeln!(w, "dcqcn.byte_counter_bytes = {}", d.byte_counter_bytes);
    let _ = writeln!(w, "dcqcn.fast_recovery_steps = {}", d.fast_recovery_steps);
    let _ = writeln!(w, "dcqcn.additive_step_bps = {}", d.additive_step_bps);
    let _ = writeln!(w, "dcqcn.hyper_step_bps = {}", d.hyper_step_bps);
    let _ = writeln!(w, "dcqcn.min_rate_bps = {}", d.min_rate_bps);
    let _ = writeln!(w, "dcqcn.echo_holdoff_ns = {}", d.echo_holdoff_ns);
    let t = &sc.transport;
    let _ = writeln!(w, "\n[transport]");
    let _ = writeln!(w, "ack_every = {}", t.ack_every);
    let _ = writeln!(w, "cnp_interval_ns = {}", t.cnp_interval_ns);
    let _ = writeln!(w, "ecn_feedback = {}", name_of(ECN_FEEDBACK, t.ecn_feedback));
    let _ = writeln!(w, "rto_ns = {}", t.rto_ns);
    let _ = writeln!(w, "tlb_capacity = {}", t.tlb_capacity);
    let _ = writeln!(w, "page_size = {}", t.page_size);
    let _ = writeln!(w, "tlb_miss_ns = {}", t.tlb_miss_ns);
    let h = &sc.hostpath;
    let _ = writeln!(w, "\n[hostpath]");
    let _ = writeln!(w, "ring_bytes = {}", h.ring_bytes);
    let _ = writeln!(w, "dma_mode = {}", name_of(DMA_MODES, h.dma_mode));
    let _ = writeln!(w, "irq_count = {}", h.irq_count);
    let _ = writeln!(w, "irq_timeout_ns = {}", h.irq_timeout_ns);
    let _ = writeln!(w, "irq_latency_ns = {}", h.irq_latency_ns);
    let _ = writeln!(w, "poll_budget = {}", h.poll_budget);
    let _ = writeln!(w, "poll_interval_ns = {}", h.poll_interval_ns);
    let _ = writeln!(w, "tx_queue_bytes = {}", h.tx_queue_bytes);
    if let Some(fw) = &sc.firewall {
        let subnets: Vec<String> = fw.subnets.iter().map(u16::to_string).collect();
        let _ = writeln!(w, "\n[firewall]");
        let _ = writeln!(w, "node = {}", node(fw.node));
        let _ = writeln!(w, "scu = {}", fw.scu);
        let _ = writeln!(w, "threshold_bps = {}", fw.threshold_bps);
        let _ = writeln!(w, "timer_period_ns = {}", fw.timer_period_ns);
        let _ = writeln!(w, "axi_access_ns = {}", fw.axi_access_ns);
        let _ = writeln!(w, "irq_trip_ns = {}", fw.irq_trip_ns);
        let _ = writeln!(w, "subnets = {}", subnets.join(","));
    }
    if let Some(c) = &sc.collective {
        let ranks: Vec<&str> = c.ranks.iter().map(|&r| node(r)).collect();
        let _ = writeln!(w, "\n[collective]");
        let _ = writeln!(w, "op = {}", name_of(COLL_OPS, c.op));
        let _ = writeln!(w, "mode = {}", name_of(COLL_MODES, c.mode));
        let _ = writeln!(w, "ranks = {}", ranks.join(","));
        let _ = writeln!(w, "bytes = {}", c.bytes);
        let _ = writeln!(w, "start_ns = {}", c.start_ns);
        let _ = writeln!(w, "scu = {}", c.scu);
    }
    o
}
