/**
 * HTML renderers for the console.  Everything is a plain string so the same
 * functions serve the initial page and the fragment endpoints the browser
 * re-fetches when events arrive.  All dynamic content goes through esc().
 */
import type {
  AgentInfo,
  Asset,
  HostNode,
  KnowledgeView,
} from "./knowledge.js";
import type { EventRecord } from "./protocol.js";

export function esc(value: unknown): string {
  return String(value)
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

/** 0.8 -> "0.8", 0.675 -> "0.675", 1 -> "1". */
export function prob(p: number): string {
  return String(Math.round(p * 1000) / 1000);
}

// Parameter forms for the shipped action library.  Anything the backend
// lists beyond these falls back to a free-form key=value field.
export const PARAM_FIELDS: Record<string, { name: string; hint: string }[]> = {
  network_discovery: [
    { name: "network", hint: "segment id or prefix" },
    { name: "range", hint: "host range, e.g. 1-20" },
  ],
  port_scan: [
    { name: "target", hint: "address" },
    { name: "ports", hint: "e.g. 79-81 or 80,443" },
  ],
  banner_grab: [
    { name: "target", hint: "address" },
    { name: "port", hint: "port" },
  ],
  os_detect_by_banner: [{ name: "target", hint: "address" }],
  os_fingerprint: [{ name: "target", hint: "address" }],
  run_exploit: [
    { name: "target", hint: "address" },
    { name: "port", hint: "port" },
    { name: "vuln", hint: "vulnerability id" },
  ],
  local_info_gathering: [],
  privilege_escalation: [{ name: "vuln", hint: "local vuln id (optional)" }],
};

function hostCard(node: HostNode): string {
  const badges = node.osHypotheses
    .map(
      (h) =>
        `<span class="badge os" data-os="${esc(h.os)}" data-p="${esc(prob(h.probability))}">` +
        `${esc(h.os)} ${esc(prob(h.probability))}</span>`,
    )
    .join("");
  const ports = node.ports
    .map(
      (p) =>
        `<span class="port ${p.open ? "open" : "closed"}" data-port="${p.port}">` +
        `${p.port}${p.open ? "" : " closed"}</span>`,
    )
    .join("");
  const agents = node.agents
    .map((a) => `<span class="marker agent" data-agent="${esc(a)}">${esc(a)}</span>`)
    .join("");
  const banners = node.banners
    .map((b) => `<div class="banner">:${b.port} <code>${esc(b.banner)}</code></div>`)
    .join("");
  const users = node.users.length
    ? `<div class="users">users: ${node.users.map(esc).join(", ")}</div>`
    : "";
  return `<article class="host${node.absent ? " absent" : ""}" data-host="${esc(node.address)}">
  <h3>${esc(node.address)}${agents}</h3>
  <div class="hypotheses">${badges || '<span class="unknown">os unknown</span>'}</div>
  <div class="ports">${ports}</div>
  ${banners}${users}
  <div class="stale">${node.absent ? "no response, " : ""}seen t=${esc(node.lastSeen)}</div>
</article>`;
}

/** The attacker's map: one card per known host, plus the connectivity list.
 * Renders nothing that is not backed by an asset. */
export function topologyView(view: KnowledgeView): string {
  const cards = view.nodes.map(hostCard).join("\n");
  const edges = view.edges
    .map(
      (e) =>
        `<li class="edge ${e.kind}" data-source="${esc(e.source)}" data-target="${esc(e.target)}"` +
        `${e.port !== undefined ? ` data-port="${e.port}"` : ""}>` +
        `${esc(e.source)} &rarr; ${esc(e.target)}${e.port !== undefined ? `:${e.port}` : ""}` +
        ` <small>${e.kind}</small></li>`,
    )
    .join("\n");
  return `<section id="topology" data-clock="${esc(view.clock)}" data-seq="${view.lastSeq}">
<h2>Known hosts (${view.nodes.length})</h2>
<div class="hosts">
${cards || '<p class="empty">nothing discovered yet</p>'}
</div>
<h2>Connectivity</h2>
<ul class="edges">
${edges || '<li class="empty">none observed</li>'}
</ul>
</section>`;
}

export function agentTreeView(agents: AgentInfo[]): string {
  const byParent = new Map<string | null, AgentInfo[]>();
  for (const a of agents) {
    const list = byParent.get(a.parent) ?? [];
    list.push(a);
    byParent.set(a.parent, list);
  }
  const render = (parent: string | null): string => {
    const children = byParent.get(parent) ?? [];
    if (!children.length) return "";
    const items = children
      .map(
        (a) =>
          `<li class="agent${a.alive ? "" : " dead"}" data-agent="${esc(a.id)}">` +
          `<span class="name">${esc(a.id)}</span> on ${esc(a.machine)}` +
          ` <small>${esc(a.privilege)}${a.alive ? "" : ", dead"}</small>` +
          render(a.id) +
          `</li>`,
      )
      .join("\n");
    return `<ul>${items}</ul>`;
  };
  // Roots are agents whose parent is unknown to us, not only parent=null,
  // so a partial listing still renders every agent somewhere.
  const known = new Set(agents.map((a) => a.id));
  const roots = agents.filter((a) => a.parent === null || !known.has(a.parent));
  const rootHtml = roots
    .map(
      (a) =>
        `<li class="agent${a.alive ? "" : " dead"}" data-agent="${esc(a.id)}">` +
        `<span class="name">${esc(a.id)}</span> on ${esc(a.machine)}` +
        ` <small>${esc(a.privilege)}${a.alive ? "" : ", dead"}</small>` +
        render(a.id) +
        `</li>`,
    )
    .join("\n");
  return `<section id="agents">
<h2>Agents</h2>
<ul class="tree">${rootHtml || '<li class="empty">none</li>'}</ul>
</section>`;
}

export interface ActionDescriptor {
  name: string;
  goal: { kind: string; attrs: Record<string, unknown> };
  run_time: { min: number; avg: number; max: number };
  base_success_probability: number;
  zero_dayness: number;
  noise: { sensor: string; category: string; magnitude: number }[];
}

export function paramInputs(action: string): string {
  const fields = PARAM_FIELDS[action];
  if (!fields) {
    return `<label>params <input name="raw" placeholder="key=value key=value"></label>`;
  }
  return fields
    .map(
      (f) =>
        `<label>${esc(f.name)} <input name="${esc(f.name)}" placeholder="${esc(f.hint)}"></label>`,
    )
    .join("\n");
}

/** Launch form: pick the vantage agent, the action, fill its parameters.
 * Estimate shows the cost model's answer before anything is dispatched. */
export function actionLauncher(
  actions: ActionDescriptor[],
  agents: AgentInfo[],
  selectedAgent: string,
): string {
  const pivots = agents
    .filter((a) => a.alive)
    .map(
      (a) =>
        `<option value="${esc(a.id)}"${a.id === selectedAgent ? " selected" : ""}>` +
        `${esc(a.id)} (${esc(a.machine)})</option>`,
    )
    .join("");
  const options = actions
    .map((a) => `<option value="${esc(a.name)}">${esc(a.name)}</option>`)
    .join("");
  const first = actions[0]?.name ?? "";
  return `<section id="launcher">
<h2>Launch action</h2>
<form id="launch-form">
  <label>as <select id="pivot" name="agent">${pivots}</select></label>
  <label>action <select id="action" name="action">${options}</select></label>
  <div id="params">${paramInputs(first)}</div>
  <button type="button" id="estimate-btn">Estimate</button>
  <button type="submit" id="launch-btn">Launch</button>
  <div id="estimate" class="estimate"></div>
  <div id="launch-error" class="error" hidden></div>
  <div id="launch-status" class="status"></div>
</form>
</section>`;
}

function summarize(ev: EventRecord): string {
  const p = ev.payload;
  switch (ev.category) {
    case "asset":
      return `${p["kind"]} ${JSON.stringify(p["attributes"])} p=${p["probability"]}`;
    case "noise":
      return `${p["sensor"]} magnitude=${p["magnitude"]}`;
    case "agent":
      return `${p["agent"]} on ${p["machine"]} ${p["alive"] ? "up" : "down"}`;
    case "machine-state":
      return `${p["machine"]} ${p["what"]} ${p["state"]}`;
    case "action-result":
      return `${p["action"]} ${p["status"]} by ${p["agent"]} (${p["request_id"]})`;
    default:
      return JSON.stringify(p);
  }
}

export function eventFeedView(events: EventRecord[]): string {
  const rows = events
    .map(
      (ev) =>
        `<tr data-seq="${ev.seq}" class="${esc(ev.category)}">` +
        `<td>${ev.seq}</td><td>${esc(ev.time)}</td>` +
        `<td>${esc(ev.category)}</td><td>${esc(summarize(ev))}</td></tr>`,
    )
    .join("\n");
  return `<section id="feed">
<h2>Events</h2>
<table id="events">
<thead><tr><th>seq</th><th>t</th><th>category</th><th>what</th></tr></thead>
<tbody>${rows || '<tr class="empty"><td colspan="4">quiet</td></tr>'}</tbody>
</table>
</section>`;
}

export function envInspectorView(assets: Asset[]): string {
  const rows = assets
    .map(
      (a) =>
        `<tr data-kind="${esc(a.kind)}"><td>${esc(a.kind)}</td>` +
        `<td><code>${esc(JSON.stringify(a.attributes))}</code></td>` +
        `<td>${esc(prob(a.probability))}</td></tr>`,
    )
    .join("\n");
  return `<section id="env">
<h2>Environment knowledge (${assets.length})</h2>
<table>
<thead><tr><th>kind</th><th>attributes</th><th>p</th></tr></thead>
<tbody>${rows || '<tr class="empty"><td colspan="3">empty</td></tr>'}</tbody>
</table>
</section>`;
}

const CSS = `
body { font-family: ui-monospace, 'Cascadia Mono', Consolas, monospace; background: #101418;
       color: #c8d0d8; margin: 0; padding: 0 16px 32px; font-size: 13px; }
h1 { font-size: 16px; color: #e8eef4; }
h2 { font-size: 13px; color: #8aa0b4; text-transform: uppercase; letter-spacing: 1px;
     border-bottom: 1px solid #222a32; padding-bottom: 4px; }
a { color: #6ab0f3; }
#banner { display: none; background: #5a2020; color: #ffd0d0; padding: 8px 12px;
          margin: 8px -16px; position: sticky; top: 0; }
#banner.show { display: block; }
.columns { display: grid; grid-template-columns: 2fr 1fr; gap: 24px; align-items: start; }
.hosts { display: flex; flex-wrap: wrap; gap: 10px; }
.host { background: #161c22; border: 1px solid #26303a; border-radius: 4px;
        padding: 8px 10px; min-width: 180px; }
.host.absent { opacity: 0.45; border-style: dashed; }
.host h3 { margin: 0 0 6px; font-size: 13px; color: #e8eef4; }
.badge.os { background: #1d3a5a; color: #a8d0f0; border-radius: 3px; padding: 1px 6px;
            margin-right: 4px; display: inline-block; }
.unknown { color: #4a5560; }
.port { margin-right: 6px; color: #7fd48a; }
.port.closed { color: #5a646e; text-decoration: line-through; }
.marker.agent { background: #2a4a2a; color: #a8e0a8; border-radius: 8px; padding: 0 7px;
                margin-left: 6px; font-size: 11px; }
.banner code { color: #d8c080; }
.stale { color: #4a5560; font-size: 11px; margin-top: 4px; }
.edges { list-style: none; padding-left: 0; }
.edges li { color: #8aa0b4; }
.tree, .tree ul { list-style: none; padding-left: 16px; }
.tree .agent.dead > .name { text-decoration: line-through; color: #806060; }
#launch-form label { display: block; margin: 4px 0; }
#launch-form input, #launch-form select { background: #0c1014; color: #c8d0d8;
    border: 1px solid #26303a; padding: 3px 6px; }
#launch-form button { background: #1d3a5a; color: #d0e4f4; border: 1px solid #2a4a6a;
    padding: 4px 12px; margin: 6px 6px 0 0; cursor: pointer; }
.estimate { color: #d8c080; margin-top: 6px; white-space: pre; }
.error { color: #ff9090; margin-top: 6px; }
.status { color: #8aa0b4; margin-top: 6px; }
table { border-collapse: collapse; width: 100%; }
td, th { border-bottom: 1px solid #1c242c; padding: 3px 8px; text-align: left; }
th { color: #5a6a7a; }
tr.action-result td { color: #d0e4f4; }
tr.noise td { color: #c09060; }
.empty { color: #4a5560; }
`;

// Browser-side glue: listen on /events, swap fragments when knowledge
// changes, drive the launcher.  Kept dependency-free on purpose.
const SCRIPT = `
const banner = document.getElementById('banner');
function offline(on) { banner.classList.toggle('show', on); }

async function refresh(id) {
  try {
    let url = '/fragment/' + id;
    if (id === 'launcher') {
      const pivot = document.getElementById('pivot');
      if (pivot) url += '?agent=' + encodeURIComponent(pivot.value);
    }
    const res = await fetch(url);
    if (!res.ok) throw new Error('http ' + res.status);
    const html = await res.text();
    const target = document.getElementById(id);
    if (target) target.outerHTML = html;
    if (id === 'launcher') wireLauncher();
    offline(false);
  } catch (err) {
    offline(true);
    setTimeout(() => refresh(id), 2000);
  }
}

const dirty = new Set();
let flushTimer = null;
function mark(id) {
  dirty.add(id);
  if (!flushTimer) flushTimer = setTimeout(() => {
    flushTimer = null;
    const ids = [...dirty]; dirty.clear();
    ids.forEach(refresh);
  }, 150);
}

let pendingRequest = null;
const source = new EventSource('/events');
source.onmessage = (msg) => {
  offline(false);
  const ev = JSON.parse(msg.data);
  if (ev.category === 'asset') { mark('topology'); mark('env'); }
  if (ev.category === 'agent') { mark('agents'); mark('topology'); mark('launcher'); }
  mark('feed');
  if (ev.category === 'action-result' && pendingRequest &&
      ev.payload.request_id === pendingRequest) {
    pendingRequest = null;
    const status = document.getElementById('launch-status');
    if (status) status.textContent =
      'last action: ' + ev.payload.action + ' ' + ev.payload.status;
  }
};
source.onerror = () => offline(true);

async function post(url, body) {
  const res = await fetch(url, {
    method: 'POST',
    headers: { 'content-type': 'application/json' },
    body: JSON.stringify(body),
  });
  const data = await res.json();
  if (!res.ok) throw new Error(data.error ? data.error.code + ': ' + data.error.message : 'failed');
  return data;
}

function launcherParams() {
  const params = {};
  for (const input of document.querySelectorAll('#params input')) {
    if (!input.value.trim()) continue;
    if (input.name === 'raw') {
      for (const pair of input.value.trim().split(/\\s+/)) {
        const [k, v] = pair.split('=');
        if (k && v !== undefined) params[k] = v;
      }
    } else {
      params[input.name] = input.value.trim();
    }
  }
  if (typeof params.range === 'string') {
    const m = params.range.match(/^(\\d+)\\s*-\\s*(\\d+)$/);
    if (m) params.range = [Number(m[1]), Number(m[2])];
  }
  if (typeof params.port === 'string' && /^\\d+$/.test(params.port)) {
    params.port = Number(params.port);
  }
  return params;
}

function wireLauncher() {
  const form = document.getElementById('launch-form');
  if (!form) return;
  const action = document.getElementById('action');
  const errBox = document.getElementById('launch-error');
  const showError = (text) => { errBox.textContent = text; errBox.hidden = !text; };

  action.onchange = async () => {
    const res = await fetch('/fragment/params?action=' + encodeURIComponent(action.value));
    document.getElementById('params').innerHTML = await res.text();
    showError('');
  };
  document.getElementById('estimate-btn').onclick = async () => {
    showError('');
    try {
      const est = await post('/api/estimate', {
        agent: document.getElementById('pivot').value,
        action: action.value,
        params: launcherParams(),
      });
      document.getElementById('estimate').textContent =
        'success=' + est.success_probability.toFixed(4) +
        ' stealth=' + est.stealthiness.toFixed(4) +
        ' zero_day=' + est.zero_dayness.toFixed(4) +
        ' time=' + est.run_time.min + '/' + est.run_time.avg + '/' + est.run_time.max + 'ms';
    } catch (err) { showError(String(err.message || err)); }
  };
  form.onsubmit = async (e) => {
    e.preventDefault();
    showError('');
    try {
      const res = await post('/api/dispatch', {
        agent: document.getElementById('pivot').value,
        action: action.value,
        params: launcherParams(),
      });
      pendingRequest = res.request_id;
      document.getElementById('launch-status').textContent =
        'dispatched ' + res.request_id + ', waiting for the result event';
    } catch (err) { showError(String(err.message || err)); }
  };
}
wireLauncher();
`;

export interface PageState {
  title: string;
  describe: Record<string, unknown>;
  view: KnowledgeView;
  actions: ActionDescriptor[];
  assets: Asset[];
  events: EventRecord[];
  selectedAgent: string;
}

export function consolePage(state: PageState): string {
  const d = state.describe;
  return `<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>${esc(state.title)}</title>
<style>${CSS}</style>
</head>
<body>
<div id="banner">control service unreachable, retrying</div>
<h1>${esc(state.title)} <small>scenario ${esc(d["name"])} seed ${esc(d["seed"])},
${esc(d["machines"])} machines on ${esc(d["networks"])} networks</small></h1>
<div class="columns">
<div>
${topologyView(state.view)}
${eventFeedView(state.events)}
</div>
<div>
${agentTreeView(state.view.agents)}
${actionLauncher(state.actions, state.view.agents, state.selectedAgent)}
${envInspectorView(state.assets)}
</div>
</div>
<script>${SCRIPT}</script>
</body>
</html>`;
}
