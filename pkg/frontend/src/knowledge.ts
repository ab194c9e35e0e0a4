/**
 * The operator's working model of what the attacker knows.
 *
 * Everything here is derived from query_env answers and the event stream;
 * nothing reaches in for ground truth.  KnowledgeStore keeps raw assets and
 * agents, buildView() folds them into per-host nodes with OS hypotheses,
 * port states, agent markers and a staleness clock.
 */
import type { EventRecord } from "./protocol.js";

export interface Asset {
  kind: string;
  attributes: Record<string, unknown>;
  probability: number;
}

export interface AgentInfo {
  id: string;
  machine: string;
  privilege: string;
  parent: string | null;
  alive: boolean;
  channel: { kind: string; port: number | null } | null;
}

export interface OsHypothesis {
  os: string;
  probability: number;
}

export interface PortState {
  port: number;
  open: boolean;
}

export interface HostNode {
  address: string;
  osHypotheses: OsHypothesis[]; // strongest first
  ports: PortState[];
  banners: { port: number; banner: string }[];
  agents: string[]; // live agents whose presence is asserted here
  users: string[];
  lastSeen: number; // sim clock of the newest fact touching this host
  /** Every fact naming this address is a zero-probability one: probed,
   * nothing answered.  Still knowledge, drawn dimmed. */
  absent: boolean;
}

export interface Edge {
  source: string;
  target: string;
  kind: "ip" | "tcp";
  port?: number;
}

export interface KnowledgeView {
  clock: number;
  lastSeq: number;
  nodes: HostNode[];
  edges: Edge[];
  agents: AgentInfo[];
}

/** Every address an asset mentions.  This is the single definition of what
 * counts as a known host; the topology renders exactly this set. */
export function assetHosts(asset: Asset): string[] {
  const hosts: string[] = [];
  for (const key of ["host", "source", "target"]) {
    const value = asset.attributes[key];
    if (typeof value === "string") hosts.push(value);
  }
  return hosts;
}

// The store keys assets the same way the engine does, so that re-asserting
// a fact replaces it.  Operating-system assets key on (host, os) alone;
// alternative hypotheses for one host must coexist.
function assetKey(asset: Asset): string {
  let entries = Object.entries(asset.attributes);
  if (asset.kind === "operating-system") {
    entries = entries.filter(([k]) => k === "host" || k === "os");
  }
  entries.sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0));
  return JSON.stringify([asset.kind, entries]);
}

function compareAddress(a: string, b: string): number {
  const pa = a.split(".").map(Number);
  const pb = b.split(".").map(Number);
  if (pa.length === 4 && pb.length === 4 && !pa.some(isNaN) && !pb.some(isNaN)) {
    for (let i = 0; i < 4; i++) {
      if (pa[i]! !== pb[i]!) return pa[i]! - pb[i]!;
    }
    return 0;
  }
  return a < b ? -1 : a > b ? 1 : 0;
}

export class KnowledgeStore {
  clock = 0;
  lastSeq = 0;
  private assetsByKey = new Map<string, Asset>();
  private seenAt = new Map<string, number>(); // host address -> sim clock
  private agentsById = new Map<string, AgentInfo>();
  /** Set when an agent event arrived that the store cannot fully apply
   * (payloads omit parent/privilege); callers should re-fetch list_agents. */
  agentsDirty = false;

  /** Replace all knowledge with a fresh query_env + list_agents answer. */
  load(assets: Asset[], agents: AgentInfo[], clock: number, lastSeq: number): void {
    this.assetsByKey.clear();
    this.seenAt.clear();
    this.agentsById.clear();
    this.clock = clock;
    this.lastSeq = lastSeq;
    for (const asset of assets) this.putAsset(asset, clock);
    for (const agent of agents) this.agentsById.set(agent.id, { ...agent });
    this.agentsDirty = false;
  }

  setAgents(agents: AgentInfo[]): void {
    this.agentsById.clear();
    for (const agent of agents) this.agentsById.set(agent.id, { ...agent });
    this.agentsDirty = false;
  }

  applyEvent(ev: EventRecord): void {
    if (ev.seq <= this.lastSeq) return;
    this.lastSeq = ev.seq;
    if (ev.time > this.clock) this.clock = ev.time;
    if (ev.category === "asset") {
      const p = ev.payload as unknown as Asset;
      if (p && typeof p.kind === "string" && p.attributes) {
        this.putAsset(p, ev.time);
      }
    } else if (ev.category === "agent") {
      const id = ev.payload["agent"];
      const alive = ev.payload["alive"];
      if (typeof id === "string") {
        const known = this.agentsById.get(id);
        if (known && typeof alive === "boolean") {
          known.alive = alive;
        } else {
          this.agentsDirty = true;
        }
      }
    }
  }

  assets(): Asset[] {
    return [...this.assetsByKey.values()];
  }

  agents(): AgentInfo[] {
    return [...this.agentsById.values()];
  }

  buildView(): KnowledgeView {
    const nodes = new Map<string, HostNode>();
    const edges: Edge[] = [];
    const positive = new Set<string>();
    const node = (address: string): HostNode => {
      let n = nodes.get(address);
      if (!n) {
        n = {
          address,
          osHypotheses: [],
          ports: [],
          banners: [],
          agents: [],
          users: [],
          lastSeen: 0,
          absent: true,
        };
        nodes.set(address, n);
      }
      return n;
    };

    for (const asset of this.assetsByKey.values()) {
      for (const host of assetHosts(asset)) {
        node(host);
        if (asset.probability > 0) positive.add(host);
      }
      const at = asset.attributes;
      switch (asset.kind) {
        case "operating-system":
          node(at["host"] as string).osHypotheses.push({
            os: String(at["os"]),
            probability: asset.probability,
          });
          break;
        case "tcp-connectivity": {
          const target = node(at["target"] as string);
          const port = Number(at["port"]);
          const open = asset.probability > 0;
          target.ports.push({ port, open });
          if (open) {
            edges.push({
              source: at["source"] as string,
              target: at["target"] as string,
              kind: "tcp",
              port,
            });
          }
          break;
        }
        case "ip-connectivity":
          if (asset.probability > 0) {
            edges.push({
              source: at["source"] as string,
              target: at["target"] as string,
              kind: "ip",
            });
          }
          break;
        case "banner":
          node(at["host"] as string).banners.push({
            port: Number(at["port"]),
            banner: String(at["banner"]),
          });
          break;
        case "agent-presence":
          if (asset.probability > 0) {
            node(at["host"] as string).agents.push(String(at["agent"]));
          }
          break;
        case "user-list": {
          const users = at["users"];
          if (Array.isArray(users)) {
            node(at["host"] as string).users.push(...users.map(String));
          }
          break;
        }
        default:
          break; // application, filesystem-info: host node alone is enough
      }
    }

    for (const n of nodes.values()) {
      n.absent = !positive.has(n.address);
      n.lastSeen = this.seenAt.get(n.address) ?? 0;
      n.osHypotheses.sort(
        (a, b) => b.probability - a.probability || (a.os < b.os ? -1 : 1),
      );
      n.ports.sort((a, b) => a.port - b.port);
      n.banners.sort((a, b) => a.port - b.port);
      n.agents.sort();
    }
    edges.sort(
      (a, b) =>
        compareAddress(a.source, b.source) ||
        compareAddress(a.target, b.target) ||
        (a.port ?? 0) - (b.port ?? 0),
    );

    return {
      clock: this.clock,
      lastSeq: this.lastSeq,
      nodes: [...nodes.values()].sort((a, b) => compareAddress(a.address, b.address)),
      edges,
      agents: this.agents(),
    };
  }

  private putAsset(asset: Asset, time: number): void {
    this.assetsByKey.set(assetKey(asset), asset);
    for (const host of assetHosts(asset)) {
      const seen = this.seenAt.get(host) ?? 0;
      if (time >= seen) this.seenAt.set(host, time);
    }
  }
}
