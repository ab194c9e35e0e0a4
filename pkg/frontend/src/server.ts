/**
 * HTTP face of the console.  A ConsoleBridge owns the two TCP connections to
 * the control service (requests + event feed) and a KnowledgeStore kept
 * current from events; the express app renders pages and fragments from the
 * store and republishes the feed as server-sent events for the browser.
 */
import * as http from "node:http";
import express from "express";
import { ApiError, ControlClient, EventFeed, type EventRecord } from "./protocol.js";
import { KnowledgeStore, type AgentInfo, type Asset } from "./knowledge.js";
import {
  actionLauncher,
  agentTreeView,
  consolePage,
  envInspectorView,
  eventFeedView,
  paramInputs,
  topologyView,
  type ActionDescriptor,
} from "./views.js";

const FEED_KEEP = 200; // rows the feed fragment shows

export interface BridgeOptions {
  host: string;
  port: number;
  feed?: { pollMs?: number; retryMs?: number };
}

export class ConsoleBridge {
  readonly store = new KnowledgeStore();
  client!: ControlClient;
  feed!: EventFeed;
  private recent: EventRecord[] = [];
  private agentsRefresh: Promise<void> | null = null;

  private constructor(private opts: BridgeOptions) {}

  static async connect(opts: BridgeOptions): Promise<ConsoleBridge> {
    const bridge = new ConsoleBridge(opts);
    bridge.client = await ControlClient.connect(opts.host, opts.port);
    await bridge.resync();
    bridge.feed = new EventFeed(opts.host, opts.port, bridge.client, {
      since: bridge.store.lastSeq,
      ...opts.feed,
    });
    bridge.feed.subscribe((ev) => bridge.onEvent(ev));
    bridge.feed.start();
    return bridge;
  }

  /** Re-fetch the whole knowledge base.  Safe to call at any time; events
   * that raced the fetch re-apply on top as harmless upserts. */
  async resync(): Promise<void> {
    const describe = await this.client.call<Record<string, unknown>>("describe");
    const [assets, agents] = await Promise.all([
      this.client.call<Asset[]>("query_env"),
      this.client.call<AgentInfo[]>("list_agents"),
    ]);
    this.store.load(
      assets,
      agents,
      Number(describe["clock"] ?? 0),
      Number(describe["event_seq"] ?? 0),
    );
  }

  recentEvents(): EventRecord[] {
    return [...this.recent];
  }

  defaultAgent(): string {
    const alive = this.store.agents().filter((a) => a.alive);
    const local = alive.find((a) => a.id === "local");
    return (local ?? alive[0])?.id ?? "local";
  }

  close(): void {
    this.feed?.stop();
    this.client?.close();
  }

  private onEvent(ev: EventRecord): void {
    this.store.applyEvent(ev);
    this.recent.push(ev);
    if (this.recent.length > FEED_KEEP) this.recent.splice(0, this.recent.length - FEED_KEEP);
    // Agent events carry no parent/privilege, so pull the full listing.
    if (ev.category === "agent" && !this.agentsRefresh) {
      this.agentsRefresh = this.client
        .call<AgentInfo[]>("list_agents")
        .then((agents) => this.store.setAgents(agents))
        .catch(() => undefined)
        .finally(() => {
          this.agentsRefresh = null;
        });
    }
  }
}

type Handler = (req: express.Request, res: express.Response) => Promise<void> | void;

function wrap(fn: Handler): express.RequestHandler {
  return async (req, res) => {
    try {
      await fn(req, res);
    } catch (err) {
      if (err instanceof ApiError) {
        res.status(400).json({ error: { code: err.code, message: err.message } });
      } else {
        const message = err instanceof Error ? err.message : String(err);
        res.status(502).json({ error: { code: "backend-error", message } });
      }
    }
  };
}

export function createApp(bridge: ConsoleBridge): express.Express {
  const app = express();
  app.use(express.json());
  const { client, store } = bridge;

  app.get(
    "/",
    wrap(async (_req, res) => {
      const [describe, actions] = await Promise.all([
        client.call<Record<string, unknown>>("describe"),
        client.call<ActionDescriptor[]>("list_actions"),
      ]);
      res
        .type("html")
        .send(
          consolePage({
            title: "redsim console",
            describe,
            view: store.buildView(),
            actions,
            assets: store.assets(),
            events: bridge.recentEvents(),
            selectedAgent: bridge.defaultAgent(),
          }),
        );
    }),
  );

  // Fragments the browser swaps in when the feed reports changes.
  app.get(
    "/fragment/topology",
    wrap((_req, res) => {
      res.type("html").send(topologyView(store.buildView()));
    }),
  );
  app.get(
    "/fragment/agents",
    wrap((_req, res) => {
      res.type("html").send(agentTreeView(store.agents()));
    }),
  );
  app.get(
    "/fragment/launcher",
    wrap(async (req, res) => {
      const actions = await client.call<ActionDescriptor[]>("list_actions");
      // keep the caller's pivot across refreshes when it still exists
      const wanted = req.query["agent"];
      const agents = store.agents();
      const agent = agents.some((a) => a.id === wanted && a.alive)
        ? (wanted as string)
        : bridge.defaultAgent();
      res.type("html").send(actionLauncher(actions, agents, agent));
    }),
  );
  app.get(
    "/fragment/feed",
    wrap((_req, res) => {
      res.type("html").send(eventFeedView(bridge.recentEvents()));
    }),
  );
  app.get(
    "/fragment/env",
    wrap((_req, res) => {
      res.type("html").send(envInspectorView(store.assets()));
    }),
  );
  app.get(
    "/fragment/params",
    wrap((req, res) => {
      res.type("html").send(paramInputs(String(req.query["action"] ?? "")));
    }),
  );

  app.get(
    "/api/describe",
    wrap(async (_req, res) => {
      res.json(await client.call("describe"));
    }),
  );
  app.get(
    "/api/stats",
    wrap(async (_req, res) => {
      res.json(await client.call("stats"));
    }),
  );
  app.get(
    "/api/actions",
    wrap(async (_req, res) => {
      res.json(await client.call("list_actions"));
    }),
  );
  app.get(
    "/api/agents",
    wrap(async (_req, res) => {
      res.json(await client.call("list_agents"));
    }),
  );
  app.get(
    "/api/vulnerabilities",
    wrap(async (_req, res) => {
      res.json(await client.call("list_vulnerabilities"));
    }),
  );
  app.get(
    "/api/noise",
    wrap(async (_req, res) => {
      res.json(await client.call("noise_report"));
    }),
  );
  app.get(
    "/api/view",
    wrap((_req, res) => {
      res.json(store.buildView());
    }),
  );
  app.get(
    "/api/env",
    wrap(async (req, res) => {
      const args: Record<string, unknown> = {};
      if (req.query["kind"] !== undefined) args["kind"] = String(req.query["kind"]);
      if (typeof req.query["attrs"] === "string") {
        args["attrs"] = JSON.parse(req.query["attrs"]);
      }
      res.json(await client.call("query_env", args));
    }),
  );
  app.get(
    "/api/events",
    wrap(async (req, res) => {
      res.json(
        await client.call("events_since", {
          since: Number(req.query["since"] ?? 0),
          limit: Number(req.query["limit"] ?? 1000),
        }),
      );
    }),
  );

  app.post(
    "/api/estimate",
    wrap(async (req, res) => {
      const { agent, action, params } = req.body ?? {};
      res.json(await client.call("estimate_cost", { agent, action, params: params ?? {} }));
    }),
  );
  app.post(
    "/api/dispatch",
    wrap(async (req, res) => {
      const { agent, action, params } = req.body ?? {};
      res.json(await client.call("execute_action", { agent, action, params: params ?? {} }));
    }),
  );

  // Server-sent events; resumes from ?since= or the Last-Event-ID header
  // that browsers send on reconnect.
  app.get(
    "/events",
    wrap(async (req, res) => {
      const since = Number(req.query["since"] ?? req.get("last-event-id") ?? 0);
      res.writeHead(200, {
        "content-type": "text/event-stream",
        "cache-control": "no-cache",
        connection: "keep-alive",
      });
      let last = since;
      const send = (ev: EventRecord) => {
        if (ev.seq <= last) return;
        last = ev.seq;
        res.write(`id: ${ev.seq}\ndata: ${JSON.stringify(ev)}\n\n`);
      };
      const backlog = await client.call<EventRecord[]>("events_since", { since });
      for (const ev of backlog) send(ev);
      const unsubscribe = bridge.feed.subscribe(send);
      req.on("close", unsubscribe);
    }),
  );

  return app;
}

export interface RunningConsole {
  app: express.Express;
  server: http.Server;
  bridge: ConsoleBridge;
  port: number;
  close(): Promise<void>;
}

export async function startConsole(
  backend: BridgeOptions,
  httpPort = 0,
): Promise<RunningConsole> {
  const bridge = await ConsoleBridge.connect(backend);
  const app = createApp(bridge);
  const server = await new Promise<http.Server>((resolve, reject) => {
    const s = app.listen(httpPort, "127.0.0.1");
    s.once("listening", () => resolve(s));
    s.once("error", reject);
  });
  const address = server.address();
  const port = typeof address === "object" && address ? address.port : httpPort;
  return {
    app,
    server,
    bridge,
    port,
    close: () =>
      new Promise<void>((done) => {
        bridge.close();
        server.close(() => done());
        server.closeAllConnections();
      }),
  };
}
